// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "ndgrad/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "common/errors.hpp"
#include "ndgrad/interp.hpp"

namespace etris::nd {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
using Node = detail::Node<T>;

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

template <typename T>
void require_same_shape(const Array<T>& a, const Array<T>& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void require_rank(const Array<T>& a, int rank, const char* op) {
  require(a.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_str(a.shape()));
}

template <typename T>
CMatMap<T> cmat(const Array<T>& a, Eigen::Index rows, Eigen::Index cols) {
  return CMatMap<T>(a.values().data(), rows, cols);
}

template <typename T>
MatMap<T> gmat(const Array<T>& a, Eigen::Index rows, Eigen::Index cols) {
  return MatMap<T>(a.grad_mut().data(), rows, cols);
}

template <typename T>
CMatMap<T> cgrad(const Node<T>& self, Eigen::Index rows, Eigen::Index cols) {
  return CMatMap<T>(self.grad.data(), rows, cols);
}

template <typename T>
void accumulate(const Array<T>& target, const std::vector<T>& grad) {
  if (!target.requires_grad()) return;
  auto g = target.grad_mut();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad[i];
}

template <typename T>
T gaussian_cdf(T x) {
  return T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gaussian_pdf(T x) {
  return std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Columns of an im2col expansion: rows are (c, ky, kx), columns (oy, ox).
template <typename T>
void im2col(const T* in, int channels, int h, int w, int k, int stride, Padding pad, int out_h, int out_w,
            T* cols) {
  const int spatial = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * spatial;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad.begin + ky;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad.begin + kx;
            row[oy * out_w + ox] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w) ? in[(static_cast<std::size_t>(c) * h + iy) * w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int channels, int h, int w, int k, int stride, Padding pad, int out_h, int out_w,
            T* in_grad) {
  const int spatial = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * spatial;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad.begin + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad.begin + kx;
            if (ix < 0 || ix >= w) continue;
            in_grad[(static_cast<std::size_t>(c) * h + iy) * w + ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

struct AttentionDims {
  int lq, lk, d, dv, heads, dh, dvh;
};

template <typename T>
AttentionDims attention_dims(const Array<T>& q, const Array<T>& k, const Array<T>& v, int heads) {
  require_rank(q, 2, "attention");
  require_rank(k, 2, "attention");
  require_rank(v, 2, "attention");
  require(heads >= 1, "attention: heads must be >= 1");
  AttentionDims dims{q.dim(0), k.dim(0), q.dim(1), v.dim(1), heads, 0, 0};
  require(k.dim(1) == dims.d, "attention: query/key width mismatch");
  require(v.dim(0) == dims.lk, "attention: key/value length mismatch");
  require(dims.d % heads == 0 && dims.dv % heads == 0,
          "attention: width " + std::to_string(dims.d) + " not divisible by " + std::to_string(heads) + " heads");
  dims.dh = dims.d / heads;
  dims.dvh = dims.dv / heads;
  return dims;
}

// Softmax(q k^T / sqrt(dh)) per head, [heads, lq, lk].
template <typename T>
std::vector<T> attention_probs(const Array<T>& q, const Array<T>& k, const AttentionDims& dims,
                               AttentionMask mask) {
  const int key_len = mask.key_len < 0 ? dims.lk : std::min(mask.key_len, dims.lk);
  require(key_len >= 1, "attention: key_len must be >= 1");
  const T scale = T(1) / std::sqrt(static_cast<T>(dims.dh));
  std::vector<T> probs(static_cast<std::size_t>(dims.heads) * dims.lq * dims.lk, T(0));
  for (int g = 0; g < dims.heads; ++g) {
    CStridedMap<T> qg(q.values().data() + g * dims.dh, dims.lq, dims.dh, Eigen::OuterStride<>(dims.d));
    CStridedMap<T> kg(k.values().data() + g * dims.dh, dims.lk, dims.dh, Eigen::OuterStride<>(dims.d));
    MatMap<T> pg(probs.data() + static_cast<std::size_t>(g) * dims.lq * dims.lk, dims.lq, dims.lk);
    pg.noalias() = qg * kg.transpose();
    for (int i = 0; i < dims.lq; ++i) {
      const int limit = mask.causal ? std::min(key_len, i + 1) : key_len;
      T max_score = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < limit; ++j) max_score = std::max(max_score, pg(i, j) * scale);
      T total = 0;
      for (int j = 0; j < dims.lk; ++j) {
        if (j < limit) {
          pg(i, j) = std::exp(pg(i, j) * scale - max_score);
          total += pg(i, j);
        } else {
          pg(i, j) = 0;
        }
      }
      for (int j = 0; j < limit; ++j) pg(i, j) /= total;
    }
  }
  return probs;
}

}  // namespace

template <typename T>
Array<T> add(const Array<T>& a, const Array<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Array<T>::record(a.shape(), std::move(out), {a, b}, [a, b](const Node<T>& self) mutable {
    accumulate(a, self.grad);
    accumulate(b, self.grad);
  });
}

template <typename T>
Array<T> sub(const Array<T>& a, const Array<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Array<T>::record(a.shape(), std::move(out), {a, b}, [a, b](const Node<T>& self) mutable {
    accumulate(a, self.grad);
    if (b.requires_grad()) {
      auto g = b.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Array<T> mul(const Array<T>& a, const Array<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Array<T>::record(a.shape(), std::move(out), {a, b}, [a, b](const Node<T>& self) mutable {
    if (a.requires_grad()) {
      auto g = a.grad_mut();
      auto bv = b.values();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad_mut();
      auto av = a.values();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Array<T> scale(const Array<T>& a, T factor) {
  std::vector<T> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return Array<T>::record(a.shape(), std::move(out), {a}, [a, factor](const Node<T>& self) mutable {
    auto g = a.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Array<T> add_rowwise(const Array<T>& x, const Array<T>& v) {
  require_rank(x, 2, "add_rowwise");
  require(v.size() == static_cast<std::size_t>(x.dim(1)), "add_rowwise: vector length mismatch");
  const int rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(x.values().begin(), x.values().end());
  auto vv = v.values();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(r) * cols + c] += vv[c];
  return Array<T>::record(x.shape(), std::move(out), {x, v}, [x, v, rows, cols](const Node<T>& self) mutable {
    accumulate(x, self.grad);
    if (v.requires_grad()) {
      auto g = v.grad_mut();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) g[c] += self.grad[static_cast<std::size_t>(r) * cols + c];
    }
  });
}

template <typename T>
Array<T> mul_rowwise(const Array<T>& x, const Array<T>& v) {
  require_rank(x, 2, "mul_rowwise");
  require(v.size() == static_cast<std::size_t>(x.dim(1)), "mul_rowwise: vector length mismatch");
  const int rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(x.size());
  auto xv = x.values();
  auto vv = v.values();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
      out[i] = xv[i] * vv[c];
    }
  return Array<T>::record(x.shape(), std::move(out), {x, v}, [x, v, rows, cols](const Node<T>& self) mutable {
    auto xv = x.values();
    auto vv = v.values();
    if (x.requires_grad()) {
      auto g = x.grad_mut();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * cols + c;
          g[i] += self.grad[i] * vv[c];
        }
    }
    if (v.requires_grad()) {
      auto g = v.grad_mut();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * cols + c;
          g[c] += self.grad[i] * xv[i];
        }
    }
  });
}

template <typename T>
Array<T> matmul(const Array<T>& a, const Array<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  MatMap<T>(out.data(), m, n).noalias() = cmat(a, m, k) * cmat(b, k, n);
  return Array<T>::record({m, n}, std::move(out), {a, b}, [a, b, m, k, n](const Node<T>& self) mutable {
    auto dy = cgrad(self, m, n);
    if (a.requires_grad()) gmat(a, m, k).noalias() += dy * cmat(b, k, n).transpose();
    if (b.requires_grad()) gmat(b, k, n).noalias() += cmat(a, m, k).transpose() * dy;
  });
}

template <typename T>
Array<T> linear(const Array<T>& x, const Array<T>& weight, const OptArray<T>& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const int m = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  require(weight.dim(1) == in, "linear: weight " + shape_str(weight.shape()) + " does not accept input " +
                                   shape_str(x.shape()));
  if (bias) require(bias->size() == static_cast<std::size_t>(out_dim), "linear: bias length mismatch");
  std::vector<T> out(static_cast<std::size_t>(m) * out_dim);
  MatMap<T> y(out.data(), m, out_dim);
  y.noalias() = cmat(x, m, in) * cmat(weight, out_dim, in).transpose();
  if (bias) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias->values().data(), out_dim);
    y.rowwise() += b;
  }
  std::vector<Array<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  Array<T> b = bias ? *bias : Array<T>();
  return Array<T>::record({m, out_dim}, std::move(out), inputs,
                          [x, weight, b, m, in, out_dim](const Node<T>& self) mutable {
                            auto dy = cgrad(self, m, out_dim);
                            if (x.requires_grad()) gmat(x, m, in).noalias() += dy * cmat(weight, out_dim, in);
                            if (weight.requires_grad())
                              gmat(weight, out_dim, in).noalias() += dy.transpose() * cmat(x, m, in);
                            if (b.defined() && b.requires_grad()) {
                              Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(b.grad_mut().data(), out_dim);
                              gb += dy.colwise().sum();
                            }
                          });
}

template <typename T>
Array<T> transpose(const Array<T>& x) {
  require_rank(x, 2, "transpose");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<T> out(x.size());
  MatMap<T>(out.data(), n, m) = cmat(x, m, n).transpose();
  return Array<T>::record({n, m}, std::move(out), {x}, [x, m, n](const Node<T>& self) mutable {
    gmat(x, m, n) += cgrad(self, n, m).transpose();
  });
}

template <typename T>
Array<T> reshape(const Array<T>& x, Shape shape) {
  require(numel(shape) == x.size(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<T> out(x.values().begin(), x.values().end());
  return Array<T>::record(std::move(shape), std::move(out), {x},
                          [x](const Node<T>& self) mutable { accumulate(x, self.grad); });
}

template <typename T>
Array<T> concat(const std::vector<Array<T>>& parts) {
  require(!parts.empty(), "concat: no inputs");
  Shape shape = parts.front().shape();
  const Shape trailing(shape.begin() + 1, shape.end());
  int rows = 0;
  std::vector<T> out;
  for (const auto& p : parts) {
    require(Shape(p.shape().begin() + 1, p.shape().end()) == trailing,
            "concat: trailing shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(shape));
    rows += p.dim(0);
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  shape[0] = rows;
  return Array<T>::record(std::move(shape), std::move(out), parts, [parts](const Node<T>& self) mutable {
    std::size_t offset = 0;
    for (auto& p : parts) {
      if (p.requires_grad()) {
        auto g = p.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      }
      offset += p.size();
    }
  });
}

template <typename T>
Array<T> slice(const Array<T>& x, int begin, int end) {
  require(0 <= begin && begin < end && end <= x.dim(0),
          "slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " + shape_str(x.shape()));
  Shape shape = x.shape();
  const std::size_t row = x.size() / static_cast<std::size_t>(shape[0]);
  shape[0] = end - begin;
  std::vector<T> out(x.values().begin() + static_cast<std::ptrdiff_t>(row * begin),
                     x.values().begin() + static_cast<std::ptrdiff_t>(row * end));
  return Array<T>::record(std::move(shape), std::move(out), {x}, [x, row, begin](const Node<T>& self) mutable {
    auto g = x.grad_mut();
    const std::size_t offset = row * static_cast<std::size_t>(begin);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
  });
}

template <typename T>
Array<T> gather_rows(const Array<T>& table, const std::vector<int>& ids) {
  require_rank(table, 2, "gather_rows");
  require(!ids.empty(), "gather_rows: empty id list");
  const int vocab = table.dim(0), width = table.dim(1);
  std::vector<T> out;
  out.reserve(ids.size() * static_cast<std::size_t>(width));
  for (int id : ids) {
    require(id >= 0 && id < vocab, "gather_rows: id " + std::to_string(id) + " out of range");
    auto row = table.values().subspan(static_cast<std::size_t>(id) * width, static_cast<std::size_t>(width));
    out.insert(out.end(), row.begin(), row.end());
  }
  return Array<T>::record({static_cast<int>(ids.size()), width}, std::move(out), {table},
                          [table, ids, width](const Node<T>& self) mutable {
                            auto g = table.grad_mut();
                            for (std::size_t r = 0; r < ids.size(); ++r)
                              for (int c = 0; c < width; ++c)
                                g[static_cast<std::size_t>(ids[r]) * width + c] += self.grad[r * width + c];
                          });
}

template <typename T>
Array<T> layer_norm(const Array<T>& x, const Array<T>& gamma, const Array<T>& beta, T eps) {
  const int n = x.dim(-1);
  require(gamma.size() == static_cast<std::size_t>(n) && beta.size() == static_cast<std::size_t>(n),
          "layer_norm: affine parameters must match the last axis");
  const std::size_t rows = x.size() / static_cast<std::size_t>(n);
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * n;
    T mu = 0;
    for (int i = 0; i < n; ++i) mu += row[i];
    mu /= n;
    T var = 0;
    for (int i = 0; i < n; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= n;
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (int i = 0; i < n; ++i) {
      const std::size_t idx = r * n + i;
      xhat[idx] = (row[i] - mu) * rstd[r];
      out[idx] = xhat[idx] * gv[i] + bv[i];
    }
  }
  auto saved = std::make_shared<std::pair<std::vector<T>, std::vector<T>>>(std::move(xhat), std::move(rstd));
  return Array<T>::record(x.shape(), std::move(out), {x, gamma, beta},
                          [x, gamma, beta, saved, rows, n](const Node<T>& self) mutable {
                            const auto& xh = saved->first;
                            const auto& rs = saved->second;
                            auto gv = gamma.values();
                            if (gamma.requires_grad()) {
                              auto gg = gamma.grad_mut();
                              for (std::size_t r = 0; r < rows; ++r)
                                for (int i = 0; i < n; ++i) gg[i] += self.grad[r * n + i] * xh[r * n + i];
                            }
                            if (beta.requires_grad()) {
                              auto gb = beta.grad_mut();
                              for (std::size_t r = 0; r < rows; ++r)
                                for (int i = 0; i < n; ++i) gb[i] += self.grad[r * n + i];
                            }
                            if (x.requires_grad()) {
                              auto gx = x.grad_mut();
                              for (std::size_t r = 0; r < rows; ++r) {
                                T sum_d = 0, sum_dx = 0;
                                for (int i = 0; i < n; ++i) {
                                  const T d = self.grad[r * n + i] * gv[i];
                                  sum_d += d;
                                  sum_dx += d * xh[r * n + i];
                                }
                                for (int i = 0; i < n; ++i) {
                                  const T d = self.grad[r * n + i] * gv[i];
                                  gx[r * n + i] += rs[r] / n * (n * d - sum_d - xh[r * n + i] * sum_dx);
                                }
                              }
                            }
                          });
}

template <typename T>
Array<T> softmax(const Array<T>& x) {
  const int n = x.dim(-1);
  const std::size_t rows = x.size() / static_cast<std::size_t>(n);
  auto xv = x.values();
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * n;
    T mx = row[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    T total = 0;
    for (int i = 0; i < n; ++i) {
      out[r * n + i] = std::exp(row[i] - mx);
      total += out[r * n + i];
    }
    for (int i = 0; i < n; ++i) out[r * n + i] /= total;
  }
  return Array<T>::record(x.shape(), std::move(out), {x}, [x, rows, n](const Node<T>& self) mutable {
    auto g = x.grad_mut();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (int i = 0; i < n; ++i) dot += self.grad[r * n + i] * self.values[r * n + i];
      for (int i = 0; i < n; ++i) g[r * n + i] += self.values[r * n + i] * (self.grad[r * n + i] - dot);
    }
  });
}

template <typename T>
Array<T> sigmoid(const Array<T>& x) {
  std::vector<T> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(xv[i]);
  return Array<T>::record(x.shape(), std::move(out), {x}, [x](const Node<T>& self) mutable {
    auto g = x.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = self.values[i];
      g[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Array<T> gelu(const Array<T>& x) {
  std::vector<T> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * gaussian_cdf(xv[i]);
  return Array<T>::record(x.shape(), std::move(out), {x}, [x](const Node<T>& self) mutable {
    auto g = x.grad_mut();
    auto xv = x.values();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * (gaussian_cdf(xv[i]) + xv[i] * gaussian_pdf(xv[i]));
  });
}

template <typename T>
Array<T> relu(const Array<T>& x) {
  std::vector<T> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0 ? xv[i] : T(0);
  return Array<T>::record(x.shape(), std::move(out), {x}, [x](const Node<T>& self) mutable {
    auto g = x.grad_mut();
    auto xv = x.values();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0) g[i] += self.grad[i];
  });
}

template <typename T>
Array<T> sum(const Array<T>& x) {
  T total = 0;
  for (T v : x.values()) total += v;
  return Array<T>::record({1}, {total}, {x}, [x](const Node<T>& self) mutable {
    auto g = x.grad_mut();
    for (auto& gi : g) gi += self.grad[0];
  });
}

template <typename T>
Array<T> mean(const Array<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Array<T> mean_axis(const Array<T>& x, int axis) {
  if (axis < 0) axis += x.rank();
  require(axis >= 0 && axis < x.rank(), "mean_axis: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.dim(i));
  for (int i = axis + 1; i < x.rank(); ++i) inner *= static_cast<std::size_t>(x.dim(i));
  const int n = x.dim(axis);
  Shape shape;
  for (int i = 0; i < x.rank(); ++i)
    if (i != axis) shape.push_back(x.dim(i));
  if (shape.empty()) shape.push_back(1);
  std::vector<T> out(outer * inner, T(0));
  auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (int a = 0; a < n; ++a)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * n + a) * inner + i];
  for (auto& v : out) v /= n;
  return Array<T>::record(std::move(shape), std::move(out), {x}, [x, outer, inner, n](const Node<T>& self) mutable {
    auto g = x.grad_mut();
    for (std::size_t o = 0; o < outer; ++o)
      for (int a = 0; a < n; ++a)
        for (std::size_t i = 0; i < inner; ++i) g[(o * n + a) * inner + i] += self.grad[o * inner + i] / n;
  });
}

template <typename T>
Array<T> conv2d(const Array<T>& input, const Array<T>& weight, const OptArray<T>& bias, int stride,
                Padding pad) {
  require_rank(input, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int c_out = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == c_in, "conv2d: weight " + shape_str(weight.shape()) + " expects " +
                                     std::to_string(weight.dim(1)) + " input channels, got " + std::to_string(c_in));
  require(weight.dim(3) == k, "conv2d: kernel must be square");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(pad.begin >= 0 && pad.end >= 0, "conv2d: negative padding");
  require(h + pad.begin + pad.end >= k && w + pad.begin + pad.end >= k, "conv2d: kernel larger than padded input");
  if (bias) require(bias->size() == static_cast<std::size_t>(c_out), "conv2d: bias length mismatch");
  const int out_h = (h + pad.begin + pad.end - k) / stride + 1;
  const int out_w = (w + pad.begin + pad.end - k) / stride + 1;
  const int spatial = out_h * out_w;
  const int patch = c_in * k * k;

  const bool pointwise = k == 1 && stride == 1 && pad.begin == 0 && pad.end == 0;
  auto cols = std::make_shared<std::vector<T>>();
  if (!pointwise) {
    cols->resize(static_cast<std::size_t>(patch) * spatial);
    im2col(input.values().data(), c_in, h, w, k, stride, pad, out_h, out_w, cols->data());
  }
  const T* col_data = pointwise ? input.values().data() : cols->data();

  std::vector<T> out(static_cast<std::size_t>(c_out) * spatial);
  MatMap<T> y(out.data(), c_out, spatial);
  y.noalias() = cmat(weight, c_out, patch) * CMatMap<T>(col_data, patch, spatial);
  if (bias) {
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias->values().data(), c_out);
    y.colwise() += b;
  }

  std::vector<Array<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  Array<T> b = bias ? *bias : Array<T>();
  return Array<T>::record(
      {c_out, out_h, out_w}, std::move(out), inputs,
      [input, weight, b, cols, pointwise, c_in, h, w, c_out, k, stride, pad, out_h, out_w, spatial,
       patch](const Node<T>& self) mutable {
        auto dy = cgrad(self, c_out, spatial);
        if (weight.requires_grad()) {
          const T* col_data = pointwise ? input.values().data() : cols->data();
          gmat(weight, c_out, patch).noalias() += dy * CMatMap<T>(col_data, patch, spatial).transpose();
        }
        if (b.defined() && b.requires_grad()) {
          Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(b.grad_mut().data(), c_out);
          gb += dy.rowwise().sum();
        }
        if (input.requires_grad()) {
          if (pointwise) {
            gmat(input, patch, spatial).noalias() += cmat(weight, c_out, patch).transpose() * dy;
          } else {
            std::vector<T> dcols(static_cast<std::size_t>(patch) * spatial);
            MatMap<T>(dcols.data(), patch, spatial).noalias() = cmat(weight, c_out, patch).transpose() * dy;
            col2im(dcols.data(), c_in, h, w, k, stride, pad, out_h, out_w, input.grad_mut().data());
          }
        }
      });
}

template <typename T>
Array<T> transposed_conv2d(const Array<T>& input, const Array<T>& weight, const OptArray<T>& bias, int stride) {
  require_rank(input, 3, "transposed_conv2d");
  require_rank(weight, 4, "transposed_conv2d");
  const int k = weight.dim(2);
  require(k == 2 && weight.dim(3) == 2 && stride == 2,
          "transposed_conv2d: only kernel 2 with stride 2 is supported (got kernel " + std::to_string(k) +
              ", stride " + std::to_string(stride) + ")");
  const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  require(weight.dim(0) == c_in, "transposed_conv2d: weight " + shape_str(weight.shape()) + " expects " +
                                     std::to_string(weight.dim(0)) + " input channels, got " + std::to_string(c_in));
  const int c_out = weight.dim(1);
  if (bias) require(bias->size() == static_cast<std::size_t>(c_out), "transposed_conv2d: bias length mismatch");
  const int hw = h * w;
  const int taps = c_out * 4;
  const int out_h = 2 * h, out_w = 2 * w;

  // z[(co,ky,kx), (y,x)] = sum_ci w[ci,(co,ky,kx)] x[ci,(y,x)]
  RowMat<T> z = cmat(weight, c_in, taps).transpose() * cmat(input, c_in, hw);
  std::vector<T> out(static_cast<std::size_t>(c_out) * out_h * out_w);
  for (int co = 0; co < c_out; ++co) {
    const T b = bias ? bias->values()[static_cast<std::size_t>(co)] : T(0);
    for (int ky = 0; ky < 2; ++ky)
      for (int kx = 0; kx < 2; ++kx) {
        const int row = (co * 2 + ky) * 2 + kx;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            out[(static_cast<std::size_t>(co) * out_h + 2 * y + ky) * out_w + 2 * x + kx] = z(row, y * w + x) + b;
      }
  }
  std::vector<Array<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  Array<T> b = bias ? *bias : Array<T>();
  return Array<T>::record({c_out, out_h, out_w}, std::move(out), inputs,
                          [input, weight, b, c_in, c_out, h, w, hw, taps, out_h, out_w](const Node<T>& self) mutable {
                            RowMat<T> dz(taps, hw);
                            for (int co = 0; co < c_out; ++co)
                              for (int ky = 0; ky < 2; ++ky)
                                for (int kx = 0; kx < 2; ++kx) {
                                  const int row = (co * 2 + ky) * 2 + kx;
                                  for (int y = 0; y < h; ++y)
                                    for (int x = 0; x < w; ++x)
                                      dz(row, y * w + x) =
                                          self.grad[(static_cast<std::size_t>(co) * out_h + 2 * y + ky) * out_w +
                                                    2 * x + kx];
                                }
                            if (input.requires_grad())
                              gmat(input, c_in, hw).noalias() += cmat(weight, c_in, taps) * dz;
                            if (weight.requires_grad())
                              gmat(weight, c_in, taps).noalias() += cmat(input, c_in, hw) * dz.transpose();
                            if (b.defined() && b.requires_grad()) {
                              auto gb = b.grad_mut();
                              for (int co = 0; co < c_out; ++co) gb[co] += dz.middleRows(co * 4, 4).sum();
                            }
                          });
}

template <typename T>
Array<T> resize_bilinear(const Array<T>& x, int out_h, int out_w) {
  require_rank(x, 3, "resize_bilinear");
  require(out_h >= 1 && out_w >= 1, "resize_bilinear: output size must be positive");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto ty = std::make_shared<std::vector<LinearTap>>(bilinear_taps(h, out_h));
  auto tx = std::make_shared<std::vector<LinearTap>>(bilinear_taps(w, out_w));
  std::vector<T> out(static_cast<std::size_t>(c) * out_h * out_w);
  auto xv = x.values();
  for (int ch = 0; ch < c; ++ch) {
    const T* src = xv.data() + static_cast<std::size_t>(ch) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(ch) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const LinearTap& a = (*ty)[oy];
      for (int ox = 0; ox < out_w; ++ox) {
        const LinearTap& b = (*tx)[ox];
        dst[oy * out_w + ox] = static_cast<T>(a.w0 * (b.w0 * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1]) +
                                              a.w1 * (b.w0 * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1]));
      }
    }
  }
  return Array<T>::record({c, out_h, out_w}, std::move(out), {x},
                          [x, ty, tx, c, h, w, out_h, out_w](const Node<T>& self) mutable {
                            auto g = x.grad_mut();
                            for (int ch = 0; ch < c; ++ch) {
                              T* dst = g.data() + static_cast<std::size_t>(ch) * h * w;
                              const T* up = self.grad.data() + static_cast<std::size_t>(ch) * out_h * out_w;
                              for (int oy = 0; oy < out_h; ++oy) {
                                const LinearTap& a = (*ty)[oy];
                                for (int ox = 0; ox < out_w; ++ox) {
                                  const LinearTap& b = (*tx)[ox];
                                  const T d = up[oy * out_w + ox];
                                  dst[a.i0 * w + b.i0] += static_cast<T>(a.w0 * b.w0) * d;
                                  dst[a.i0 * w + b.i1] += static_cast<T>(a.w0 * b.w1) * d;
                                  dst[a.i1 * w + b.i0] += static_cast<T>(a.w1 * b.w0) * d;
                                  dst[a.i1 * w + b.i1] += static_cast<T>(a.w1 * b.w1) * d;
                                }
                              }
                            }
                          });
}

template <typename T>
Array<T> upsample_nearest(const Array<T>& x, int factor) {
  require_rank(x, 3, "upsample_nearest");
  require(factor >= 1, "upsample_nearest: factor must be >= 1");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int out_h = h * factor, out_w = w * factor;
  std::vector<T> out(static_cast<std::size_t>(c) * out_h * out_w);
  auto xv = x.values();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < out_h; ++y)
      for (int xx = 0; xx < out_w; ++xx)
        out[(static_cast<std::size_t>(ch) * out_h + y) * out_w + xx] =
            xv[(static_cast<std::size_t>(ch) * h + y / factor) * w + xx / factor];
  return Array<T>::record({c, out_h, out_w}, std::move(out), {x},
                          [x, c, h, w, out_h, out_w, factor](const Node<T>& self) mutable {
                            auto g = x.grad_mut();
                            for (int ch = 0; ch < c; ++ch)
                              for (int y = 0; y < out_h; ++y)
                                for (int xx = 0; xx < out_w; ++xx)
                                  g[(static_cast<std::size_t>(ch) * h + y / factor) * w + xx / factor] +=
                                      self.grad[(static_cast<std::size_t>(ch) * out_h + y) * out_w + xx];
                          });
}

template <typename T>
Array<T> map_to_tokens(const Array<T>& x) {
  require_rank(x, 3, "map_to_tokens");
  return transpose(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

template <typename T>
Array<T> tokens_to_map(const Array<T>& tokens, int h, int w) {
  require_rank(tokens, 2, "tokens_to_map");
  require(tokens.dim(0) == h * w, "tokens_to_map: token count does not match grid");
  return reshape(transpose(tokens), {tokens.dim(1), h, w});
}

template <typename T>
std::vector<T> attention_weights(const Array<T>& q, const Array<T>& k, int heads, AttentionMask mask) {
  const auto dims = attention_dims(q, k, k, heads);
  return attention_probs(q, k, dims, mask);
}

template <typename T>
Array<T> attention(const Array<T>& q, const Array<T>& k, const Array<T>& v, int heads, AttentionMask mask) {
  const auto dims = attention_dims(q, k, v, heads);
  auto probs = std::make_shared<std::vector<T>>(attention_probs(q, k, dims, mask));
  std::vector<T> out(static_cast<std::size_t>(dims.lq) * dims.dv);
  for (int g = 0; g < dims.heads; ++g) {
    CMatMap<T> pg(probs->data() + static_cast<std::size_t>(g) * dims.lq * dims.lk, dims.lq, dims.lk);
    CStridedMap<T> vg(v.values().data() + g * dims.dvh, dims.lk, dims.dvh, Eigen::OuterStride<>(dims.dv));
    StridedMap<T> og(out.data() + g * dims.dvh, dims.lq, dims.dvh, Eigen::OuterStride<>(dims.dv));
    og.noalias() = pg * vg;
  }
  return Array<T>::record({dims.lq, dims.dv}, std::move(out), {q, k, v}, [q, k, v, probs, dims](const Node<T>& self) mutable {
    const T scale = T(1) / std::sqrt(static_cast<T>(dims.dh));
    RowMat<T> dp(dims.lq, dims.lk);
    for (int g = 0; g < dims.heads; ++g) {
      CMatMap<T> pg(probs->data() + static_cast<std::size_t>(g) * dims.lq * dims.lk, dims.lq, dims.lk);
      CStridedMap<T> dog(self.grad.data() + g * dims.dvh, dims.lq, dims.dvh, Eigen::OuterStride<>(dims.dv));
      CStridedMap<T> vg(v.values().data() + g * dims.dvh, dims.lk, dims.dvh, Eigen::OuterStride<>(dims.dv));
      if (v.requires_grad()) {
        StridedMap<T> gv(v.grad_mut().data() + g * dims.dvh, dims.lk, dims.dvh, Eigen::OuterStride<>(dims.dv));
        gv.noalias() += pg.transpose() * dog;
      }
      if (!q.requires_grad() && !k.requires_grad()) continue;
      dp.noalias() = dog * vg.transpose();
      // dS = P * (dP - rowsum(dP * P)), then the 1/sqrt(dh) scale
      for (int i = 0; i < dims.lq; ++i) {
        T dot = 0;
        for (int j = 0; j < dims.lk; ++j) dot += dp(i, j) * pg(i, j);
        for (int j = 0; j < dims.lk; ++j) dp(i, j) = pg(i, j) * (dp(i, j) - dot) * scale;
      }
      if (q.requires_grad()) {
        CStridedMap<T> kg(k.values().data() + g * dims.dh, dims.lk, dims.dh, Eigen::OuterStride<>(dims.d));
        StridedMap<T> gq(q.grad_mut().data() + g * dims.dh, dims.lq, dims.dh, Eigen::OuterStride<>(dims.d));
        gq.noalias() += dp * kg;
      }
      if (k.requires_grad()) {
        CStridedMap<T> qg(q.values().data() + g * dims.dh, dims.lq, dims.dh, Eigen::OuterStride<>(dims.d));
        StridedMap<T> gk(k.grad_mut().data() + g * dims.dh, dims.lk, dims.dh, Eigen::OuterStride<>(dims.d));
        gk.noalias() += dp.transpose() * qg;
      }
    }
  });
}

#define ETRIS_INSTANTIATE_OPS(T)                                                                            \
  template Array<T> add(const Array<T>&, const Array<T>&);                                                  \
  template Array<T> sub(const Array<T>&, const Array<T>&);                                                  \
  template Array<T> mul(const Array<T>&, const Array<T>&);                                                  \
  template Array<T> scale(const Array<T>&, T);                                                              \
  template Array<T> add_rowwise(const Array<T>&, const Array<T>&);                                          \
  template Array<T> mul_rowwise(const Array<T>&, const Array<T>&);                                          \
  template Array<T> matmul(const Array<T>&, const Array<T>&);                                               \
  template Array<T> linear(const Array<T>&, const Array<T>&, const OptArray<T>&);                           \
  template Array<T> transpose(const Array<T>&);                                                             \
  template Array<T> reshape(const Array<T>&, Shape);                                                        \
  template Array<T> concat(const std::vector<Array<T>>&);                                                   \
  template Array<T> slice(const Array<T>&, int, int);                                                       \
  template Array<T> gather_rows(const Array<T>&, const std::vector<int>&);                                  \
  template Array<T> layer_norm(const Array<T>&, const Array<T>&, const Array<T>&, T);                       \
  template Array<T> softmax(const Array<T>&);                                                               \
  template Array<T> sigmoid(const Array<T>&);                                                               \
  template Array<T> gelu(const Array<T>&);                                                                  \
  template Array<T> relu(const Array<T>&);                                                                  \
  template Array<T> sum(const Array<T>&);                                                                   \
  template Array<T> mean(const Array<T>&);                                                                  \
  template Array<T> mean_axis(const Array<T>&, int);                                                        \
  template Array<T> conv2d(const Array<T>&, const Array<T>&, const OptArray<T>&, int, Padding);             \
  template Array<T> transposed_conv2d(const Array<T>&, const Array<T>&, const OptArray<T>&, int);           \
  template Array<T> resize_bilinear(const Array<T>&, int, int);                                             \
  template Array<T> upsample_nearest(const Array<T>&, int);                                                 \
  template Array<T> map_to_tokens(const Array<T>&);                                                         \
  template Array<T> tokens_to_map(const Array<T>&, int, int);                                               \
  template Array<T> attention(const Array<T>&, const Array<T>&, const Array<T>&, int, AttentionMask);       \
  template std::vector<T> attention_weights(const Array<T>&, const Array<T>&, int, AttentionMask);

ETRIS_INSTANTIATE_OPS(float)
ETRIS_INSTANTIATE_OPS(double)

#undef ETRIS_INSTANTIATE_OPS

}  // namespace etris::nd
