// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "common/errors.hpp"
#include "harness/verify.hpp"
#include "ndgrad/gradcheck.hpp"
#include "ndgrad/ops.hpp"
#include "ndgrad/params.hpp"
#include "ndgrad/rng.hpp"

namespace nd = etris::nd;
using A = nd::Array<double>;

namespace {

A random(nd::Shape shape, nd::Rng& rng, bool grad = false) {
  std::vector<double> v(nd::numel(shape));
  for (double& x : v) x = rng.uniform(-1, 1);
  return A(std::move(shape), std::move(v), grad);
}

// Direct nested-loop convolution with symmetric padding.
std::vector<double> conv_oracle(const A& x, const A& w, const std::vector<double>& bias, int stride, int pad) {
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(cout) * oh * ow);
  for (int o = 0; o < cout; ++o)
    for (int y = 0; y < oh; ++y)
      for (int xo = 0; xo < ow; ++xo) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (int c = 0; c < cin; ++c)
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
              const int yy = y * stride + i - pad, xx = xo * stride + j - pad;
              if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
              acc += x[(static_cast<std::size_t>(c) * h + yy) * wd + xx] *
                     w[((static_cast<std::size_t>(o) * cin + c) * k + i) * k + j];
            }
        out[(static_cast<std::size_t>(o) * oh + y) * ow + xo] = acc;
      }
  return out;
}

}  // namespace

TEST(Array, ShapeAndValueCountMustAgree) {
  EXPECT_THROW(A({2, 3}, std::vector<double>(5)), etris::ConfigError);
  EXPECT_THROW(A::zeros({2, 0}), etris::ConfigError);
  A a({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(a.size(), 6u);
  EXPECT_EQ(a.dim(-1), 3);
}

TEST(Array, BackwardAccumulatesIntoLeaves) {
  A x({3}, {1, 2, 3}, true);
  A y = nd::sum(nd::mul(x, x));
  y.backward();
  ASSERT_TRUE(x.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[0], 2);
  EXPECT_DOUBLE_EQ(x.grad()[2], 6);
  A z = nd::sum(x);
  z.backward();
  EXPECT_DOUBLE_EQ(x.grad()[1], 5);  // 4 + 1
}

TEST(Array, OpsDoNotMutateInputs) {
  nd::Rng rng(3);
  A a = random({2, 3, 3}, rng, true), w = random({2, 2, 3, 3}, rng, true);
  const std::vector<double> before(a.values().begin(), a.values().end());
  A out = nd::sum(nd::conv2d(a, w, nd::OptArray<double>{}, 1, 1));
  out.backward();
  EXPECT_EQ(before, std::vector<double>(a.values().begin(), a.values().end()));
}

TEST(Conv2d, SumOfFourOnes) {
  A x = A::full({1, 4, 4}, 1.0), w = A::full({1, 1, 2, 2}, 1.0);
  A y = nd::conv2d(x, w, nd::OptArray<double>{}, 2, 0);
  ASSERT_EQ(y.shape(), (nd::Shape{1, 2, 2}));
  for (double v : y.values()) EXPECT_EQ(v, 4.0);
}

TEST(Conv2d, IdentityKernel) {
  nd::Rng rng(1);
  A x = random({1, 4, 4}, rng), w = A::full({1, 1, 1, 1}, 1.0);
  A y = nd::conv2d(x, w, nd::OptArray<double>{}, 1, 0);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  nd::Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    A x = random({2, 6, 6}, rng), w = random({3, 2, 3, 3}, rng), b = random({3}, rng);
    A y = nd::conv2d(x, w, nd::OptArray<double>(b), 1, 1);
    const auto ref = conv_oracle(x, w, {b.values().begin(), b.values().end()}, 1, 1);
    ASSERT_EQ(y.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-6);
  }
  A x = random({3, 7, 7}, rng), w = random({2, 3, 3, 3}, rng);
  A y = nd::conv2d(x, w, nd::OptArray<double>{}, 2, 1);
  const auto ref = conv_oracle(x, w, {}, 2, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-6);
}

TEST(Conv2d, ChannelMismatchIsConfigError) {
  A x = A::zeros({2, 4, 4}), w = A::zeros({1, 3, 1, 1});
  EXPECT_THROW(nd::conv2d(x, w, nd::OptArray<double>{}, 1, 0), etris::ConfigError);
}

TEST(TransposedConv, DisjointTiles) {
  A x = A::full({1, 2, 2}, 1.0), w = A::full({1, 1, 2, 2}, 1.0);
  A y = nd::transposed_conv2d(x, w, nd::OptArray<double>{}, 2);
  ASSERT_EQ(y.shape(), (nd::Shape{1, 4, 4}));
  for (double v : y.values()) EXPECT_EQ(v, 1.0);
}

TEST(TransposedConv, ShapeDoubles) {
  A x = A::zeros({8, 13, 13}), w = A::zeros({8, 8, 2, 2});
  EXPECT_EQ(nd::transposed_conv2d(x, w, nd::OptArray<double>{}, 2).shape(), (nd::Shape{8, 26, 26}));
}

TEST(TransposedConv, UnsupportedStrideIsConfigError) {
  A x = A::zeros({1, 2, 2}), w = A::zeros({1, 1, 3, 3});
  EXPECT_THROW(nd::transposed_conv2d(x, w, nd::OptArray<double>{}, 3), etris::ConfigError);
}

// The transposed convolution is the input-gradient of the matching strided
// convolution: for y = conv(u, W) and upstream g, dL/du = deconv(g, W).
TEST(TransposedConv, EqualsConvInputGradient) {
  nd::Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const int cin = 3, cout = 2, h = 4;
    A g = random({cin, h, h}, rng);          // deconv input
    A w = random({cin, cout, 2, 2}, rng);    // deconv weight [C_in, C_out, 2, 2]
    A u = random({cout, 2 * h, 2 * h}, rng, true);
    // conv weight [C_out=cin, C_in=cout, 2, 2] is the same buffer
    A wc({cin, cout, 2, 2}, {w.values().begin(), w.values().end()});
    A y = nd::conv2d(u, wc, nd::OptArray<double>{}, 2, 0);
    nd::sum(nd::mul(y, g)).backward();
    A d = nd::transposed_conv2d(g, w, nd::OptArray<double>{}, 2);
    ASSERT_EQ(d.size(), u.size());
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d[i], u.grad()[i], 1e-6);
  }
}

TEST(Attention, SingleKeyWeightsAreOne) {
  nd::Rng rng(4);
  A q = random({5, 8}, rng), k = random({1, 8}, rng);
  const auto w = nd::attention_weights(q, k, 2);
  for (double v : w) EXPECT_EQ(v, 1.0);
}

TEST(Attention, RowsSumToOne) {
  nd::Rng rng(6);
  A q = random({4, 8}, rng), k = random({6, 8}, rng);
  const auto w = nd::attention_weights(q, k, 2);
  for (int r = 0; r < 2 * 4; ++r) {
    double s = 0;
    for (int c = 0; c < 6; ++c) s += w[static_cast<std::size_t>(r) * 6 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Attention, MatchesDenseOracle) {
  nd::Rng rng(7);
  const int lq = 3, lk = 5, d = 8, heads = 2, dh = 4;
  A q = random({lq, d}, rng), k = random({lk, d}, rng), v = random({lk, d}, rng);
  A out = nd::attention(q, k, v, heads);
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < lq; ++i) {
      std::vector<double> s(lk);
      double mx = -1e300;
      for (int j = 0; j < lk; ++j) {
        double dot = 0;
        for (int c = 0; c < dh; ++c) dot += q[i * d + h * dh + c] * k[j * d + h * dh + c];
        s[j] = dot / std::sqrt(double(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (double& x : s) z += (x = std::exp(x - mx));
      for (int c = 0; c < dh; ++c) {
        double acc = 0;
        for (int j = 0; j < lk; ++j) acc += s[j] / z * v[j * d + h * dh + c];
        EXPECT_NEAR(out[i * d + h * dh + c], acc, 1e-6);
      }
    }
}

TEST(Attention, HeadsMustDivideWidth) {
  A q = A::zeros({2, 6});
  EXPECT_THROW(nd::attention(q, q, q, 4), etris::ConfigError);
}

TEST(Softmax, RowsSumToOne) {
  nd::Rng rng(8);
  A x = random({7, 9}, rng);
  for (double& v : x.mutable_values()) v *= 30;
  A y = nd::softmax(x);
  for (int r = 0; r < 7; ++r) {
    double s = 0;
    for (int c = 0; c < 9; ++c) s += y[r * 9 + c];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Sigmoid, Symmetry) {
  std::vector<double> v;
  for (int i = -40; i <= 40; ++i) v.push_back(i * 0.37);
  A x({static_cast<int>(v.size())}, v);
  A p = nd::sigmoid(x), n = nd::sigmoid(nd::scale(x, -1.0));
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(p[i] + n[i], 1.0, 1e-7);
}

TEST(Resize, BilinearOracle) {
  // 2x2 -> 8x8 with half-pixel centres: source coordinate (o + 0.5) / 4 - 0.5,
  // clamped at the borders.
  A x({1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
  A y = nd::resize_bilinear(x, 8, 8);
  auto coord = [](int o) { return std::clamp((o + 0.5) / 4.0 - 0.5, 0.0, 1.0); };
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      const double ty = coord(r), tx = coord(c);
      const double top = 0.0 + tx * (1.0 - 0.0), bottom = 2.0 + tx * (3.0 - 2.0);
      EXPECT_NEAR(y[r * 8 + c], top + ty * (bottom - top), 1e-12);
    }
}

TEST(Resize, NearestRepeats) {
  A x({1, 2, 2}, {1, 2, 3, 4});
  A y = nd::upsample_nearest(x, 4);
  ASSERT_EQ(y.shape(), (nd::Shape{1, 8, 8}));
  EXPECT_EQ(y[0], 1);
  EXPECT_EQ(y[7], 2);
  EXPECT_EQ(y[63], 4);
}

TEST(Gradcheck, Quadratic) {
  A theta({3}, {1, 2, 3}, true);
  auto report = nd::gradcheck([&] { return nd::sum(nd::mul(theta, theta)); }, {{"theta", theta}});
  ASSERT_EQ(report.entries.size(), 1u);
  EXPECT_LT(report.max_rel_error(), 1e-9);
}

TEST(Gradcheck, FrozenParameterAbsentFromReport) {
  nd::ParamStore<double> store(1);
  A a = store.add("a", {3}, nd::Init::normal(1.0), true);
  A b = store.add("b", {3}, nd::Init::normal(1.0), false);
  auto report = nd::gradcheck([&] { return nd::sum(nd::mul(a, b)); }, store);
  ASSERT_EQ(report.entries.size(), 1u);
  EXPECT_EQ(report.entries[0].name, "a");
  EXPECT_FALSE(b.has_grad());
}

TEST(Gradcheck, NonFiniteProbeIsNumericalError) {
  A x({1}, {0.0}, true);
  // log(x) is -inf at the base point
  auto f = [&] {
    return A::record({1}, {std::log(x[0])}, {x}, [](const auto&) {});
  };
  EXPECT_THROW(nd::gradcheck(f, {{"x", x}}), etris::NumericalError);
}

TEST(Gradcheck, EveryPrimitivePasses) {
  const auto reports = etris::harness::primitive_gradchecks();
  EXPECT_GE(reports.size(), 40u);
  for (const auto& r : reports) EXPECT_LT(r.report.max_rel_error(), 1e-4) << r.name;
}

TEST(Gradcheck, RandomShapesUpTo16) {
  nd::Rng rng(11);
  for (int trial = 0; trial < 6; ++trial) {
    const int m = rng.uniform_int(1, 16), n = rng.uniform_int(1, 16), k = rng.uniform_int(1, 16);
    A a = random({m, k}, rng, true), b = random({k, n}, rng, true), bias = random({n}, rng, true);
    A g = random({m, n}, rng), gamma = random({n}, rng, true), beta = random({n}, rng, true);
    auto f = [&] {
      A y = nd::linear(a, nd::transpose(b), nd::OptArray<double>(bias));
      return nd::sum(nd::mul(nd::gelu(nd::layer_norm(y, gamma, beta)), g));
    };
    // over one or two elements layer norm outputs +-1 whatever the input, so
    // the gradient into it is left with only the eps term
    if (n < 3) continue;
    auto r = nd::gradcheck(f, {{"a", a}, {"b", b}, {"bias", bias}, {"gamma", gamma}, {"beta", beta}});
    EXPECT_LT(r.max_rel_error(), 1e-4) << m << "x" << k << "x" << n;
  }
}

TEST(ParamStore, DuplicateNameIsInternalError) {
  nd::ParamStore<float> store(1);
  store.add("x", {2}, nd::Init::zeros());
  EXPECT_THROW(store.add("x", {2}, nd::Init::zeros()), etris::InternalError);
}

TEST(ParamStore, InitDependsOnlyOnSeedAndName) {
  nd::ParamStore<float> a(9), b(9);
  a.add("first", {4}, nd::Init::normal(1.0));
  auto x = a.add("w", {5}, nd::Init::normal(1.0));
  auto y = b.add("w", {5}, nd::Init::normal(1.0));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(x[i], y[i]);
}
