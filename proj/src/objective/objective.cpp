// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "objective/objective.hpp"

#include <algorithm>
#include <cmath>

#include "common/errors.hpp"
#include "ndgrad/interp.hpp"

namespace etris::objective {

BinaryMask::BinaryMask(int h, int w, std::vector<std::uint8_t> values)
    : height(h), width(w), pixels(std::move(values)) {
  if (h < 1 || w < 1 || pixels.size() != static_cast<std::size_t>(h) * w)
    throw InputError("mask buffer does not match " + std::to_string(h) + "x" + std::to_string(w));
}

BinaryMask BinaryMask::zeros(int h, int w) {
  return BinaryMask(h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0));
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(pixels.begin(), pixels.end(), [](std::uint8_t p) { return p != 0; }));
}

BinaryMask downsample_nearest(const BinaryMask& mask, int out_h, int out_w) {
  BinaryMask out = BinaryMask::zeros(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = nd::nearest_source(y, mask.height, out_h);
    for (int x = 0; x < out_w; ++x) {
      const int sx = nd::nearest_source(x, mask.width, out_w);
      out.pixels[static_cast<std::size_t>(y) * out_w + x] = mask.pixels[static_cast<std::size_t>(sy) * mask.width + sx] ? 1 : 0;
    }
  }
  return out;
}

template <typename T>
Array<T> contrastive_loss(const Array<T>& logits, const std::vector<std::uint8_t>& gt) {
  const std::size_t n = logits.size();
  if (gt.size() != n)
    throw InputError("ground truth has " + std::to_string(gt.size()) + " pixels, logits have " + std::to_string(n));
  auto z = logits.values();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T zi = z[i];
    const T y = gt[i] ? T(1) : T(0);
    total += std::max(zi, T(0)) - y * zi + std::log1p(std::exp(-std::abs(zi)));
  }
  const T inv_n = T(1) / static_cast<T>(n);
  return Array<T>::record({1}, {total * inv_n}, {logits}, [logits, gt, inv_n](const nd::detail::Node<T>& self) {
    auto g = logits.grad_mut();
    auto zv = logits.values();
    const T upstream = self.grad[0] * inv_n;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T zi = zv[i];
      const T s = zi >= 0 ? T(1) / (T(1) + std::exp(-zi)) : std::exp(zi) / (T(1) + std::exp(zi));
      g[i] += upstream * (s - (gt[i] ? T(1) : T(0)));
    }
  });
}

BinaryMask threshold_probabilities(const std::vector<double>& prob, int h, int w, int out_h, int out_w,
                                   double threshold) {
  if (prob.size() != static_cast<std::size_t>(h) * w) throw InputError("probability map does not match its shape");
  const auto ty = nd::bilinear_taps(h, out_h);
  const auto tx = nd::bilinear_taps(w, out_w);
  auto at = [&](int r, int c) { return prob[static_cast<std::size_t>(r) * w + c]; };
  // a + t (b - a) keeps constant regions exact, so the threshold test is exact there too.
  auto lerp = [](double a, double b, double t) { return a + t * (b - a); };
  BinaryMask out = BinaryMask::zeros(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const auto& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      const auto& b = tx[static_cast<std::size_t>(x)];
      const double top = lerp(at(a.i0, b.i0), at(a.i0, b.i1), b.w1);
      const double bottom = lerp(at(a.i1, b.i0), at(a.i1, b.i1), b.w1);
      out.pixels[static_cast<std::size_t>(y) * out_w + x] = lerp(top, bottom, a.w1) >= threshold ? 1 : 0;
    }
  }
  return out;
}

template <typename T>
BinaryMask finalize_mask(const Array<T>& logits, int out_h, int out_w, double threshold) {
  if (logits.rank() != 2) throw InputError("finalize_mask expects [h, w] logits, got " + nd::shape_str(logits.shape()));
  std::vector<double> prob(logits.size());
  auto z = logits.values();
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double zi = static_cast<double>(z[i]);
    prob[i] = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
  }
  return threshold_probabilities(prob, logits.dim(0), logits.dim(1), out_h, out_w, threshold);
}

nlohmann::ordered_json MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["oiou"] = oiou;
  j["miou"] = miou;
  for (std::size_t i = 0; i < kPrecisionThresholds.size(); ++i)
    j["pr" + std::to_string(static_cast<int>(std::lround(kPrecisionThresholds[i] * 100)))] = pr[i];
  return j;
}

void MetricAccumulator::add(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw InputError("prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " does not match ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const bool p = pred.pixels[i] != 0, g = gt.pixels[i] != 0;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  intersection_ += inter;
  union_ += uni;
  ious_.push_back(uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni));
}

MetricReport MetricAccumulator::report() const {
  if (ious_.empty()) throw InputError("metrics need at least one sample");
  MetricReport r;
  r.oiou = union_ == 0 ? 1.0 : static_cast<double>(intersection_) / static_cast<double>(union_);
  double total = 0;
  for (double v : ious_) total += v;
  r.miou = total / static_cast<double>(ious_.size());
  for (std::size_t t = 0; t < kPrecisionThresholds.size(); ++t) {
    const auto hits = std::count_if(ious_.begin(), ious_.end(), [&](double v) { return v > kPrecisionThresholds[t]; });
    r.pr[t] = static_cast<double>(hits) / static_cast<double>(ious_.size());
  }
  return r;
}

MetricReport compute_metrics(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts) {
  if (preds.empty()) throw InputError("metrics need at least one sample");
  if (preds.size() != gts.size())
    throw InputError(std::to_string(preds.size()) + " predictions for " + std::to_string(gts.size()) +
                     " ground-truth masks");
  MetricAccumulator acc;
  for (std::size_t i = 0; i < preds.size(); ++i) acc.add(preds[i], gts[i]);
  return acc.report();
}

template Array<float> contrastive_loss(const Array<float>&, const std::vector<std::uint8_t>&);
template Array<double> contrastive_loss(const Array<double>&, const std::vector<std::uint8_t>&);
template BinaryMask finalize_mask(const Array<float>&, int, int, double);
template BinaryMask finalize_mask(const Array<double>&, int, int, double);

}  // namespace etris::objective
