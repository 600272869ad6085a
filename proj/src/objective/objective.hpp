// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Per-pixel text-to-pixel loss, mask post-processing and segmentation metrics.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "ndgrad/array.hpp"

namespace etris::objective {

using nd::Array;

inline constexpr double kMaskThreshold = 0.35;
inline constexpr std::array<double, 5> kPrecisionThresholds{0.5, 0.6, 0.7, 0.8, 0.9};

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 0 or 1

  BinaryMask() = default;
  BinaryMask(int h, int w, std::vector<std::uint8_t> values);
  static BinaryMask zeros(int h, int w);
  std::size_t count() const;
  bool operator==(const BinaryMask& other) const = default;
};

// Samples the source at the centre of every destination cell.
BinaryMask downsample_nearest(const BinaryMask& mask, int out_h, int out_w);

// Mean over all pixels of softplus(z) - y*z, i.e. -log sigma(z) on positives
// and -log(1 - sigma(z)) on negatives. gt must have logits.size() entries.
template <typename T>
Array<T> contrastive_loss(const Array<T>& logits, const std::vector<std::uint8_t>& gt);

// Bilinear upsample of an h x w probability map, then p >= threshold.
BinaryMask threshold_probabilities(const std::vector<double>& prob, int h, int w, int out_h, int out_w,
                                   double threshold = kMaskThreshold);

// sigmoid -> bilinear upsample of probabilities to out_h x out_w -> p >= threshold.
template <typename T>
BinaryMask finalize_mask(const Array<T>& logits, int out_h, int out_w, double threshold = kMaskThreshold);

struct MetricReport {
  double oiou = 0;
  double miou = 0;
  std::array<double, 5> pr{};  // one entry per kPrecisionThresholds

  nlohmann::ordered_json to_json() const;
};

// Streaming form of compute_metrics; integer sums keep it order-independent.
class MetricAccumulator {
 public:
  void add(const BinaryMask& pred, const BinaryMask& gt);
  std::size_t samples() const { return ious_.size(); }
  MetricReport report() const;

 private:
  std::uint64_t intersection_ = 0;
  std::uint64_t union_ = 0;
  std::vector<double> ious_;
};

// Throws InputError on empty or mismatched lists.
MetricReport compute_metrics(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts);

}  // namespace etris::objective
