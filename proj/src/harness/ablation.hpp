// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Sweeps over one Bridger design axis: train each setting on the same split
// and report validation metrics plus the Bridger's parameter count.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "harness/train.hpp"

namespace etris::harness {

// zoom_variant: the four zoom layer components; hidden_dim: 8..128;
// scope: (scope, count) pairs; bridger: with and without Bridger.
enum class AblationAxis { zoom_variant, hidden_dim, scope, bridger };

std::string to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(const std::string& text);

struct AblationSetting {
  std::string label;
  RunConfig config;
};

std::vector<AblationSetting> ablation_settings(AblationAxis axis, const RunConfig& base);

struct AblationRow {
  std::string axis;
  std::string setting;
  std::size_t params = 0;  // backbone-side trainable
  double oiou = 0, pr50 = 0, pr70 = 0, pr90 = 0;
  std::vector<double> seed_oiou;  // one per seed, in seed order
};

struct AblationOptions {
  // 1: the base seed only; 3: seeds base, base+1, base+2 and the median of
  // each metric.
  int seeds = 1;
  std::function<void(const AblationRow&)> on_row;
  std::function<void(const std::string& setting, std::uint64_t seed, const EpochLog&)> on_epoch;
};

// Metrics are those of the final model on `val` (or `train` if val is empty).
std::vector<AblationRow> run_ablation(AblationAxis axis, const RunConfig& base, const SampleSet& train,
                                      const SampleSet& val, const AblationOptions& options = {});

std::string ablation_csv_header();
std::string ablation_csv_row(const AblationRow& row);
std::string ablation_csv(const std::vector<AblationRow>& rows);

double median(std::vector<double> values);

}  // namespace etris::harness
