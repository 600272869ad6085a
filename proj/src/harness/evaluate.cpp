// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness/evaluate.hpp"

#include <fstream>

#include "common/errors.hpp"
#include "harness/checkpoint.hpp"
#include "harness/train.hpp"

namespace etris::harness {

objective::MetricReport evaluate_checkpoint(const std::string& checkpoint_path, const Dataset& data) {
  auto loaded = load_checkpoint<float>(checkpoint_path);
  const int expected = loaded.config.model.backbone.image_size;
  if (data.image_size != expected)
    throw InputError("dataset image size " + std::to_string(data.image_size) + " does not match the checkpoint's " +
                     std::to_string(expected));
  return evaluate_model(*loaded.model, all_samples(data));
}

std::string report_json(const objective::MetricReport& report) { return report.to_json().dump(2) + "\n"; }

void write_report(const std::string& path, const objective::MetricReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << report_json(report);
  if (!out) throw InputError("failed writing '" + path + "'");
}

}  // namespace etris::harness
