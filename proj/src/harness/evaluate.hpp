// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "harness/synth.hpp"
#include "objective/objective.hpp"

namespace etris::harness {

// Loads a checkpoint and scores every sample of `data`. Throws InputError
// when the dataset's image size differs from the checkpoint's.
objective::MetricReport evaluate_checkpoint(const std::string& checkpoint_path, const Dataset& data);

// Pretty-printed JSON of the report with a trailing newline.
std::string report_json(const objective::MetricReport& report);
void write_report(const std::string& path, const objective::MetricReport& report);

}  // namespace etris::harness
