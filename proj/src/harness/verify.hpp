// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Gradient-check runs: every differentiable primitive on small random
// inputs, and the end-to-end loss of assembled toy models.

#pragma once

#include <string>
#include <vector>

#include "harness/config.hpp"
#include "json.hpp"
#include "ndgrad/gradcheck.hpp"

namespace etris::harness {

struct NamedReport {
  std::string name;
  nd::GradcheckReport report;
  double seconds = 0;
};

// One report per primitive (and per interesting configuration of it).
std::vector<NamedReport> primitive_gradchecks(std::uint64_t seed = 7, const nd::GradcheckOptions& options = {});

struct GradcheckCase {
  std::string name;
  RunConfig config;
};

// bridger-cnn, adapter-cnn and lora-cnn; `full` adds the vit variants, the
// other zoom variants and the other scopes.
std::vector<GradcheckCase> gradcheck_cases(const RunConfig& base, bool full);

// d(loss)/d(every trainable parameter) of a one-sample instance in f64.
// Trainable arrays that start at exactly zero are first redrawn from
// N(0, 0.1) so that no gradient is checked at a degenerate point.
nd::GradcheckReport model_gradcheck(const RunConfig& config, const nd::GradcheckOptions& options = {});

std::vector<NamedReport> run_gradcheck_suite(const RunConfig& base, bool full,
                                             const nd::GradcheckOptions& options = {});

nlohmann::ordered_json gradcheck_json(const std::vector<NamedReport>& reports, const nd::GradcheckOptions& options);

}  // namespace etris::harness
