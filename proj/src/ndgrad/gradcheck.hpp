// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ndgrad/array.hpp"
#include "ndgrad/params.hpp"

namespace etris::nd {

struct GradcheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
};

struct GradcheckEntry {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  // Same error with the floor raised to difference_floor(); a diagnostic for
  // entries whose gradient is below what central differences can resolve.
  double max_resolved_error = 0.0;
  std::size_t unresolvable = 0;  // entries with |numeric| and |analytic| under that floor
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double tol = 0.0;

  double max_rel_error() const;
  double max_resolved_error() const;
  bool passed() const { return max_rel_error() < tol; }
};

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-8);

// Rounding bound of a central difference: each probe of f carries a few ulps
// of error, so differences below 8 * DBL_EPSILON * max(|f|, 1) / (2 eps) are
// noise. Divided by tol it is the smallest gradient magnitude that can be
// checked to tol at all.
double difference_floor(double f_plus, double f_minus, const GradcheckOptions& options);

using ScalarFn = std::function<Array<double>()>;

// Compares reverse-mode gradients of f with central differences
// (f(x+eps) - f(x-eps)) / (2 eps) for every entry of every listed leaf.
// Throws NumericalError naming the leaf when f is non-finite at a probe.
GradcheckReport gradcheck(const ScalarFn& f, std::vector<std::pair<std::string, Array<double>>> leaves,
                          const GradcheckOptions& options = {});

// Same, over the trainable parameters of a registry; frozen ones are skipped
// and do not appear in the report.
GradcheckReport gradcheck(const ScalarFn& f, ParamStore<double>& params, const GradcheckOptions& options = {},
                          const std::function<bool(const std::string&)>& select = nullptr);

}  // namespace etris::nd
