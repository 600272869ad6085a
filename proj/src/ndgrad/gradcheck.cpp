// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "ndgrad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "common/errors.hpp"

namespace etris::nd {

double GradcheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

double GradcheckReport::max_resolved_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_resolved_error);
  return worst;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

double difference_floor(double f_plus, double f_minus, const GradcheckOptions& options) {
  const double scale = std::max({std::abs(f_plus), std::abs(f_minus), 1.0});
  const double noise = 8.0 * std::numeric_limits<double>::epsilon() * scale / (2.0 * options.eps);
  return std::max(noise / options.tol, 1e-8);
}

namespace {

double probe(const ScalarFn& f, const std::string& name) {
  const double value = f().item();
  if (!std::isfinite(value)) throw NumericalError("non-finite objective while probing " + name);
  return value;
}

}  // namespace

GradcheckReport gradcheck(const ScalarFn& f, std::vector<std::pair<std::string, Array<double>>> leaves,
                          const GradcheckOptions& options) {
  for (auto& [name, leaf] : leaves) leaf.zero_grad();
  Array<double> loss = f();
  if (!std::isfinite(loss.item())) throw NumericalError("non-finite objective at the base point");
  loss.backward();

  GradcheckReport report;
  report.tol = options.tol;
  for (auto& [name, leaf] : leaves) {
    GradcheckEntry entry;
    entry.name = name;
    entry.count = leaf.size();
    const std::vector<double> analytic = leaf.has_grad()
                                             ? std::vector<double>(leaf.grad().begin(), leaf.grad().end())
                                             : std::vector<double>(leaf.size(), 0.0);
    auto values = leaf.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.eps;
      const double plus = probe(f, name);
      values[i] = saved - options.eps;
      const double minus = probe(f, name);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double err = relative_error(analytic[i], numeric);
      const double floor = difference_floor(plus, minus, options);
      entry.max_resolved_error = std::max(entry.max_resolved_error, relative_error(analytic[i], numeric, floor));
      if (std::max(std::abs(analytic[i]), std::abs(numeric)) < floor) ++entry.unresolvable;
      if (err > entry.max_rel_error || i == 0) {
        entry.max_rel_error = std::max(entry.max_rel_error, err);
        if (err >= entry.max_rel_error) {
          entry.worst_index = i;
          entry.analytic = analytic[i];
          entry.numeric = numeric;
        }
      }
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

GradcheckReport gradcheck(const ScalarFn& f, ParamStore<double>& params, const GradcheckOptions& options,
                          const std::function<bool(const std::string&)>& select) {
  std::vector<std::pair<std::string, Array<double>>> leaves;
  for (auto& p : params) {
    if (!p.trainable) continue;
    if (select && !select(p.name)) continue;
    leaves.emplace_back(p.name, p.array);
  }
  params.zero_grad();
  return gradcheck(f, std::move(leaves), options);
}

}  // namespace etris::nd
