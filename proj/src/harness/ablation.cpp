// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "common/errors.hpp"
#include "petzoo/petzoo.hpp"

namespace etris::harness {

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::zoom_variant: return "zoom_variant";
    case AblationAxis::hidden_dim: return "hidden_dim";
    case AblationAxis::scope: return "scope";
    case AblationAxis::bridger: return "bridger";
  }
  return "?";
}

AblationAxis parse_ablation_axis(const std::string& text) {
  for (AblationAxis a :
       {AblationAxis::zoom_variant, AblationAxis::hidden_dim, AblationAxis::scope, AblationAxis::bridger})
    if (to_string(a) == text) return a;
  throw ConfigError("unknown ablation axis '" + text + "' (zoom_variant, hidden_dim, scope, bridger)");
}

std::vector<AblationSetting> ablation_settings(AblationAxis axis, const RunConfig& base) {
  std::vector<AblationSetting> out;
  RunConfig b = base;
  if (axis != AblationAxis::bridger) b.model.method = Method::bridger;
  switch (axis) {
    case AblationAxis::zoom_variant:
      for (auto z : {bridger::ZoomVariant::linear, bridger::ZoomVariant::conv_interpolate, bridger::ZoomVariant::mlp,
                     bridger::ZoomVariant::conv_deconv}) {
        RunConfig c = b;
        c.model.bridger.zoom_variant = z;
        out.push_back({bridger::to_string(z), c});
      }
      break;
    case AblationAxis::hidden_dim:
      for (int d : {8, 16, 32, 64, 128}) {
        RunConfig c = b;
        c.model.bridger.hidden_dim = d;
        // keep heads dividing d
        while (d % c.model.bridger.heads != 0) --c.model.bridger.heads;
        out.push_back({std::to_string(d), c});
      }
      break;
    case AblationAxis::scope: {
      const std::pair<bridger::Scope, int> rows[] = {{bridger::Scope::full, 1},   {bridger::Scope::late, 1},
                                                     {bridger::Scope::single, 1}, {bridger::Scope::full, 2},
                                                     {bridger::Scope::late, 2},   {bridger::Scope::full, 3}};
      for (auto [scope, count] : rows) {
        RunConfig c = b;
        c.model.bridger.scope = scope;
        c.model.bridger.count = count;
        out.push_back({bridger::to_string(scope) + " x" + std::to_string(count), c});
      }
      break;
    }
    case AblationAxis::bridger: {
      RunConfig with = b, without = b;
      with.model.method = Method::bridger;
      without.model.method = Method::none;
      out.push_back({"with", with});
      out.push_back({"without", without});
      break;
    }
  }
  for (auto& s : out) s.config.validate();
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InternalError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<AblationRow> run_ablation(AblationAxis axis, const RunConfig& base, const SampleSet& train,
                                      const SampleSet& val, const AblationOptions& options) {
  if (options.seeds < 1) throw ConfigError("ablation needs at least one seed");
  const SampleSet& monitor = val.empty() ? train : val;
  std::vector<AblationRow> rows;
  for (const auto& setting : ablation_settings(axis, base)) {
    AblationRow row;
    row.axis = to_string(axis);
    row.setting = setting.label;
    std::vector<double> pr50, pr70, pr90;
    for (int k = 0; k < options.seeds; ++k) {
      RunConfig c = setting.config;
      c.model.seed = base.model.seed + static_cast<std::uint64_t>(k);
      EtrisModel<float> model(c.model);
      if (k == 0) row.params = petzoo::count_params(model.store()).backbone_trainable;
      TrainOptions topts;
      if (options.on_epoch)
        topts.on_epoch = [&](const EpochLog& e) { options.on_epoch(setting.label, c.model.seed, e); };
      train_model(model, c, train, val, topts);
      const auto report = evaluate_model(model, monitor);
      row.seed_oiou.push_back(report.oiou);
      pr50.push_back(report.pr[0]);
      pr70.push_back(report.pr[2]);
      pr90.push_back(report.pr[4]);
    }
    row.oiou = median(row.seed_oiou);
    row.pr50 = median(pr50);
    row.pr70 = median(pr70);
    row.pr90 = median(pr90);
    if (options.on_row) options.on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv_header() { return "axis,setting,params,oiou,pr50,pr70,pr90"; }

std::string ablation_csv_row(const AblationRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, ",%zu,%.6f,%.6f,%.6f,%.6f", row.params, row.oiou, row.pr50, row.pr70, row.pr90);
  return row.axis + "," + row.setting + buf;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << ablation_csv_header() << "\n";
  for (const auto& r : rows) os << ablation_csv_row(r) << "\n";
  return os.str();
}

}  // namespace etris::harness
