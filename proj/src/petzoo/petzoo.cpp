// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "petzoo/petzoo.hpp"

#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "common/errors.hpp"

namespace etris::petzoo {

namespace {

template <typename T>
void require_frozen(const nd::ParamStore<T>& store, const char* what) {
  for (const auto& p : store)
    if (nd::has_prefix(p.name, "backbone.") && p.trainable)
      throw ConfigError(std::string(what) + " requires a frozen backbone; '" + p.name + "' is trainable");
}

std::string count_or_dash(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : "-"; }

}  // namespace

Side side_of(const std::string& name) { return nd::has_prefix(name, "decoder.") ? Side::head : Side::backbone; }

double ParamPartition::ratio() const {
  return backbone_total == 0 ? 0.0 : static_cast<double>(backbone_trainable) / static_cast<double>(backbone_total);
}

std::size_t ParamPartition::trainable_with_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& e : entries)
    if (e.trainable && nd::has_prefix(e.name, prefix)) n += e.count;
  return n;
}

nlohmann::ordered_json ParamPartition::to_json(bool with_entries) const {
  nlohmann::ordered_json j;
  j["total"] = total;
  j["backbone_total"] = backbone_total;
  j["backbone_trainable"] = backbone_trainable;
  j["head_total"] = head_total;
  j["head_trainable"] = head_trainable;
  j["frozen"] = frozen;
  j["ratio"] = ratio();
  if (with_entries) {
    auto list = nlohmann::ordered_json::array();
    for (const auto& e : entries)
      list.push_back({{"name", e.name},
                      {"count", e.count},
                      {"trainable", e.trainable},
                      {"side", e.side == Side::head ? "head" : "backbone"}});
    j["entries"] = std::move(list);
  }
  return j;
}

std::string ParamPartition::to_text() const {
  std::size_t width = 4;
  for (const auto& e : entries) width = std::max(width, e.name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "name" << "  " << std::right << std::setw(10) << "count"
     << "  trainable  side\n";
  for (const auto& e : entries)
    os << std::left << std::setw(static_cast<int>(width)) << e.name << "  " << std::right << std::setw(10) << e.count
       << "  " << std::left << std::setw(9) << (e.trainable ? "yes" : "no") << "  "
       << (e.side == Side::head ? "head" : "backbone") << "\n";
  os << "\n"
     << "total               " << total << "\n"
     << "frozen              " << frozen << "\n"
     << "backbone total      " << backbone_total << "\n"
     << "backbone trainable  " << backbone_trainable << "\n"
     << "head trainable      " << head_trainable << "\n"
     << "backbone ratio      " << std::fixed << std::setprecision(4) << ratio() * 100.0 << "%\n";
  return os.str();
}

template <typename T>
ParamPartition count_params(const nd::ParamStore<T>& store) {
  ParamPartition part;
  std::unordered_set<std::string> seen;
  for (const auto& p : store) {
    if (!seen.insert(p.name).second) throw InternalError("duplicate parameter name '" + p.name + "'");
    LedgerEntry e{p.name, p.array.size(), p.trainable, side_of(p.name)};
    part.total += e.count;
    if (!e.trainable) part.frozen += e.count;
    if (e.side == Side::backbone) {
      part.backbone_total += e.count;
      if (e.trainable) part.backbone_trainable += e.count;
    } else {
      part.head_total += e.count;
      if (e.trainable) part.head_trainable += e.count;
    }
    part.entries.push_back(std::move(e));
  }
  return part;
}

template <typename T>
void attach_adapter(nd::ParamStore<T>& store, backbone::Backbone<T>& model, const AdapterConfig& config) {
  require_frozen(store, "attach_adapter");
  model.image.attach_adapters(store, config.reduction_factor);
  model.text.attach_adapters(store, config.reduction_factor);
}

template <typename T>
void attach_lora(nd::ParamStore<T>& store, backbone::Backbone<T>& model, const LoRAConfig& config) {
  require_frozen(store, "attach_lora");
  model.image.attach_lora(store, config.rank, config.alpha);
  model.text.attach_lora(store, config.rank, config.alpha);
}

nlohmann::ordered_json comparison_json(const std::vector<ComparisonRow>& rows) {
  auto list = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["method"] = r.method;
    j["backbone_trainable"] = r.backbone_trainable ? nlohmann::ordered_json(*r.backbone_trainable) : nullptr;
    j["backbone_total"] = r.backbone_total ? nlohmann::ordered_json(*r.backbone_total) : nullptr;
    if (r.backbone_trainable && r.backbone_total && *r.backbone_total > 0)
      j["ratio"] = static_cast<double>(*r.backbone_trainable) / static_cast<double>(*r.backbone_total);
    else
      j["ratio"] = nullptr;
    j["note"] = r.note;
    list.push_back(std::move(j));
  }
  return list;
}

std::string comparison_text(const std::vector<ComparisonRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "method" << std::right << std::setw(12) << "trainable" << std::setw(12)
     << "total" << std::setw(10) << "ratio" << "  note\n";
  for (const auto& r : rows) {
    std::string ratio = "-";
    if (r.backbone_trainable && r.backbone_total && *r.backbone_total > 0) {
      std::ostringstream rs;
      rs << std::fixed << std::setprecision(2)
         << 100.0 * static_cast<double>(*r.backbone_trainable) / static_cast<double>(*r.backbone_total) << "%";
      ratio = rs.str();
    }
    os << std::left << std::setw(12) << r.method << std::right << std::setw(12) << count_or_dash(r.backbone_trainable)
       << std::setw(12) << count_or_dash(r.backbone_total) << std::setw(10) << ratio << "  " << r.note << "\n";
  }
  return os.str();
}

std::size_t adapter_param_count(int width, int reduction) {
  const std::size_t w = static_cast<std::size_t>(width), h = w / static_cast<std::size_t>(reduction);
  return w * h + h + h * w + w;
}

std::size_t lora_param_count(int in, int out, int rank) {
  return static_cast<std::size_t>(rank) * static_cast<std::size_t>(in + out);
}

template ParamPartition count_params(const nd::ParamStore<float>&);
template ParamPartition count_params(const nd::ParamStore<double>&);
template void attach_adapter(nd::ParamStore<float>&, backbone::Backbone<float>&, const AdapterConfig&);
template void attach_adapter(nd::ParamStore<double>&, backbone::Backbone<double>&, const AdapterConfig&);
template void attach_lora(nd::ParamStore<float>&, backbone::Backbone<float>&, const LoRAConfig&);
template void attach_lora(nd::ParamStore<double>&, backbone::Backbone<double>&, const LoRAConfig&);

}  // namespace etris::petzoo
