// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Adapter and LoRA baselines for the frozen encoders, and the ledger that
// splits a model's parameters into frozen, backbone-side trainable and head.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "backbone/backbone.hpp"
#include "json.hpp"

namespace etris::petzoo {

struct AdapterConfig {
  int reduction_factor = 4;
};

// Low-rank deltas on the attention query and value projections.
struct LoRAConfig {
  int rank = 4;
  double alpha = 8.0;
};

enum class Side { backbone, head };

// Parameters under "decoder." form the head; everything else (frozen
// encoders, Bridger, adapters, low-rank deltas) sits on the backbone side.
Side side_of(const std::string& name);

struct LedgerEntry {
  std::string name;
  std::size_t count = 0;
  bool trainable = false;
  Side side = Side::backbone;
};

struct ParamPartition {
  std::vector<LedgerEntry> entries;
  std::size_t total = 0;
  std::size_t backbone_total = 0;
  std::size_t backbone_trainable = 0;
  std::size_t head_total = 0;
  std::size_t head_trainable = 0;
  std::size_t frozen = 0;

  // backbone_trainable / backbone_total
  double ratio() const;
  // Sum of trainable counts whose name starts with `prefix`.
  std::size_t trainable_with_prefix(const std::string& prefix) const;

  nlohmann::ordered_json to_json(bool with_entries = true) const;
  std::string to_text() const;
};

// Throws InternalError on duplicate names.
template <typename T>
ParamPartition count_params(const nd::ParamStore<T>& store);

// Houlsby adapters after every attention and FFN sublayer of both encoders,
// and after every cnn conv block. Requires a frozen backbone.
template <typename T>
void attach_adapter(nd::ParamStore<T>& store, backbone::Backbone<T>& model, const AdapterConfig& config);

template <typename T>
void attach_lora(nd::ParamStore<T>& store, backbone::Backbone<T>& model, const LoRAConfig& config);

// One row of a method comparison. Rows for baselines this build does not
// implement carry no counts so that externally measured numbers can be added
// to the same table by hand.
struct ComparisonRow {
  std::string method;
  std::optional<std::size_t> backbone_trainable;
  std::optional<std::size_t> backbone_total;
  std::string note;
};

nlohmann::ordered_json comparison_json(const std::vector<ComparisonRow>& rows);
std::string comparison_text(const std::vector<ComparisonRow>& rows);

// Adapter closed form: width*(width/r) + width/r + (width/r)*width + width.
std::size_t adapter_param_count(int width, int reduction);
// LoRA closed form for one [out, in] weight.
std::size_t lora_param_count(int in, int out, int rank);

}  // namespace etris::petzoo
