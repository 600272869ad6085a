// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Flat JSON run configuration. Keys are "<section>.<field>" plus a top-level
// "seed"; unknown keys are rejected.

#pragma once

#include <cstdint>
#include <string>

#include "backbone/backbone.hpp"
#include "bridger/bridger.hpp"
#include "json.hpp"
#include "petzoo/petzoo.hpp"
#include "risdec/decoder.hpp"

namespace etris::harness {

// Which backbone-side parameters are tuned. Bridger is the default; "none"
// trains only the decoder on top of the frozen encoders.
enum class Method { bridger, adapter, lora, none };

std::string to_string(Method method);
Method parse_method(const std::string& text);

struct ModelConfig {
  std::uint64_t seed = 42;
  backbone::BackboneConfig backbone;
  bridger::BridgerConfig bridger;
  risdec::DecoderConfig decoder;
  Method method = Method::bridger;
  petzoo::AdapterConfig adapter;
  petzoo::LoRAConfig lora;

  void validate() const;
  // Bridger config actually built: count 0 unless method is bridger.
  bridger::BridgerConfig effective_bridger() const;
};

struct TrainConfig {
  double lr = 1e-4;
  double bridger_lr = -1;  // < 0: 1e-3 for vit, otherwise lr
  int epochs = 60;
  int decay_epoch = 42;  // epochs with index >= decay_epoch run at lr * 0.1
  int batch_size = 8;
  double val_fraction = 0.0;  // held out when no separate validation set is given

  void validate() const;
  double resolved_bridger_lr(const backbone::BackboneConfig& backbone) const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  void validate() const { model.validate(), train.validate(); }
};

// Applies every key of a flat JSON object on top of `base`.
RunConfig apply_config(RunConfig base, const nlohmann::json& flat);
RunConfig parse_config(const std::string& json_text, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});
nlohmann::ordered_json to_json(const RunConfig& config);

// Small instance used by the gradient checks.
RunConfig gradcheck_config();

}  // namespace etris::harness
