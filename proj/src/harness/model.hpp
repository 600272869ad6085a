// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// The assembled stack: frozen encoders, the chosen backbone-side tuning
// method, and the decoder, all registered in one parameter store.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bridger/bridger.hpp"
#include "harness/config.hpp"
#include "harness/synth.hpp"
#include "risdec/decoder.hpp"

namespace etris::harness {

template <typename T>
class EtrisModel {
 public:
  explicit EtrisModel(const ModelConfig& config);
  EtrisModel(const EtrisModel&) = delete;
  EtrisModel& operator=(const EtrisModel&) = delete;

  const ModelConfig& config() const { return config_; }
  nd::ParamStore<T>& store() { return store_; }
  const nd::ParamStore<T>& store() const { return store_; }
  backbone::Backbone<T>& backbone() { return backbone_; }
  const backbone::Backbone<T>& backbone() const { return backbone_; }
  const bridger::Bridger<T>& bridger() const { return bridger_; }
  const risdec::Decoder<T>& decoder() const { return decoder_; }

  backbone::TokenSequence tokens(const std::vector<int>& ids) const;
  bridger::BridgedFeatures<T> features(const nd::Array<T>& image, const backbone::TokenSequence& tokens) const;
  // Mask logits at a quarter of the input resolution.
  nd::Array<T> forward(const nd::Array<T>& image, const backbone::TokenSequence& tokens) const;
  nd::Array<T> forward(const Sample& sample) const;

  // SHA-256 over every "backbone." parameter's name and value bytes.
  std::string backbone_sha256() const;

 private:
  ModelConfig config_;
  nd::ParamStore<T> store_;
  backbone::Backbone<T> backbone_;
  bridger::Bridger<T> bridger_;
  risdec::Decoder<T> decoder_;
};

// [3, H, W] in [0, 1] from interleaved 8-bit RGB.
template <typename T>
nd::Array<T> image_tensor(const std::vector<std::uint8_t>& rgb, int size);

// Ground truth at logit resolution (nearest sampling at cell centres).
std::vector<std::uint8_t> loss_target(const objective::BinaryMask& mask, int out_size);

}  // namespace etris::harness
