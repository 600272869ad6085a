// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Tunable cross-modal adapter interleaved with the frozen encoders. At each
// tapped stage a Bridger zooms both streams to a shared hidden width and grid,
// lets them attend to each other, then zooms the result back out and adds it
// to the next stage of the backbone.

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "backbone/backbone.hpp"

namespace etris::bridger {

using backbone::BackboneConfig;
using nd::Array;
using nd::ParamStore;

enum class Scope { full, late, single };
enum class ZoomVariant { linear, conv_interpolate, mlp, conv_deconv };

std::string to_string(Scope scope);
std::string to_string(ZoomVariant variant);
Scope parse_scope(const std::string& text);
ZoomVariant parse_zoom_variant(const std::string& text);

struct BridgerConfig {
  int hidden_dim = 64;
  int count = 3;  // 0 disables the Bridger entirely
  Scope scope = Scope::full;
  ZoomVariant zoom_variant = ZoomVariant::conv_deconv;
  int heads = 4;
  int ffn_dim = 64;
  bool pre_norm = true;

  void validate(const BackboneConfig& backbone) const;
  // Backbone stages that host a Bridger, in execution order.
  std::vector<int> stages(const BackboneConfig& backbone) const;
  // Shared interaction grid: the spatial size of the middle tap.
  std::pair<int, int> reference_hw(const BackboneConfig& backbone) const;
};

template <typename T>
struct BridgerCarry {
  Array<T> visual;   // [d, h', w']
  Array<T> textual;  // [L, d]

  static BridgerCarry zeros(int hidden, int h, int w, int text_len);
};

// Visual zoom-in: [C_i, h_i, w_i] -> [d, h', w'].
template <typename T>
class ZoomIn {
 public:
  ZoomIn(ParamStore<T>& store, const std::string& prefix, ZoomVariant variant, const nd::Shape& source, int hidden,
         std::pair<int, int> reference);
  Array<T> operator()(const Array<T>& x) const;

 private:
  ZoomVariant variant_;
  std::pair<int, int> reference_;
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::Deconv2x2<T>> deconvs_;
};

// Visual zoom-out: [d, h', w'] -> [C_t, h_t, w_t]; the last layer is
// zero-initialized so a fresh Bridger adds nothing.
template <typename T>
class ZoomOut {
 public:
  ZoomOut(ParamStore<T>& store, const std::string& prefix, ZoomVariant variant, int hidden,
          std::pair<int, int> reference, const nd::Shape& target);
  Array<T> operator()(const Array<T>& x) const;

 private:
  ZoomVariant variant_;
  nd::Shape target_;
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::Deconv2x2<T>> deconvs_;
  std::vector<nn::Conv2d<T>> head_;
};

template <typename T>
struct Interactor {
  std::optional<nn::LayerNorm<T>> ln_visual, ln_text;
  nn::MultiHeadAttention<T> self_attn;
  nn::MultiHeadAttention<T> cross_attn;
  nn::FeedForward<T> ffn;

  static Interactor create(ParamStore<T>& store, const std::string& prefix, const BridgerConfig& config);

  // Returns (f_v [d,h',w'], f_t [L,d]). text_len masks padded text keys.
  std::pair<Array<T>, Array<T>> operator()(const BridgerCarry<T>& carry, const Array<T>& zoomed_visual,
                                           const Array<T>& zoomed_text, int text_len) const;
};

template <typename T>
struct BridgerStep {
  BridgerCarry<T> carry;  // f_v, f_t for the next Bridger
  Array<T> visual_delta;  // in the target stage's tap layout
  Array<T> text_delta;    // [L, C]
};

template <typename T>
class BridgerUnit {
 public:
  BridgerUnit(ParamStore<T>& store, const std::string& prefix, const BridgerConfig& config,
              const BackboneConfig& backbone, int stage);

  int stage() const { return stage_; }
  int target_stage() const { return target_stage_; }

  std::pair<Array<T>, Array<T>> zoom_in(const Array<T>& visual, const Array<T>& text) const;
  BridgerStep<T> step(const BridgerCarry<T>& carry, const Array<T>& visual, const Array<T>& text,
                      int text_len) const;

  const Interactor<T>& interactor() const { return interactor_; }
  const ZoomOut<T>& zoom_out() const { return zoom_out_; }
  const nn::Linear<T>& text_out() const { return text_out_; }

 private:
  int stage_;
  int target_stage_;
  ZoomIn<T> zoom_in_;
  nn::Linear<T> text_in_;
  Interactor<T> interactor_;
  ZoomOut<T> zoom_out_;
  nn::Linear<T> text_out_;
};

template <typename T>
struct BridgedFeatures {
  backbone::ImageStageFeatures<T> image;
  backbone::TextFeatures<T> text;
};

template <typename T>
class Bridger {
 public:
  Bridger(ParamStore<T>& store, const BridgerConfig& config, const BackboneConfig& backbone);

  const BridgerConfig& config() const { return config_; }
  const std::vector<BridgerUnit<T>>& units() const { return units_; }
  BridgerCarry<T> initial_carry() const;

  // Runs the backbone stage by stage, interleaving the Bridgers. With no
  // units this is exactly the frozen backbone's forward pass.
  BridgedFeatures<T> forward(const backbone::Backbone<T>& backbone, const Array<T>& image,
                             const backbone::TokenSequence& tokens) const;

 private:
  BridgerConfig config_;
  BackboneConfig backbone_;
  std::vector<BridgerUnit<T>> units_;
};

}  // namespace etris::bridger
