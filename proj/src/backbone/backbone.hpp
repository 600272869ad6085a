// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Frozen toy dual encoder. Both encoders run in N blocks; the outputs of
// blocks 2..N are the tap points the Bridger reads from and writes back into.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nn/layers.hpp"

namespace etris::backbone {

using nd::Array;
using nd::ParamStore;

enum class ImageVariant { cnn, vit };

std::string to_string(ImageVariant variant);
ImageVariant parse_image_variant(const std::string& text);

struct BackboneConfig {
  ImageVariant image_variant = ImageVariant::cnn;
  int num_taps = 4;  // N; taps are blocks 2..N
  int image_size = 64;

  // cnn: stride-2 stem, then N stride-2 stages; stage i has depths[i-1]
  // 3x3 conv-norm-GELU blocks, the first of which downsamples.
  int stem_width = 16;
  std::vector<int> widths{32, 64, 128, 256};
  std::vector<int> depths{1, 1, 2, 12};

  // vit: layers split evenly into N blocks
  int vit_patch = 8;
  int vit_width = 64;
  int vit_layers = 8;
  int vit_heads = 4;

  int vocab_size = 32;
  int max_len = 17;
  int text_width = 64;
  int text_layers = 4;
  int text_heads = 4;
  int sentence_dim = 64;

  void validate() const;
  // Shape [C, h, w] of tap `stage` (2..N).
  nd::Shape tap_shape(int stage) const;
  std::vector<int> tap_stages() const;
};

// Padded token ids plus the position of the end token.
struct TokenSequence {
  std::vector<int> ids;  // length max_len
  int eos = 0;
  int valid_length() const { return eos + 1; }
};

template <typename T>
struct ImageStageFeatures {
  std::vector<Array<T>> features;  // taps 2..N, each [C_i, h_i, w_i]
};

template <typename T>
struct TextFeatures {
  std::vector<Array<T>> per_block;  // taps 2..N, each [L, C]
  Array<T> sentence;                // [1, C']
};

template <typename T>
struct TransformerLayer {
  nn::LayerNorm<T> ln1, ln2;
  nn::MultiHeadAttention<T> attn;
  nn::FeedForward<T> mlp;
  std::optional<nn::Adapter<T>> attn_adapter, mlp_adapter;

  static TransformerLayer create(ParamStore<T>& store, const std::string& prefix, int width, int heads);
  Array<T> operator()(const Array<T>& x, nd::AttentionMask mask) const;
};

template <typename T>
struct ConvBlock {
  nn::Conv2d<T> conv;
  nn::LayerNorm<T> norm;  // over channels at each position
  std::optional<nn::Adapter<T>> adapter;

  Array<T> operator()(const Array<T>& x) const;
};

template <typename T>
class ImageEncoder {
 public:
  ImageEncoder(ParamStore<T>& store, const BackboneConfig& config);

  // Runs block 1 and returns the stream state.
  Array<T> begin(const Array<T>& image) const;
  // Runs block `stage` (2..N) on the stream state.
  Array<T> run_stage(int stage, const Array<T>& state) const;
  // The tap view of a stream state, [C, h, w]. For vit the class token is
  // dropped and the token grid is reshaped to a map.
  Array<T> tap(const Array<T>& state) const;
  // state + delta, with delta in tap layout.
  Array<T> inject(const Array<T>& state, const Array<T>& delta) const;

  ImageStageFeatures<T> encode(const Array<T>& image) const;

  void attach_adapters(ParamStore<T>& store, int reduction);
  void attach_lora(ParamStore<T>& store, int rank, double alpha);
  // Folds every low-rank delta into its frozen weight.
  void merge_lora();

 private:
  BackboneConfig config_;
  // cnn
  std::optional<ConvBlock<T>> stem_;
  std::vector<std::vector<ConvBlock<T>>> stages_;
  // vit
  std::optional<nn::Conv2d<T>> patch_;
  Array<T> cls_, pos_;
  std::optional<nn::LayerNorm<T>> ln_pre_;
  std::vector<TransformerLayer<T>> layers_;

  int layers_per_block() const { return config_.vit_layers / config_.num_taps; }
  int grid() const { return config_.image_size / config_.vit_patch; }
};

template <typename T>
class TextEncoder {
 public:
  TextEncoder(ParamStore<T>& store, const BackboneConfig& config);

  // Pads ids to max_len with `pad_id`; the end token must be present.
  TokenSequence prepare(const std::vector<int>& ids, int eos_id, int pad_id) const;

  Array<T> begin(const TokenSequence& tokens) const;
  Array<T> run_block(int block, const Array<T>& x) const;
  // F_s: projection of the final-layer activation at the end token, [1, C'].
  Array<T> sentence(const Array<T>& x, const TokenSequence& tokens) const;

  TextFeatures<T> encode(const TokenSequence& tokens) const;

  void attach_adapters(ParamStore<T>& store, int reduction);
  void attach_lora(ParamStore<T>& store, int rank, double alpha);
  void merge_lora();

 private:
  BackboneConfig config_;
  Array<T> token_embedding_, pos_;
  std::vector<TransformerLayer<T>> layers_;
  nn::LayerNorm<T> ln_final_;
  Array<T> projection_;  // [C', C]

  int layers_per_block() const { return config_.text_layers / config_.num_taps; }
};

template <typename T>
struct Backbone {
  BackboneConfig config;
  ImageEncoder<T> image;
  TextEncoder<T> text;

  Backbone(ParamStore<T>& store, const BackboneConfig& cfg);
};

// Marks every "backbone." parameter frozen; returns how many arrays matched.
template <typename T>
std::size_t freeze_backbone(ParamStore<T>& store);

// Causal text self-attention; pads after the end token never reach it.
nd::AttentionMask text_mask();

}  // namespace etris::backbone
