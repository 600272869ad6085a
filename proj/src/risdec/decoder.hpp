// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Segmentation head: hierarchical alignment of the tapped stages against the
// sentence vector, a small cross-modal transformer over the fused grid, and a
// projector whose last convolution is generated from the sentence.

#pragma once

#include <vector>

#include "backbone/backbone.hpp"

namespace etris::risdec {

using backbone::BackboneConfig;
using nd::Array;
using nd::ParamStore;

struct DecoderConfig {
  int dim = 64;  // C_dec
  int layers = 3;
  int heads = 8;
  int ffn = 512;
  int kernel_k = 3;
  int proj_dim = 32;  // D

  void validate() const;
  int kernel_width() const { return kernel_k * kernel_k * proj_dim + 1; }
};

// Single-output-channel convolution split from a generated vector.
template <typename T>
struct DynamicKernel {
  Array<T> weights;  // [1, D, K, K]
  Array<T> bias;     // [1]
};

// Splits a [1, K*K*D + 1] vector; throws ConfigError when the width is wrong.
template <typename T>
DynamicKernel<T> split_kernel(const Array<T>& z_t, int depth, int k);

// conv2d(z_c, kernel, pad K/2) for z_c [D, h, w] -> [h, w].
template <typename T>
Array<T> dynamic_conv(const Array<T>& z_c, const DynamicKernel<T>& kernel);

// [2, h, w]: x then y, each in [-1, 1] with the corner pixels at the ends.
template <typename T>
Array<T> coord_channels(int h, int w);

// [h*w, dim]: the first half encodes the row index, the second the column,
// each as interleaved sin/cos pairs over geometric frequencies.
template <typename T>
Array<T> sine_position_encoding(int h, int w, int dim);

template <typename T>
struct GlobalAlignLayer {
  nn::MultiHeadAttention<T> self_attn, cross_attn;
  nn::FeedForward<T> ffn;
  nn::LayerNorm<T> ln1, ln2, ln3;

  // x [hw, C_dec]; pe [hw, C_dec]; sentence_key/value [1, C'].
  Array<T> operator()(const Array<T>& x, const Array<T>& pe, const Array<T>& sentence_key,
                      const Array<T>& sentence_value) const;
};

template <typename T>
class Decoder {
 public:
  Decoder(ParamStore<T>& store, const DecoderConfig& config, const BackboneConfig& backbone);

  const DecoderConfig& config() const { return config_; }
  int grid() const { return grid_; }

  // stages: taps 2..N; sentence [1, C'] -> fused map [C_dec, H/16, W/16].
  Array<T> hierarchical_align(const std::vector<Array<T>>& stages, const Array<T>& sentence) const;
  // fused map -> F_c tokens [H/16 * W/16, C_dec].
  Array<T> global_align(const Array<T>& fused, const Array<T>& sentence) const;
  // F_c tokens -> logits [H/4, W/4].
  Array<T> project(const Array<T>& f_c, const Array<T>& sentence) const;

  Array<T> forward(const std::vector<Array<T>>& stages, const Array<T>& sentence) const;

  const std::vector<GlobalAlignLayer<T>>& layers() const { return layers_; }

 private:
  DecoderConfig config_;
  int grid_;
  std::vector<nn::Conv2d<T>> stage_proj_;
  std::vector<nn::MultiHeadAttention<T>> stage_attn_;
  nn::Conv2d<T> aggregate_;
  nn::Conv2d<T> coord_fuse_;
  std::vector<GlobalAlignLayer<T>> layers_;
  Array<T> sentence_pos_;  // learned offset added to the sentence key
  nn::Conv2d<T> proj_conv_, proj_out_;
  nn::Linear<T> text_kernel_;
};

}  // namespace etris::risdec
