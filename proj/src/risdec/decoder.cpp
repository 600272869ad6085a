// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "risdec/decoder.hpp"

#include <cmath>

#include "common/errors.hpp"

namespace etris::risdec {

void DecoderConfig::validate() const {
  if (dim < 1 || layers < 1 || ffn < 1 || proj_dim < 1) throw ConfigError("decoder sizes must be positive");
  if (heads < 1 || dim % heads != 0)
    throw ConfigError("decoder.dim " + std::to_string(dim) + " is not divisible by decoder.heads " +
                      std::to_string(heads));
  if (kernel_k < 1 || kernel_k % 2 == 0) throw ConfigError("decoder.kernel_k must be a positive odd number");
  if (dim % 4 != 0) throw ConfigError("decoder.dim must be a multiple of 4 for the positional encoding");
}

template <typename T>
DynamicKernel<T> split_kernel(const Array<T>& z_t, int depth, int k) {
  const int width = k * k * depth + 1;
  if (z_t.rank() != 2 || z_t.dim(0) != 1 || z_t.dim(1) != width)
    throw ConfigError("generated kernel has shape " + nd::shape_str(z_t.shape()) + ", expected [1," +
                      std::to_string(width) + "] for K=" + std::to_string(k) + ", D=" + std::to_string(depth));
  const Array<T> column = nd::reshape(z_t, {width, 1});
  return {nd::reshape(nd::slice(column, 0, width - 1), {1, depth, k, k}),
          nd::reshape(nd::slice(column, width - 1, width), {1})};
}

template <typename T>
Array<T> dynamic_conv(const Array<T>& z_c, const DynamicKernel<T>& kernel) {
  const int k = kernel.weights.dim(2);
  const Array<T> out = nd::conv2d(z_c, kernel.weights, nd::OptArray<T>(kernel.bias), 1, k / 2);
  return nd::reshape(out, {out.dim(1), out.dim(2)});
}

template <typename T>
Array<T> coord_channels(int h, int w) {
  auto axis = [](int i, int n) { return n > 1 ? T(-1) + T(2) * T(i) / T(n - 1) : T(0); };
  std::vector<T> values(static_cast<std::size_t>(2 * h * w));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      values[static_cast<std::size_t>(y * w + x)] = axis(x, w);
      values[static_cast<std::size_t>(h * w + y * w + x)] = axis(y, h);
    }
  return Array<T>({2, h, w}, std::move(values));
}

template <typename T>
Array<T> sine_position_encoding(int h, int w, int dim) {
  if (dim % 4 != 0) throw ConfigError("positional encoding width must be a multiple of 4");
  const int half = dim / 2;
  std::vector<T> values(static_cast<std::size_t>(h * w * dim));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      T* row = values.data() + static_cast<std::size_t>(y * w + x) * dim;
      for (int i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / half);
        row[2 * i] = static_cast<T>(std::sin(y * freq));
        row[2 * i + 1] = static_cast<T>(std::cos(y * freq));
        row[half + 2 * i] = static_cast<T>(std::sin(x * freq));
        row[half + 2 * i + 1] = static_cast<T>(std::cos(x * freq));
      }
    }
  return Array<T>({h * w, dim}, std::move(values));
}

template <typename T>
Array<T> GlobalAlignLayer<T>::operator()(const Array<T>& x, const Array<T>& pe, const Array<T>& sentence_key,
                                         const Array<T>& sentence_value) const {
  const Array<T> qk = nd::add(x, pe);
  Array<T> y = ln1(nd::add(x, self_attn(qk, qk, x)));
  y = ln2(nd::add(y, cross_attn(nd::add(y, pe), sentence_key, sentence_value)));
  return ln3(nd::add(y, ffn(y)));
}

template <typename T>
Decoder<T>::Decoder(ParamStore<T>& store, const DecoderConfig& config, const BackboneConfig& backbone)
    : config_(config), grid_(backbone.image_size / 16) {
  config_.validate();
  const int c = config_.dim, sd = backbone.sentence_dim;
  const std::vector<int> taps = backbone.tap_stages();
  for (int stage : taps) {
    const std::string prefix = "decoder.stage" + std::to_string(stage);
    stage_proj_.push_back(nn::Conv2d<T>::create(store, prefix + ".proj", backbone.tap_shape(stage)[0], c, 1, 1, 0,
                                                true));
    stage_attn_.push_back(nn::MultiHeadAttention<T>::create(store, prefix + ".attn", c, sd, config_.heads, true));
  }
  const int stages = static_cast<int>(taps.size());
  aggregate_ = nn::Conv2d<T>::create(store, "decoder.aggregate", stages * c, c, 1, 1, 0, true);
  coord_fuse_ = nn::Conv2d<T>::create(store, "decoder.coord_fuse", c + 2, c, 3, 1, 1, true);
  for (int i = 0; i < config_.layers; ++i) {
    const std::string prefix = "decoder.layer" + std::to_string(i);
    layers_.push_back({
        nn::MultiHeadAttention<T>::create(store, prefix + ".self_attn", c, c, config_.heads, true),
        nn::MultiHeadAttention<T>::create(store, prefix + ".cross_attn", c, sd, config_.heads, true),
        nn::FeedForward<T>::create(store, prefix + ".ffn", c, config_.ffn, true),
        nn::LayerNorm<T>::create(store, prefix + ".ln1", c, true),
        nn::LayerNorm<T>::create(store, prefix + ".ln2", c, true),
        nn::LayerNorm<T>::create(store, prefix + ".ln3", c, true),
    });
  }
  sentence_pos_ = store.add("decoder.sentence_pos", {1, sd}, nd::Init::zeros(), true);
  const int d = config_.proj_dim;
  proj_conv_ = nn::Conv2d<T>::create(store, "decoder.proj.conv", c, d, 3, 1, 1, true);
  proj_out_ = nn::Conv2d<T>::create(store, "decoder.proj.out", d, d, 1, 1, 0, true);
  text_kernel_ = nn::Linear<T>::create(store, "decoder.proj.text", sd, config_.kernel_width(), true,
                                       nd::Init::normal(1.0 / std::sqrt(double(sd) * config_.kernel_width())));
}

template <typename T>
Array<T> Decoder<T>::hierarchical_align(const std::vector<Array<T>>& stages, const Array<T>& sentence) const {
  if (stages.size() != stage_proj_.size())
    throw ConfigError("decoder expects " + std::to_string(stage_proj_.size()) + " stage features, got " +
                      std::to_string(stages.size()));
  std::vector<Array<T>> parts;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    Array<T> f = stage_proj_[i](stages[i]);
    if (f.dim(1) != grid_ || f.dim(2) != grid_) f = nd::resize_bilinear(f, grid_, grid_);
    const Array<T> tokens = nd::map_to_tokens(f);
    // With a single key the attention output is the same at every position,
    // so it acts as a sentence-conditioned gate on the visual tokens.
    const Array<T> gated = nd::mul(tokens, stage_attn_[i](tokens, sentence));
    parts.push_back(nd::tokens_to_map(gated, grid_, grid_));
  }
  const Array<T> merged = aggregate_(parts.size() == 1 ? parts[0] : nd::concat(parts));
  return coord_fuse_(nd::concat(std::vector<Array<T>>{merged, coord_channels<T>(grid_, grid_)}));
}

template <typename T>
Array<T> Decoder<T>::global_align(const Array<T>& fused, const Array<T>& sentence) const {
  const Array<T> pe = sine_position_encoding<T>(fused.dim(1), fused.dim(2), config_.dim);
  const Array<T> key = nd::add(sentence, sentence_pos_);
  Array<T> x = nd::map_to_tokens(fused);
  for (const auto& layer : layers_) x = layer(x, pe, key, sentence);
  return x;
}

template <typename T>
Array<T> Decoder<T>::project(const Array<T>& f_c, const Array<T>& sentence) const {
  const Array<T> map = nd::tokens_to_map(f_c, grid_, grid_);
  const Array<T> up = nd::resize_bilinear(map, 4 * grid_, 4 * grid_);
  const Array<T> z_c = proj_out_(nd::gelu(proj_conv_(up)));
  return dynamic_conv(z_c, split_kernel(text_kernel_(sentence), config_.proj_dim, config_.kernel_k));
}

template <typename T>
Array<T> Decoder<T>::forward(const std::vector<Array<T>>& stages, const Array<T>& sentence) const {
  return project(global_align(hierarchical_align(stages, sentence), sentence), sentence);
}

#define ETRIS_INSTANTIATE(T)                                                              \
  template DynamicKernel<T> split_kernel(const Array<T>&, int, int);                      \
  template Array<T> dynamic_conv(const Array<T>&, const DynamicKernel<T>&);               \
  template Array<T> coord_channels<T>(int, int);                                          \
  template Array<T> sine_position_encoding<T>(int, int, int);                             \
  template struct GlobalAlignLayer<T>;                                                    \
  template class Decoder<T>;

ETRIS_INSTANTIATE(float)
ETRIS_INSTANTIATE(double)

}  // namespace etris::risdec
