// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "nn/layers.hpp"

#include <cmath>

#include "common/errors.hpp"

namespace etris::nn {

Init fan_in_init(int fan_in) { return Init::normal(1.0 / std::sqrt(static_cast<double>(fan_in))); }

template <typename T>
Linear<T> Linear<T>::create(ParamStore<T>& store, const std::string& prefix, int in, int out, bool trainable,
                            Init weight_init, bool with_bias) {
  Linear layer;
  layer.weight = store.add(prefix + ".weight", {out, in}, weight_init, trainable);
  if (with_bias) layer.bias = store.add(prefix + ".bias", {out}, Init::zeros(), trainable);
  return layer;
}

template <typename T>
Array<T> Linear<T>::operator()(const Array<T>& x) const {
  Array<T> y = nd::linear(x, weight, bias);
  if (lora) {
    Array<T> delta = nd::linear(nd::linear(x, lora->a), lora->b);
    y = nd::add(y, nd::scale(delta, lora->scaling));
  }
  return y;
}

template <typename T>
void Linear<T>::merge_lora() {
  if (!lora) return;
  const int out = out_features(), in = in_features(), rank = lora->a.dim(0);
  auto w = weight.mutable_values();
  auto a = lora->a.values();
  auto b = lora->b.values();
  for (int i = 0; i < out; ++i)
    for (int j = 0; j < in; ++j) {
      T delta = 0;
      for (int r = 0; r < rank; ++r) delta += b[static_cast<std::size_t>(i) * rank + r] * a[static_cast<std::size_t>(r) * in + j];
      w[static_cast<std::size_t>(i) * in + j] += lora->scaling * delta;
    }
  lora.reset();
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(ParamStore<T>& store, const std::string& prefix, int width, bool trainable) {
  return {store.add(prefix + ".gamma", {width}, Init::ones(), trainable),
          store.add(prefix + ".beta", {width}, Init::zeros(), trainable)};
}

template <typename T>
Conv2d<T> Conv2d<T>::create(ParamStore<T>& store, const std::string& prefix, int in, int out, int kernel, int stride,
                            nd::Padding padding, bool trainable, Init weight_init, bool with_bias) {
  Conv2d layer;
  layer.weight = store.add(prefix + ".weight", {out, in, kernel, kernel}, weight_init, trainable);
  if (with_bias) layer.bias = store.add(prefix + ".bias", {out}, Init::zeros(), trainable);
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

template <typename T>
Deconv2x2<T> Deconv2x2<T>::create(ParamStore<T>& store, const std::string& prefix, int in, int out, bool trainable) {
  Deconv2x2 layer;
  layer.weight = store.add(prefix + ".weight", {in, out, 2, 2}, fan_in_init(in), trainable);
  layer.bias = store.add(prefix + ".bias", {out}, Init::zeros(), trainable);
  return layer;
}

template <typename T>
MultiHeadAttention<T> MultiHeadAttention<T>::create(ParamStore<T>& store, const std::string& prefix, int width,
                                                    int kv_width, int heads, bool trainable, bool zero_output) {
  if (heads < 1 || width % heads != 0)
    throw ConfigError(prefix + ": width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                      " heads");
  MultiHeadAttention mha;
  mha.q = Linear<T>::create(store, prefix + ".q", width, width, trainable);
  mha.k = Linear<T>::create(store, prefix + ".k", kv_width, width, trainable);
  mha.v = Linear<T>::create(store, prefix + ".v", kv_width, width, trainable);
  mha.o = Linear<T>::create(store, prefix + ".o", width, width, trainable,
                            zero_output ? Init::zeros() : fan_in_init(width));
  mha.heads = heads;
  return mha;
}

template <typename T>
Array<T> MultiHeadAttention<T>::operator()(const Array<T>& query_in, const Array<T>& key_in,
                                           const Array<T>& value_in, nd::AttentionMask mask) const {
  return o(nd::attention(q(query_in), k(key_in), v(value_in), heads, mask));
}

template <typename T>
FeedForward<T> FeedForward<T>::create(ParamStore<T>& store, const std::string& prefix, int width, int hidden,
                                      bool trainable, bool zero_output) {
  FeedForward ffn;
  ffn.fc1 = Linear<T>::create(store, prefix + ".fc1", width, hidden, trainable);
  ffn.fc2 = Linear<T>::create(store, prefix + ".fc2", hidden, width, trainable,
                              zero_output ? Init::zeros() : fan_in_init(hidden));
  return ffn;
}

template <typename T>
Adapter<T> Adapter<T>::create(ParamStore<T>& store, const std::string& prefix, int width, int reduction) {
  if (reduction < 1 || width % reduction != 0)
    throw ConfigError(prefix + ": width " + std::to_string(width) + " not divisible by reduction factor " +
                      std::to_string(reduction));
  const int hidden = width / reduction;
  Adapter adapter;
  adapter.down = Linear<T>::create(store, prefix + ".down", width, hidden, true);
  adapter.up = Linear<T>::create(store, prefix + ".up", hidden, width, true, Init::zeros());
  return adapter;
}

template <typename T>
Array<T> Adapter<T>::operator()(const Array<T>& tokens) const {
  return nd::add(tokens, up(nd::gelu(down(tokens))));
}

template <typename T>
Array<T> Adapter<T>::apply_map(const Array<T>& map) const {
  const int h = map.dim(1), w = map.dim(2);
  Array<T> delta = nd::tokens_to_map(up(nd::gelu(down(nd::map_to_tokens(map)))), h, w);
  return nd::add(map, delta);
}

template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct Deconv2x2<float>;
template struct Deconv2x2<double>;
template struct MultiHeadAttention<float>;
template struct MultiHeadAttention<double>;
template struct FeedForward<float>;
template struct FeedForward<double>;
template struct Adapter<float>;
template struct Adapter<double>;

}  // namespace etris::nn
