// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Parameterized building blocks shared by the encoders, the Bridger and the
// decoder. Each block registers its arrays in a ParamStore under a dotted
// name prefix and keeps shallow handles to them.

#pragma once

#include <optional>
#include <string>

#include "ndgrad/ops.hpp"
#include "ndgrad/params.hpp"

namespace etris::nn {

using nd::Array;
using nd::Init;
using nd::ParamStore;

// Default weight init: N(0, 1/fan_in).
Init fan_in_init(int fan_in);

// Low-rank delta (alpha / rank) * B A added to a frozen weight.
template <typename T>
struct LowRank {
  Array<T> a;  // [rank, in]
  Array<T> b;  // [out, rank]
  T scaling = T(1);
};

template <typename T>
struct Linear {
  Array<T> weight;  // [out, in]
  nd::OptArray<T> bias;
  std::optional<LowRank<T>> lora;

  static Linear create(ParamStore<T>& store, const std::string& prefix, int in, int out, bool trainable,
                       Init weight_init, bool with_bias = true);
  static Linear create(ParamStore<T>& store, const std::string& prefix, int in, int out, bool trainable) {
    return create(store, prefix, in, out, trainable, fan_in_init(in));
  }

  int in_features() const { return weight.dim(1); }
  int out_features() const { return weight.dim(0); }
  Array<T> operator()(const Array<T>& x) const;

  // Folds the low-rank delta into the weight and drops it.
  void merge_lora();
};

template <typename T>
struct LayerNorm {
  Array<T> gamma;
  Array<T> beta;

  static LayerNorm create(ParamStore<T>& store, const std::string& prefix, int width, bool trainable);
  Array<T> operator()(const Array<T>& x) const { return nd::layer_norm(x, gamma, beta); }
};

template <typename T>
struct Conv2d {
  Array<T> weight;  // [out, in, k, k]
  nd::OptArray<T> bias;
  int stride = 1;
  nd::Padding padding;

  static Conv2d create(ParamStore<T>& store, const std::string& prefix, int in, int out, int kernel, int stride,
                       nd::Padding padding, bool trainable, Init weight_init, bool with_bias = true);
  static Conv2d create(ParamStore<T>& store, const std::string& prefix, int in, int out, int kernel, int stride,
                       int padding, bool trainable) {
    return create(store, prefix, in, out, kernel, stride, nd::Padding{padding, padding}, trainable,
                  fan_in_init(in * kernel * kernel));
  }

  Array<T> operator()(const Array<T>& x) const { return nd::conv2d(x, weight, bias, stride, padding); }
};

template <typename T>
struct Deconv2x2 {
  Array<T> weight;  // [in, out, 2, 2]
  nd::OptArray<T> bias;

  static Deconv2x2 create(ParamStore<T>& store, const std::string& prefix, int in, int out, bool trainable);
  Array<T> operator()(const Array<T>& x) const { return nd::transposed_conv2d(x, weight, bias, 2); }
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  int heads = 1;

  // kv_width: width of the key/value source (projected to `width`).
  static MultiHeadAttention create(ParamStore<T>& store, const std::string& prefix, int width, int kv_width,
                                   int heads, bool trainable, bool zero_output = false);

  Array<T> operator()(const Array<T>& query_in, const Array<T>& key_in, const Array<T>& value_in,
                      nd::AttentionMask mask = {}) const;
  Array<T> operator()(const Array<T>& query_in, const Array<T>& kv_in, nd::AttentionMask mask = {}) const {
    return (*this)(query_in, kv_in, kv_in, mask);
  }
};

template <typename T>
struct FeedForward {
  Linear<T> fc1, fc2;

  static FeedForward create(ParamStore<T>& store, const std::string& prefix, int width, int hidden, bool trainable,
                            bool zero_output = false);
  Array<T> operator()(const Array<T>& x) const { return fc2(nd::gelu(fc1(x))); }
};

// Bottleneck adapter: x + up(gelu(down(x))), up zero-initialized.
template <typename T>
struct Adapter {
  Linear<T> down, up;

  static Adapter create(ParamStore<T>& store, const std::string& prefix, int width, int reduction);
  Array<T> operator()(const Array<T>& tokens) const;
  Array<T> apply_map(const Array<T>& map) const;
};

}  // namespace etris::nn
