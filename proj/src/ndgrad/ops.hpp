// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable primitives. Every function returns a fresh array and never
// writes to its inputs' values; gradients flow back with +=.
//
// Layout conventions:
//   feature maps  [C, h, w]
//   token rows    [L, C]
//   linear weight [out, in]
//   conv weight   [C_out, C_in, k, k]
//   deconv weight [C_in, C_out, k, k]

#pragma once

#include <optional>
#include <vector>

#include "ndgrad/array.hpp"

namespace etris::nd {

template <typename T>
using OptArray = std::optional<Array<T>>;

// Elementwise, identical shapes.
template <typename T> Array<T> add(const Array<T>& a, const Array<T>& b);
template <typename T> Array<T> sub(const Array<T>& a, const Array<T>& b);
template <typename T> Array<T> mul(const Array<T>& a, const Array<T>& b);
template <typename T> Array<T> scale(const Array<T>& a, T factor);

// x[M, N] + v[N] broadcast over rows.
template <typename T> Array<T> add_rowwise(const Array<T>& x, const Array<T>& v);
// x[M, N] * v[N] broadcast over rows.
template <typename T> Array<T> mul_rowwise(const Array<T>& x, const Array<T>& v);

template <typename T> Array<T> matmul(const Array<T>& a, const Array<T>& b);
// x[M, in] -> [M, out]; weight [out, in].
template <typename T> Array<T> linear(const Array<T>& x, const Array<T>& weight, const OptArray<T>& bias);
template <typename T> Array<T> linear(const Array<T>& x, const Array<T>& weight) {
  return linear(x, weight, OptArray<T>{});
}

template <typename T> Array<T> transpose(const Array<T>& x);
template <typename T> Array<T> reshape(const Array<T>& x, Shape shape);
// Concatenates along axis 0 (the channel axis of [C,h,w], the row axis of [L,C]).
template <typename T> Array<T> concat(const std::vector<Array<T>>& parts);
// Rows [begin, end) along axis 0.
template <typename T> Array<T> slice(const Array<T>& x, int begin, int end);
// table[V, C] indexed by ids -> [ids.size(), C].
template <typename T> Array<T> gather_rows(const Array<T>& table, const std::vector<int>& ids);

// Normalizes over the last axis.
template <typename T>
Array<T> layer_norm(const Array<T>& x, const Array<T>& gamma, const Array<T>& beta, T eps = T(1e-5));
// Softmax over the last axis (row max subtracted first).
template <typename T> Array<T> softmax(const Array<T>& x);
template <typename T> Array<T> sigmoid(const Array<T>& x);
template <typename T> Array<T> gelu(const Array<T>& x);
template <typename T> Array<T> relu(const Array<T>& x);

template <typename T> Array<T> sum(const Array<T>& x);
template <typename T> Array<T> mean(const Array<T>& x);
// Mean over one axis; that axis is removed from the result.
template <typename T> Array<T> mean_axis(const Array<T>& x, int axis);

struct Padding {
  int begin = 0;  // top/left
  int end = 0;    // bottom/right
};

template <typename T>
Array<T> conv2d(const Array<T>& input, const Array<T>& weight, const OptArray<T>& bias, int stride,
                Padding padding);
template <typename T>
Array<T> conv2d(const Array<T>& input, const Array<T>& weight, const OptArray<T>& bias, int stride,
                int padding) {
  return conv2d(input, weight, bias, stride, Padding{padding, padding});
}

// Only k = stride = 2 is supported.
template <typename T>
Array<T> transposed_conv2d(const Array<T>& input, const Array<T>& weight, const OptArray<T>& bias,
                           int stride);

// Bilinear resize of [C,h,w] with half-pixel centers (align_corners = false).
template <typename T> Array<T> resize_bilinear(const Array<T>& x, int out_h, int out_w);
template <typename T> Array<T> upsample_nearest(const Array<T>& x, int factor);

// [C,h,w] <-> [h*w, C]
template <typename T> Array<T> map_to_tokens(const Array<T>& x);
template <typename T> Array<T> tokens_to_map(const Array<T>& tokens, int h, int w);

struct AttentionMask {
  bool causal = false;
  int key_len = -1;  // keys at index >= key_len are ignored; -1 means all
};

// Scaled dot-product attention split over `heads` column groups:
// out[:, g] = softmax(q[:, g] k[:, g]^T / sqrt(d_head)) v[:, g].
template <typename T>
Array<T> attention(const Array<T>& q, const Array<T>& k, const Array<T>& v, int heads,
                   AttentionMask mask = {});

// Raw attention weights per head, [heads, Lq, Lk]; no gradient.
template <typename T>
std::vector<T> attention_weights(const Array<T>& q, const Array<T>& k, int heads, AttentionMask mask = {});

}  // namespace etris::nd
