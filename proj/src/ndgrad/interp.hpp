// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <vector>

namespace etris::nd {

struct LinearTap {
  int i0;
  int i1;
  double w0;
  double w1;
};

// 1-D linear interpolation taps with half-pixel centers (align_corners =
// false); source coordinates below zero clamp to the first sample.
inline std::vector<LinearTap> bilinear_taps(int in_size, int out_size) {
  std::vector<LinearTap> taps(static_cast<std::size_t>(out_size));
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = std::min(static_cast<int>(src), in_size - 1);
    int i1 = i0 < in_size - 1 ? i0 + 1 : i0;
    double frac = src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

// Nearest source index for a destination sample, sampling at cell centers.
inline int nearest_source(int out_index, int in_size, int out_size) {
  const double src = (out_index + 0.5) * static_cast<double>(in_size) / out_size;
  return std::min(static_cast<int>(src), in_size - 1);
}

}  // namespace etris::nd
