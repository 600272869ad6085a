// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Fixed word-level vocabulary for the synthetic referring expressions.

#pragma once

#include <string>
#include <vector>

namespace etris::harness {

inline constexpr int kPadId = 0;
inline constexpr int kSosId = 1;
inline constexpr int kEosId = 2;

const std::vector<std::string>& vocabulary();

// [SOS] + word ids + [EOS], padded with kPadId to max_len. Throws InputError
// on an unknown word or when the result would exceed max_len.
std::vector<int> tokenize(const std::string& expression, int max_len);
// Words between [SOS] and [EOS] joined by single spaces.
std::string detokenize(const std::vector<int>& ids);
// Index of the [EOS] token; throws InputError when absent.
int eos_position(const std::vector<int>& ids);

}  // namespace etris::harness
