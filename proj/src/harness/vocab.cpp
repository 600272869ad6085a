// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness/vocab.hpp"

#include <algorithm>
#include <sstream>

#include "common/errors.hpp"

namespace etris::harness {

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = {
      "<pad>", "<sos>",  "<eos>",  "the",    "small",  "large",    "red",  "green", "blue", "yellow",
      "circle", "square", "triangle", "on", "left", "right", "top", "bottom",
  };
  return words;
}

std::vector<int> tokenize(const std::string& expression, int max_len) {
  const auto& words = vocabulary();
  std::vector<int> ids{kSosId};
  std::istringstream in(expression);
  std::string word;
  while (in >> word) {
    auto it = std::find(words.begin() + 3, words.end(), word);
    if (it == words.end()) throw InputError("word '" + word + "' is not in the vocabulary");
    ids.push_back(static_cast<int>(it - words.begin()));
  }
  ids.push_back(kEosId);
  if (static_cast<int>(ids.size()) > max_len)
    throw InputError("expression needs " + std::to_string(ids.size()) + " tokens, the limit is " +
                     std::to_string(max_len));
  ids.resize(static_cast<std::size_t>(max_len), kPadId);
  return ids;
}

int eos_position(const std::vector<int>& ids) {
  auto it = std::find(ids.begin(), ids.end(), kEosId);
  if (it == ids.end()) throw InputError("token sequence has no end token");
  return static_cast<int>(it - ids.begin());
}

std::string detokenize(const std::vector<int>& ids) {
  const auto& words = vocabulary();
  const int eos = eos_position(ids);
  std::string out;
  for (int i = 0; i < eos; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id == kSosId || id == kPadId) continue;
    if (id < 0 || id >= static_cast<int>(words.size())) throw InputError("token id " + std::to_string(id) + " is out of range");
    if (!out.empty()) out += ' ';
    out += words[static_cast<std::size_t>(id)];
  }
  return out;
}

}  // namespace etris::harness
