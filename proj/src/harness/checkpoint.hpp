// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoint: "ETRB", u32 version, u32 header length, JSON header,
// u32 record count, then per array: u32 name length, name, u8 dtype,
// u32 rank, u32 dims, u64 byte count, raw little-endian values; finally a
// CRC32 of everything before it. Frozen encoder weights are not stored; they
// are regenerated from the seed and checked against the recorded SHA-256.

#pragma once

#include <memory>
#include <string>

#include "harness/model.hpp"
#include "json.hpp"

namespace etris::harness {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, const EtrisModel<T>& model, const RunConfig& config,
                     const nlohmann::ordered_json& extra = nlohmann::ordered_json::object());

template <typename T>
struct LoadedCheckpoint {
  RunConfig config;
  std::unique_ptr<EtrisModel<T>> model;
  nlohmann::json header;
};

// Throws InputError on a corrupt, truncated or mismatched file.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path);

}  // namespace etris::harness
