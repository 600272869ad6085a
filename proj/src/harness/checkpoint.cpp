// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "common/errors.hpp"
#include "harness/digest.hpp"

namespace etris::harness {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  template <typename T>
  void values(std::span<const T> v) {
    for (T x : v) {
      if constexpr (sizeof(T) == 4) u32(std::bit_cast<std::uint32_t>(x));
      else u64(std::bit_cast<std::uint64_t>(x));
    }
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end, std::string path)
      : bytes_(bytes), end_(end), path_(std::move(path)) {}
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw InputError("checkpoint '" + path_ + "' is truncated");
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  template <typename T>
  void values(std::span<T> out) {
    for (T& x : out) {
      if constexpr (sizeof(T) == 4) x = std::bit_cast<T>(u32());
      else x = std::bit_cast<T>(u64());
    }
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::string path_;
  std::size_t pos_ = 0;
};

const char kMagic[4] = {'E', 'T', 'R', 'B'};

bool stored(const std::string& name) { return !nd::has_prefix(name, "backbone."); }

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const EtrisModel<T>& model, const RunConfig& config,
                     const nlohmann::ordered_json& extra) {
  nlohmann::ordered_json header;
  header["format_version"] = kCheckpointVersion;
  header["seed"] = model.config().seed;
  header["dtype"] = nd::dtype_of<T>() == nd::DType::f32 ? "f32" : "f64";
  header["backbone_sha256"] = model.backbone_sha256();
  header["config"] = to_json(config);
  for (const auto& [k, v] : extra.items()) header[k] = v;

  Writer w;
  w.raw(std::string(kMagic, 4));
  w.u32(kCheckpointVersion);
  const std::string text = header.dump();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text);
  std::uint32_t count = 0;
  for (const auto& p : model.store()) count += stored(p.name) ? 1 : 0;
  w.u32(count);
  for (const auto& p : model.store()) {
    if (!stored(p.name)) continue;
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.raw(p.name);
    w.u8(static_cast<std::uint8_t>(nd::dtype_of<T>()));
    w.u32(static_cast<std::uint32_t>(p.array.rank()));
    for (int d : p.array.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.u64(p.array.size() * sizeof(T));
    w.values(p.array.values());
  }
  const std::uint32_t crc = crc32_of(w.bytes());
  w.u32(crc);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw InputError("failed writing checkpoint '" + path + "'");
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw InputError("'" + path + "' is not a checkpoint");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i) stored_crc |= static_cast<std::uint32_t>(bytes[body + static_cast<std::size_t>(i)]) << (8 * i);
  if (crc32_of(std::span<const std::uint8_t>(bytes.data(), body)) != stored_crc)
    throw InputError("checkpoint '" + path + "' failed its CRC32 check");

  Reader r(bytes, body, path);
  r.raw(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw InputError("checkpoint '" + path + "' has version " + std::to_string(version));
  LoadedCheckpoint<T> out;
  try {
    out.header = nlohmann::json::parse(r.raw(r.u32()));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("checkpoint '" + path + "' has a malformed header: " + e.what());
  }
  const std::string dtype = out.header.value("dtype", "");
  if (dtype != (nd::dtype_of<T>() == nd::DType::f32 ? "f32" : "f64"))
    throw InputError("checkpoint '" + path + "' stores dtype '" + dtype + "'");
  out.config = apply_config(RunConfig{}, out.header.at("config"));
  out.model = std::make_unique<EtrisModel<T>>(out.config.model);
  if (out.model->backbone_sha256() != out.header.value("backbone_sha256", ""))
    throw InputError("checkpoint '" + path + "': regenerated backbone does not match the recorded SHA-256");

  auto& store = out.model->store();
  std::set<std::string> seen;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.raw(r.u32());
    const auto dt = static_cast<nd::DType>(r.u8());
    const std::uint32_t rank = r.u32();
    nd::Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<int>(r.u32()));
    const std::uint64_t nbytes = r.u64();
    if (!store.contains(name) || !stored(name))
      throw InputError("checkpoint '" + path + "' has unexpected array '" + name + "'");
    auto& param = store.at(name);
    if (dt != nd::dtype_of<T>() || shape != param.array.shape() || nbytes != param.array.size() * sizeof(T))
      throw InputError("checkpoint '" + path + "': array '" + name + "' has the wrong dtype or shape");
    r.values(param.array.mutable_values());
    seen.insert(name);
  }
  if (!r.done()) throw InputError("checkpoint '" + path + "' has trailing bytes");
  for (const auto& p : store)
    if (stored(p.name) && !seen.count(p.name))
      throw InputError("checkpoint '" + path + "' is missing array '" + p.name + "'");
  return out;
}

template void save_checkpoint(const std::string&, const EtrisModel<float>&, const RunConfig&,
                              const nlohmann::ordered_json&);
template void save_checkpoint(const std::string&, const EtrisModel<double>&, const RunConfig&,
                              const nlohmann::ordered_json&);
template LoadedCheckpoint<float> load_checkpoint<float>(const std::string&);
template LoadedCheckpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace etris::harness
