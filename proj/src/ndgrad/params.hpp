// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ndgrad/array.hpp"

namespace etris::nd {

struct Init {
  enum class Kind { zeros, ones, normal, uniform };
  Kind kind = Kind::zeros;
  double scale = 0.0;  // std for normal, bound for uniform

  static Init zeros() { return {Kind::zeros, 0.0}; }
  static Init ones() { return {Kind::ones, 0.0}; }
  static Init normal(double std) { return {Kind::normal, std}; }
  static Init uniform(double bound) { return {Kind::uniform, bound}; }
};

template <typename T>
struct Parameter {
  std::string name;
  Array<T> array;
  bool trainable = false;
};

// Registry of every named parameter in a model. Initial values are drawn from
// a stream seeded by (root seed, parameter name), so a parameter's initial
// value does not depend on what else was registered before it.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  // Throws InternalError when the name is already registered.
  Array<T> add(const std::string& name, Shape shape, Init init, bool trainable = true);

  std::uint64_t seed() const { return seed_; }
  std::size_t size() const { return params_.size(); }
  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }
  const Parameter<T>& at(std::string_view name) const;
  Parameter<T>& at(std::string_view name);

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  // Marks every parameter whose name satisfies `select`; returns how many matched.
  std::size_t set_trainable(const std::function<bool(const std::string&)>& select, bool trainable);
  void zero_grad();

  std::size_t total_count() const;
  std::size_t trainable_count() const;

 private:
  std::uint64_t seed_;
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

void fill_init(std::span<float> values, Init init, std::uint64_t seed);
void fill_init(std::span<double> values, Init init, std::uint64_t seed);

inline bool has_prefix(std::string_view name, std::string_view prefix) {
  return name.substr(0, prefix.size()) == prefix;
}

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace etris::nd
