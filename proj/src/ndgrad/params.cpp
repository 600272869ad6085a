// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "ndgrad/params.hpp"

#include "common/errors.hpp"
#include "ndgrad/rng.hpp"

namespace etris::nd {

namespace {

template <typename T>
void fill(std::span<T> values, Init init, std::uint64_t seed) {
  switch (init.kind) {
    case Init::Kind::zeros:
      std::fill(values.begin(), values.end(), T(0));
      return;
    case Init::Kind::ones:
      std::fill(values.begin(), values.end(), T(1));
      return;
    case Init::Kind::normal: {
      Rng rng(seed);
      for (auto& v : values) v = static_cast<T>(init.scale * rng.normal());
      return;
    }
    case Init::Kind::uniform: {
      Rng rng(seed);
      for (auto& v : values) v = static_cast<T>(rng.uniform(-init.scale, init.scale));
      return;
    }
  }
}

}  // namespace

void fill_init(std::span<float> values, Init init, std::uint64_t seed) { fill(values, init, seed); }
void fill_init(std::span<double> values, Init init, std::uint64_t seed) { fill(values, init, seed); }

template <typename T>
Array<T> ParamStore<T>::add(const std::string& name, Shape shape, Init init, bool trainable) {
  if (index_.count(name)) throw InternalError("duplicate parameter name: " + name);
  auto array = Array<T>::zeros(std::move(shape), trainable);
  fill(array.mutable_values(), init, derive_seed(seed_, name));
  index_.emplace(name, params_.size());
  params_.push_back({name, array, trainable});
  return array;
}

template <typename T>
const Parameter<T>& ParamStore<T>::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw InternalError("unknown parameter: " + std::string(name));
  return params_[it->second];
}

template <typename T>
Parameter<T>& ParamStore<T>::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw InternalError("unknown parameter: " + std::string(name));
  return params_[it->second];
}

template <typename T>
std::size_t ParamStore<T>::set_trainable(const std::function<bool(const std::string&)>& select, bool trainable) {
  std::size_t matched = 0;
  for (auto& p : params_) {
    if (!select(p.name)) continue;
    p.trainable = trainable;
    p.array.set_requires_grad(trainable);
    ++matched;
  }
  return matched;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.array.zero_grad();
}

template <typename T>
std::size_t ParamStore<T>::total_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.array.size();
  return n;
}

template <typename T>
std::size_t ParamStore<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += p.array.size();
  return n;
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace etris::nd
