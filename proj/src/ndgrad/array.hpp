// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace etris::nd {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::f32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::f64;
}

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), T(0));
    return grad;
  }
};

}  // namespace detail

// Row-major n-d array with an optional gradient buffer. Copies are shallow:
// two Array handles may refer to the same node, which is how parameters are
// shared between the registry and the modules that use them.
template <typename T>
class Array {
 public:
  using Node = detail::Node<T>;

  Array() = default;
  Array(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Array zeros(Shape shape, bool requires_grad = false);
  static Array full(Shape shape, T value, bool requires_grad = false);
  static Array scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int axis) const;
  std::size_t size() const { return node_->values.size(); }

  std::span<const T> values() const { return node_->values; }
  // Direct write access; used by initializers, optimizers and checkpoint
  // loading. Never call while a graph that reads this array is alive.
  std::span<T> mutable_values() { return node_->values; }
  T operator[](std::size_t i) const { return node_->values[i]; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() const { return node_->grad_buffer(); }
  void zero_grad();
  void clear_grad() { std::vector<T>().swap(node_->grad); }

  // Reverse-mode pass from a single-element array. Gradients are accumulated
  // (+=) into every reachable array with requires_grad; the recorded graph is
  // released afterwards.
  void backward();

  // A new leaf holding a copy of the values and no history.
  Array detach() const;

  bool is_leaf() const { return !node_->backward; }
  bool same_as(const Array& other) const { return node_ == other.node_; }

  // Builds the output of a differentiable op. The graph edge is only recorded
  // when at least one input requires a gradient.
  static Array record(Shape shape, std::vector<T> values,
                      const std::vector<Array>& inputs,
                      std::function<void(const Node&)> backward_fn);

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Array(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

extern template class Array<float>;
extern template class Array<double>;

}  // namespace etris::nd
