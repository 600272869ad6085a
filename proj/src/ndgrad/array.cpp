// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "ndgrad/array.hpp"

#include <sstream>
#include <unordered_set>

#include "common/errors.hpp"

namespace etris::nd {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ConfigError("non-positive dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Array<T>::Array(Shape shape, std::vector<T> values, bool requires_grad) {
  if (numel(shape) != values.size())
    throw ConfigError("value count " + std::to_string(values.size()) + " does not match shape " +
                      shape_str(shape));
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Array<T> Array<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Array<T> Array<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return Array(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Array<T> Array<T>::scalar(T value, bool requires_grad) {
  return Array(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
int Array<T>::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw ConfigError("axis out of range for shape " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T Array<T>::item() const {
  if (size() != 1) throw ConfigError("item() on array of shape " + shape_str(shape()));
  return node_->values[0];
}

template <typename T>
void Array<T>::set_requires_grad(bool flag) {
  if (!is_leaf()) throw InternalError("requires_grad can only be changed on leaf arrays");
  node_->requires_grad = flag;
  if (!flag) clear_grad();
}

template <typename T>
void Array<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Array<T> Array<T>::detach() const {
  return Array(node_->shape, node_->values, false);
}

template <typename T>
Array<T> Array<T>::record(Shape shape, std::vector<T> values, const std::vector<Array>& inputs,
                          std::function<void(const Node&)> backward_fn) {
  Array out(std::move(shape), std::move(values), false);
  for (const Array& in : inputs) {
    if (in.defined() && in.requires_grad()) out.node_->parents.push_back(in.node_);
  }
  if (!out.node_->parents.empty()) {
    out.node_->requires_grad = true;
    out.node_->backward = std::move(backward_fn);
  }
  return out;
}

template <typename T>
void Array<T>::backward() {
  if (size() != 1) throw ConfigError("backward() requires a single-element array, got " + shape_str(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order of the recorded tape.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (Node* node : order) {
    if (node->backward) {
      node->backward = nullptr;
      node->parents.clear();
    }
  }
}

template class Array<float>;
template class Array<double>;

}  // namespace etris::nd
