/* Copyright 2026 The PRTR Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Dense row-major tensors recorded on a reverse-mode differentiation tape.
//
// A Tensor is a cheap handle to an immutable Node. Operations in ops.hpp build
// new nodes; when any input requires a gradient (and grad mode is on) the node
// keeps its inputs plus a closure that pushes the output gradient back into
// them. Node creation order is a topological order of the graph, so the tape
// is simply the reachable nodes sorted by creation id.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "prtr/error.hpp"

namespace prtr {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace detail {

inline std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables tape recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::uint64_t tape_id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  [[nodiscard]] bool is_leaf() const { return inputs.empty(); }

  T* grad_data() {
    if (grad.empty()) grad.assign(value.size(), T{0});
    return grad.data();
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<T> data) {
    if (prtr::numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->tape_id = detail::next_tape_id();
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape) {
    const auto n = prtr::numel(shape);
    return constant(std::move(shape), std::vector<T>(n, T{0}));
  }

  static Tensor full(Shape shape, T v) {
    const auto n = prtr::numel(shape);
    return constant(std::move(shape), std::vector<T>(n, v));
  }

  static Tensor scalar(T v) { return constant({}, {v}); }

  /// Trainable leaf.
  static Tensor parameter(Shape shape, std::vector<T> data) {
    Tensor t = constant(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
  [[nodiscard]] const Shape& shape() const { return node_->shape; }
  [[nodiscard]] std::size_t rank() const { return node_->shape.size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  [[nodiscard]] std::size_t numel() const { return node_->value.size(); }
  [[nodiscard]] std::span<const T> data() const { return node_->value; }
  [[nodiscard]] std::span<const T> grad() const { return node_->grad; }
  [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }
  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  [[nodiscard]] bool is_leaf() const { return node_->is_leaf(); }
  [[nodiscard]] std::uint64_t tape_id() const { return node_->tape_id; }
  [[nodiscard]] const char* op() const { return node_->op; }
  [[nodiscard]] const std::shared_ptr<Node<T>>& node() const { return node_; }

  [[nodiscard]] T at(std::size_t flat) const { return node_->value.at(flat); }

  [[nodiscard]] T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  /// Same values, cut from the tape.
  [[nodiscard]] Tensor detach() const { return constant(shape(), node_->value); }

  /// Writable storage of a leaf. Parameters are only mutated between steps.
  std::span<T> mutable_data() {
    if (!is_leaf()) throw ContractError("mutable_data() on a non-leaf tensor");
    return node_->value;
  }

  void zero_grad() { node_->grad.clear(); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Reachable nodes that take part in differentiation, in topological order.
template <typename T>
struct Tape {
  std::vector<Node<T>*> nodes;
};

template <typename T>
Tape<T> record_tape(const Tensor<T>& root) {
  Tape<T> tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  std::unordered_set<const Node<T>*> seen;
  std::vector<Node<T>*> stack{root.node().get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    tape.nodes.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(tape.nodes.begin(), tape.nodes.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->tape_id < b->tape_id; });
  return tape;
}

/// Accumulates d(root)/d(leaf) into every reachable leaf that requires grad.
template <typename T>
void backward(const Tensor<T>& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ContractError("backward() needs a scalar root, got shape " +
                        (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
  }
  if (!root.requires_grad()) throw ContractError("backward() root is not on the tape");
  Tape<T> tape = record_tape(root);
  root.node()->grad_data()[0] += T{1};
  for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Intermediate gradients are scratch space; leaves keep theirs.
  for (Node<T>* n : tape.nodes) {
    if (!n->is_leaf()) std::vector<T>().swap(n->grad);
  }
}

namespace detail {

template <typename T, typename Fn>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  std::vector<Tensor<T>> inputs, Fn&& backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->tape_id = next_tape_id();
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::forward<Fn>(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

// Gradient buffer of input `i`, or nullptr when that input is a constant.
template <typename T>
T* input_grad(Node<T>& n, std::size_t i) {
  auto& in = n.inputs[i];
  return in->requires_grad ? in->grad_data() : nullptr;
}

}  // namespace detail

}  // namespace prtr
