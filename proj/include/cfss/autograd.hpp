/* Copyright 2026 The cfss Authors. All Rights Reserved.

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

// Reverse-mode automatic differentiation over whole tensors.
//
// Every differentiable op produces a Var whose node keeps its inputs and a
// closure that pushes the output gradient back into them. Edges only point
// from results to inputs, so a graph is released as soon as the last Var that
// reaches it goes out of scope. Ops whose inputs are all constants record
// nothing, which makes inference allocation-light.

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cfss/tensor.hpp"

namespace cfss {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor<T>&)> backward;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  // Releases long parent chains with a worklist instead of nested destructors.
  ~Node() {
    std::vector<std::shared_ptr<Node>> stack = std::move(parents);
    backward = nullptr;
    while (!stack.empty()) {
      std::shared_ptr<Node> n = std::move(stack.back());
      stack.pop_back();
      if (n.use_count() == 1) {
        for (auto& p : n->parents) stack.push_back(std::move(p));
        n->parents.clear();
        n->backward = nullptr;
      }
    }
  }

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    return Var(std::move(node));
  }

  static Var leaf(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Gradient accumulated by the last backward pass; zeros when nothing reached it.
  Tensor<T> grad() const {
    if (node_->grad.empty()) return Tensor<T>(node_->value.shape());
    return node_->grad;
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  template <typename U>
  friend Var<U> make_var(Tensor<U>, std::vector<Var<U>>,
                         std::function<void(const Tensor<U>&)>);

  std::shared_ptr<Node<T>> node_;
};

// Writable gradient of an op input, or nullptr when the input is constant.
template <typename T>
Tensor<T>* grad_slot(const Var<T>& v) {
  if (!v.requires_grad()) return nullptr;
  return &v.node()->grad_buffer();
}

// Result of an op. `backward` receives the output gradient and must
// accumulate into the inputs through grad_slot().
template <typename T>
Var<T> make_var(Tensor<T> value, std::vector<Var<T>> inputs,
                std::function<void(const Tensor<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (auto& in : inputs) {
      if (in.requires_grad()) node->parents.push_back(in.node());
    }
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

// Runs reverse accumulation from a scalar root.
template <typename T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1) {
    throw ArgumentError("backward() needs a scalar root, got " +
                        shape_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS; recursion depth would follow the network depth.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(node->grad);
  }
}

}  // namespace cfss
