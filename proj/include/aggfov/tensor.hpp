#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "aggfov/common.hpp"

namespace aggfov {

// Reverse-mode tape node. Ops append themselves implicitly by recording their
// inputs as parents together with a backward rule; Tensor::backward() walks
// the resulting DAG in reverse topological order.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // lazily allocated, same length as data
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false) {
    return filled(s, T(0), requires_grad);
  }

  static Tensor filled(Shape s, T value, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = s;
    t.node_->data.assign(static_cast<size_t>(s.numel()), value);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_data(Shape s, std::vector<T> values,
                          bool requires_grad = false) {
    if (static_cast<int64_t>(values.size()) != s.numel())
      throw shape_error("data length " + std::to_string(values.size()) +
                        " does not match shape " + s.str());
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = s;
    t.node_->data = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data(scalar_shape(), {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->shape.numel(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<T> grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<const T> grad() const { return node_->grad; }

  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
  }

  T item() const {
    if (numel() != 1) throw shape_error("item() requires a scalar tensor");
    return node_->data[0];
  }

  /// Detached copy: same values, no tape history.
  Tensor detach_copy() const {
    return from_data(shape(), node_->data, node_->requires_grad);
  }

  std::shared_ptr<Node> node() const { return node_; }

  /// Reverse pass from a scalar loss. Accumulates dLoss/dX into every
  /// requires_grad node reachable through the tape; repeated uses of a
  /// tensor sum their contributions.
  void backward() const {
    if (numel() != 1)
      throw shape_error("backward() requires a scalar loss tensor");
    std::vector<Node*> order;
    topo_sort(order);
    node_->ensure_grad();
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
  }

 private:
  void topo_sort(std::vector<Node*>& order) const {
    std::unordered_set<Node*> visited;
    // iterative post-order DFS
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node* p = n->parents[idx++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

/// Scoped switch disabling tape recording (eval/inference forward passes).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(enabled()) { enabled() = false; }
  ~NoGradGuard() { enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;

  static bool grad_enabled() { return enabled(); }

 private:
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
  bool prev_;
};

}  // namespace aggfov
