#pragma once

// Dense float64 tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle to a graph node. Operations in ops.hpp create
// new nodes that remember their inputs and a closure propagating gradients
// back to them; backward() walks the graph in reverse topological order.
// Nodes whose inputs never require gradients do not record a graph, so pure
// inference allocates only values.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "zsp/common.hpp"

namespace zsp {

using Shape = std::vector<std::size_t>;
using TokenId = std::int32_t;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until populated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // null for leaves

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (std::size_t d : shape)
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != values.size())
      throw DimensionError("shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  /// Mutable access for leaves (parameter updates, finite differences).
  std::span<double> mutable_values() { return node_->value; }
  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void clear_grad() { node_->grad.clear(); }

  /// True when this tensor is a leaf (created directly, not by an operation).
  bool is_leaf() const { return !node_->backward; }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on this thread for its lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

/// Builds an operation result. The graph is recorded only if some input
/// requires gradients.
inline Tensor make_result(Shape shape, std::vector<double> values,
                          std::initializer_list<const Tensor*> inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  bool needs = false;
  if (grad_mode())
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  if (needs) {
    Node* n = out.node();
    n->requires_grad = true;
    for (const Tensor* t : inputs) n->parents.push_back(t->node_ptr());
    n->backward = std::move(backward);
  }
  for (double v : out.values())
    if (!std::isfinite(v)) throw ContractError("operation produced a non-finite value");
  return out;
}

}  // namespace detail

/// Reverse-mode differentiation from a scalar. Leaf gradients accumulate
/// across calls until cleared; intermediate gradients are recomputed.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (detail::Node* n : order)
    if (n->backward) n->grad.assign(n->value.size(), 0.0);
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

}  // namespace zsp
