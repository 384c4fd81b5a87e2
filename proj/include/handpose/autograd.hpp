#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "handpose/tensor.hpp"

namespace handpose::ag {

// One node of the dynamic computation tape. Forward values are computed
// eagerly; backprop closures are attached only while gradients are enabled.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;

  Tensor& grad_buf() {
    if (!grad.same_shape(value)) grad = Tensor(value.shape());
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

// Scoped switch that disables tape construction (inference / plain eval).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Value-semantic handle to a tape node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }
  const NodePtr& node() const { return node_; }

  Tensor& value() { return node_->value; }
  const Tensor& value() const { return node_->value; }
  Tensor& grad() { return node_->grad_buf(); }
  const std::vector<int>& shape() const { return node_->value.shape(); }
  int numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  void zero_grad() {
    if (node_) node_->grad_buf().fill(0.0);
  }

  double scalar() const {
    if (numel() != 1) throw std::logic_error("Var::scalar on non-scalar " + node_->value.shape_str());
    return node_->value[0];
  }

 private:
  NodePtr node_;
};

inline Var constant(Tensor v) { return Var(std::move(v), false); }
inline Var param(Tensor v) { return Var(std::move(v), true); }

// Fresh output node wired to the parents that participate in backprop.
inline Var make_result(Tensor value, std::initializer_list<Var> inputs) {
  bool wants = false;
  if (grad_enabled())
    for (const Var& v : inputs) wants |= v.requires_grad();
  Var out(std::move(value), wants);
  if (wants)
    for (const Var& v : inputs)
      if (v.requires_grad()) out.node()->parents.push_back(v.node());
  return out;
}

// Reverse-mode sweep from a scalar root. Gradients accumulate, so batched
// training may call this repeatedly before an optimizer step.
inline void backward(const Var& root) {
  if (root.numel() != 1) throw std::logic_error("backward: root must be scalar");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->grad_buf()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
}

}  // namespace handpose::ag
