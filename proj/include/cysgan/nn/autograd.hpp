#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cysgan/nn/tensor.hpp"

namespace cysgan::nn {

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<S>& ensure_grad() {
    if (grad.empty()) grad = Tensor<S>(value.shape);
    return grad;
  }
};

/// Handle to a graph node. Copies share the node.
template <typename S>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<S>>;

  Var() = default;
  explicit Var(Tensor<S> value, bool requires_grad = false) : node_(std::make_shared<Node<S>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<S>& value() const { return node_->value; }
  Tensor<S>& mutable_value() { return node_->value; }
  const Tensor<S>& grad() const { return node_->grad; }
  Tensor<S>& mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor<S>(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  const Shape5& shape() const { return node_->value.shape; }
  S item() const { return node_->value.item(); }
  const NodePtr& node() const { return node_; }

  /// Records an op result. The backward closure reads node.grad and adds into
  /// each parent that requires a gradient.
  static Var make(Tensor<S> value, std::vector<Var> inputs, std::function<void(Node<S>&)> backward) {
    Var out(std::move(value));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const Var& v : inputs) any |= v.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    for (Var& v : inputs) out.node_->parents.push_back(std::move(v.node_));
    out.node_->backward = std::move(backward);
    return out;
  }

 private:
  NodePtr node_;
};

template <typename S>
Var<S> detach(const Var<S>& v) {
  return Var<S>(v.value(), false);
}

/// Accumulates d(root)/d(leaf) into every reachable node that requires a
/// gradient. `root` must hold a single element.
template <typename S>
void backward(const Var<S>& root) {
  if (!root.defined() || root.value().numel() != 1) throw Error("backward needs a scalar root");
  if (!root.requires_grad()) return;
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<S>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad().data.array() += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n);
  }
  // Intermediate gradients are no longer needed; leaves keep theirs.
  for (Node<S>* n : order)
    if (n->backward) n->grad = Tensor<S>();
}

}  // namespace cysgan::nn
