#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "polypdam/error.hpp"
#include "polypdam/tensor.hpp"

namespace polypdam {

namespace detail {
inline thread_local bool grad_mode_enabled = true;
}

inline bool grad_enabled() { return detail::grad_mode_enabled; }

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return op == "leaf"; }

  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape() || grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }

  /// Gradient buffer of parent `i`, or nullptr when that parent is not
  /// differentiated.
  Tensor<T>* parent_grad(std::size_t i) {
    Node& p = *parents[i];
    return p.requires_grad ? &p.grad_buffer() : nullptr;
  }

  const Tensor<T>& parent_value(std::size_t i) const { return parents[i]->value; }
};

/// Handle to a value in the computation graph.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var constant(Tensor<T> value) { return Var(std::move(value), false); }
  static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }
  const std::string& op() const { return node_->op; }

  /// Mutable access for optimizers and initializers; leaves only.
  Tensor<T>& mutable_value() {
    if (!node_->is_leaf()) throw GradientError("only leaf values may be modified in place");
    return node_->value;
  }

  /// Accumulated gradient (zeros when none has been produced yet).
  const Tensor<T>& grad() const { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Records an operation output. `backward` receives the output node and
/// propagates node.grad into the parents' gradient buffers.
template <class T, class Backward>
Var<T> record(Tensor<T> value, const char* op, std::initializer_list<Var<T>> inputs, Backward backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward);
  }
  return Var<T>(std::move(node));
}

template <class T, class Backward>
Var<T> record(Tensor<T> value, const char* op, const std::vector<Var<T>>& inputs, Backward backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward);
  }
  return Var<T>(std::move(node));
}

/// Refuses to record a non-differentiable operation on a differentiated input.
template <class T>
void require_no_grad(const Var<T>& x, const char* op) {
  if (grad_enabled() && x.requires_grad()) {
    throw GradientError(std::string(op) + " is not differentiable; detach the input or use NoGradGuard");
  }
}

/// Gradients of one backward pass, keyed by leaf.
template <class T>
class GradientRecord {
 public:
  void add(const Node<T>* leaf) { grads_[leaf] = leaf->grad; }

  bool contains(const Var<T>& leaf) const { return grads_.count(leaf.node().get()) != 0; }

  const Tensor<T>& of(const Var<T>& leaf) const {
    auto it = grads_.find(leaf.node().get());
    if (it == grads_.end()) throw GradientError("variable was not reached by backward");
    return it->second;
  }

  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const Node<T>*, Tensor<T>> grads_;
};

/// Reverse-mode pass from a scalar. Leaf gradients accumulate into their
/// grad buffers (call zero_grad between steps). The graph below `loss` is
/// released afterwards, so a second backward through it is rejected.
template <class T>
GradientRecord<T> backward(const Var<T>& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward needs a scalar, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) throw GradientError("loss does not depend on any differentiated value");
  if (!loss.is_leaf() && !loss.node()->backward_fn) {
    throw GradientError("graph was already consumed by a previous backward pass");
  }

  // Iterative post-order DFS; `order` also keeps every node alive while the
  // graph is torn down.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      std::shared_ptr<Node<T>> p = node->parents[next++];
      if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto& n : order) {
    if (!n->is_leaf()) n->grad = Tensor<T>();
  }
  loss.node()->grad_buffer()[0] += T{1};

  GradientRecord<T> record;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& n = **it;
    if (n.is_leaf()) continue;
    if (!n.backward_fn) throw GradientError("node '" + n.op + "' has no gradient rule");
    n.grad_buffer();
    n.backward_fn(n);
    n.backward_fn = nullptr;
    n.grad = Tensor<T>();
  }
  for (auto& n : order) {
    if (n->is_leaf()) {
      record.add(n.get());
    } else {
      n->parents.clear();
    }
  }
  return record;
}

}  // namespace polypdam
