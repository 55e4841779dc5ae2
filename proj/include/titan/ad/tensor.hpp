#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "titan/common.hpp"

namespace titan::ad {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct GradMode {
  static bool enabled() { return grad_mode_flag(); }
  static void set(bool v) { grad_mode_flag() = v; }
};

/// RAII scope that disables graph construction (forward values only).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// RAII scope that sets graph construction to an explicit value.
struct GradScope {
  bool prev;
  explicit GradScope(bool enable) : prev(GradMode::enabled()) { GradMode::set(enable); }
  ~GradScope() { GradMode::set(prev); }
  GradScope(const GradScope&) = delete;
  GradScope& operator=(const GradScope&) = delete;
};

template <typename S>
class Tensor;

/// Backward closure: maps the gradient flowing into a node to the gradients of
/// its parents (same order as Node::parents). Implemented in terms of Tensor
/// ops so gradients are themselves differentiable (double backprop).
template <typename S>
using BackwardFn = std::function<std::vector<Tensor<S>>(const Tensor<S>&)>;

template <typename S>
struct Node {
  ArrayX<S> value;
  std::vector<int> shape;
  std::vector<std::shared_ptr<Node<S>>> parents;
  BackwardFn<S> backward;  // empty for leaves and constants
  bool requires_grad = false;
};

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense tensor with reverse-mode automatic differentiation.
///
/// Values are flat Eigen arrays; `shape` gives the logical extents with the
/// last dimension fastest (row-major). A Tensor is a shared handle onto a DAG
/// node, so copies are cheap and graphs are freed when the last handle drops.
/// Backward closures capture only *input* tensors, never the node they belong
/// to, which keeps the DAG acyclic.
template <typename S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

  /// Non-differentiable tensor holding `value`.
  static Tensor constant(ArrayX<S> value, std::vector<int> shape) {
    check_shape(value, shape);
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor scalar(S v) { return constant(ArrayX<S>::Constant(1, v), {1}); }

  static Tensor zeros(std::vector<int> shape) {
    const auto n = shape_numel(shape);
    return constant(ArrayX<S>::Zero(n), std::move(shape));
  }

  static Tensor ones(std::vector<int> shape) {
    const auto n = shape_numel(shape);
    return constant(ArrayX<S>::Constant(n, S(1)), std::move(shape));
  }

  /// Differentiable leaf (a trainable parameter or a gradient target).
  static Tensor leaf(ArrayX<S> value, std::vector<int> shape) {
    check_shape(value, shape);
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->shape = std::move(shape);
    n->requires_grad = true;
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const ArrayX<S>& value() const { return node_->value; }
  /// Mutable storage access; used by optimizers to update leaves in place.
  ArrayX<S>& raw() { return node_->value; }
  S item() const {
    if (node_->value.size() != 1)
      throw InvalidInput("item(): tensor has " + std::to_string(node_->value.size()) +
                         " elements, expected 1");
    return node_->value[0];
  }

  /// Same values, detached from the graph.
  Tensor detach() const { return constant(node_->value, node_->shape); }

  std::shared_ptr<Node<S>> node() const { return node_; }

 private:
  static void check_shape(const ArrayX<S>& v, const std::vector<int>& shape) {
    if (v.size() != shape_numel(shape))
      throw InvalidInput("tensor value has " + std::to_string(v.size()) +
                         " elements but shape " + shape_str(shape));
  }

  std::shared_ptr<Node<S>> node_;
};

/// Creates an op node. If grad mode is off or no parent requires grad, the
/// result is a plain constant and `backward` is dropped, so no graph grows
/// inside NoGradGuard scopes.
template <typename S>
Tensor<S> make_op(ArrayX<S> value, std::vector<int> shape, std::vector<Tensor<S>> parents,
                  BackwardFn<S> backward) {
  bool needs = false;
  if (GradMode::enabled()) {
    for (const auto& p : parents)
      if (p.requires_grad()) {
        needs = true;
        break;
      }
  }
  if (!needs) return Tensor<S>::constant(std::move(value), std::move(shape));
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->shape = std::move(shape);
  n->parents.reserve(parents.size());
  for (auto& p : parents) n->parents.push_back(p.node());
  n->backward = std::move(backward);
  n->requires_grad = true;
  return Tensor<S>(std::move(n));
}

namespace detail {

// Iterative post-order topological sort over the requires-grad subgraph.
template <typename S>
std::vector<Node<S>*> topo_order(Node<S>* root) {
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> done;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (done.count(n)) {
      stack.pop_back();
      continue;
    }
    if (i < n->parents.size()) {
      Node<S>* p = n->parents[i++].get();
      if (p->requires_grad && !done.count(p)) stack.emplace_back(p, 0);
    } else {
      done.insert(n);
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;  // parents before children; reverse for backprop
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);

/// Gradients of a scalar `root` with respect to `inputs`.
///
/// With `create_graph` the returned gradients carry their own graph, so they
/// can be differentiated again (required for gradient penalties). Inputs that
/// the root does not depend on get zero gradients.
template <typename S>
std::vector<Tensor<S>> grad(const Tensor<S>& root, const std::vector<Tensor<S>>& inputs,
                            bool create_graph = false) {
  if (root.numel() != 1) throw InvalidInput("grad(): root must be a scalar");
  std::vector<Tensor<S>> out;
  out.reserve(inputs.size());
  if (!root.requires_grad()) {
    for (const auto& in : inputs) out.push_back(Tensor<S>::zeros(in.shape()));
    return out;
  }

  GradScope scope(create_graph);
  std::unordered_map<Node<S>*, Tensor<S>> gmap;
  gmap.emplace(root.node().get(), Tensor<S>::ones(root.shape()));

  auto order = detail::topo_order(root.node().get());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    auto found = gmap.find(n);
    if (found == gmap.end() || !n->backward) continue;
    Tensor<S> g = found->second;
    std::vector<Tensor<S>> pgrads = n->backward(g);
    if (pgrads.size() != n->parents.size())
      throw NumericError("backward closure returned wrong number of gradients");
    for (std::size_t i = 0; i < pgrads.size(); ++i) {
      Node<S>* p = n->parents[i].get();
      if (!p->requires_grad || !pgrads[i].defined()) continue;
      auto slot = gmap.find(p);
      if (slot == gmap.end())
        gmap.emplace(p, pgrads[i]);
      else
        slot->second = add(slot->second, pgrads[i]);
    }
  }

  for (const auto& in : inputs) {
    auto found = gmap.find(in.node().get());
    if (found != gmap.end())
      out.push_back(found->second);
    else
      out.push_back(Tensor<S>::zeros(in.shape()));
  }
  return out;
}

}  // namespace titan::ad
