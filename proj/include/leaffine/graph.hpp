#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "leaffine/error.hpp"
#include "leaffine/tensor.hpp"

namespace leaffine {

enum class OpKind {
  input,
  parameter,
  variable,
  conv2d,
  batch_norm2d,
  relu,
  max_pool2d,
  global_avg_pool,
  linear,
  add,
  softmax_cross_entropy,
  sum,
};

/// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  std::size_t id = 0;
};

/// Append-only tape of operations for reverse-mode differentiation.
///
/// Nodes are recorded in execution order, so the tape is topologically sorted by
/// construction. A node requires a gradient when any of its inputs does; nodes that
/// do not are recorded without a backward rule, which makes frozen sub-networks
/// cost a forward pass only. Leaves created with parameter() borrow an external
/// tensor and accumulate into its gradient; everything else is owned by the graph.
template <typename T>
class Graph {
 public:
  using BackwardFn =
      std::function<void(Graph& graph, const Tensor<T>& output, std::span<const T> output_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor<T> value) { return push_leaf(OpKind::input, std::move(value), nullptr, nullptr, false); }

  /// Read-only view of an external tensor; never receives a gradient.
  Var constant(const Tensor<T>& tensor) { return push_leaf(OpKind::input, {}, &tensor, nullptr, false); }

  /// External tensor whose gradient is accumulated on backward when requires_grad is set.
  Var parameter(Tensor<T>& tensor, bool requires_grad = true) {
    return push_leaf(OpKind::parameter, {}, &tensor, requires_grad ? &tensor : nullptr, requires_grad);
  }

  /// Owned leaf that requires a gradient; read it back with grad().
  Var variable(Tensor<T> value) {
    Var v = push_leaf(OpKind::variable, std::move(value), nullptr, nullptr, true);
    nodes_[v.id].retain = true;
    return v;
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = node(v);
    return n.borrowed ? *n.borrowed : n.owned;
  }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  OpKind kind(Var v) const { return node(v).kind; }
  const std::vector<std::size_t>& inputs(Var v) const { return node(v).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() target with respect to v. Empty when v was not
  /// reached. Parameter leaves report through their external tensor instead.
  std::optional<std::span<const T>> grad(Var v) const {
    const Node& n = node(v);
    if (n.sink) {
      if (!n.sink->has_grad()) return std::nullopt;
      return n.sink->grad();
    }
    if (n.grad.empty()) return std::nullopt;
    return std::span<const T>(n.grad);
  }

  /// Keep the gradient of an intermediate node after backward (normally released).
  void retain_grad(Var v) { node(v).retain = true; }

  Var record(OpKind kind, Tensor<T> value, std::vector<Var> inputs, BackwardFn backward) {
    Node n;
    n.kind = kind;
    n.owned = std::move(value);
    for (Var in : inputs) {
      if (in.id >= nodes_.size()) throw StateError("input refers to a node of another graph");
      n.inputs.push_back(in.id);
      n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  /// Destination for gradient contributions to v, or nullptr when v needs none.
  /// Contributions are added, so fan-out accumulates.
  T* grad_sink(Var v) {
    Node& n = node(v);
    if (!n.requires_grad) return nullptr;
    n.reached = true;
    if (n.sink) return n.sink->ensure_grad().data();
    if (n.grad.empty()) n.grad.assign(value(v).size(), T(0));
    return n.grad.data();
  }

  /// Propagates d(loss)/d(node) to every node that feeds loss. Allowed once per graph.
  void backward(Var loss) {
    if (backward_done_) throw StateError("backward already ran on this graph; clear() it first");
    if (value(loss).size() != 1) {
      throw DimensionError("backward needs a scalar loss, got shape " + to_string(shape(loss)));
    }
    backward_done_ = true;
    T* seed = grad_sink(loss);
    if (!seed) return;
    seed[0] += T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.reached) continue;
      if (n.backward) {
        const Tensor<T>& out = n.borrowed ? *n.borrowed : n.owned;
        std::span<const T> g = n.sink ? std::span<const T>(n.sink->grad()) : std::span<const T>(n.grad);
        n.backward(*this, out, g);
        n.backward = nullptr;
      }
      if (!n.retain && !n.sink && n.kind != OpKind::variable && i != loss.id) {
        std::vector<T>().swap(n.grad);
      }
    }
  }

  bool backward_done() const noexcept { return backward_done_; }

  /// Drops every node so the graph can record a fresh forward pass.
  void clear() {
    nodes_.clear();
    backward_done_ = false;
  }

 private:
  struct Node {
    OpKind kind = OpKind::input;
    std::vector<std::size_t> inputs;
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T>* sink = nullptr;
    bool requires_grad = false;
    bool reached = false;
    bool retain = false;
    BackwardFn backward;
    std::vector<T> grad;
  };

  Var push_leaf(OpKind kind, Tensor<T> owned, const Tensor<T>* borrowed, Tensor<T>* sink, bool requires_grad) {
    Node n;
    n.kind = kind;
    n.owned = std::move(owned);
    n.borrowed = borrowed;
    n.sink = sink;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw StateError("unknown graph node " + std::to_string(v.id));
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw StateError("unknown graph node " + std::to_string(v.id));
    return nodes_[v.id];
  }

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace leaffine
