#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "specknet/common.hpp"
#include "specknet/tensor.hpp"

namespace specknet {

// Handle to a node in a Graph. Only meaningful for the graph that issued it.
struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

// Define-by-run reverse-mode tape. Operations append nodes as they execute;
// backward() walks the tape in reverse creation order, which is a reverse
// topological order because every operand must exist before its consumer.
//
// Leaves come in two kinds: inputs (constants, no gradient) and parameters,
// whose value and gradient live outside the graph so an optimizer can reuse
// them across graphs. Gradients accumulate additively, so a value consumed
// by several operations receives the sum of its downstream contributions,
// and parameter sinks accumulate across param() bindings as well; callers
// zero parameter gradients before backward().
template <typename T>
class Graph {
 public:
  struct Node {
    Tensor<T> value;                     // owned value (unused for params)
    const Tensor<T>* value_ext = nullptr;  // parameter value
    Tensor<T> grad;                      // allocated on first touch
    Tensor<T>* grad_ext = nullptr;       // parameter gradient sink
    bool requires_grad = false;
    std::function<void(Graph&, int)> backprop;
  };

  Var input(Tensor<T> v) {
    Node n;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
  }

  Var param(const Tensor<T>& value, Tensor<T>& grad_sink) {
    if (!grad_sink.empty() && !grad_sink.same_shape(value)) {
      throw DimensionError("param: gradient sink shape " +
                           shape_to_string(grad_sink.shape()) +
                           " does not match value shape " +
                           shape_to_string(value.shape()));
    }
    Node n;
    n.value_ext = &value;
    n.grad_ext = &grad_sink;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
  }

  // Appends an operation result. requires_grad is inherited from parents;
  // backprop reads grad(result) and accumulates into grad(parent).
  Var make(Tensor<T> value, std::initializer_list<Var> parents,
           std::function<void(Graph&, int)> backprop) {
    Node n;
    n.value = std::move(value);
    for (Var p : parents) {
      if (nodes_[p.i].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_[v.i];
    return n.value_ext ? *n.value_ext : n.value;
  }

  const Shape& shape(Var v) const { return value(v).shape(); }

  bool wants_grad(Var v) const { return nodes_[v.i].requires_grad; }

  // Gradient buffer for a node, allocated (zeroed, value-shaped) on demand.
  Tensor<T>& grad(Var v) {
    Node& n = nodes_[v.i];
    Tensor<T>& g = n.grad_ext ? *n.grad_ext : n.grad;
    if (g.empty() && value(v).size() > 0) g = Tensor<T>(value(v).shape());
    return g;
  }

  bool grad_touched(Var v) const {
    const Node& n = nodes_[v.i];
    const Tensor<T>& g = n.grad_ext ? *n.grad_ext : n.grad;
    return !g.empty();
  }

  void backward(Var loss) {
    if (!loss.valid() || std::size_t(loss.i) >= nodes_.size())
      throw UsageError("backward: invalid loss handle");
    if (value(loss).size() != 1)
      throw UsageError("backward: loss must be a scalar, got shape " +
                       shape_to_string(value(loss).shape()));
    grad(loss)[0] += T(1);
    for (int i = loss.i; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backprop) continue;
      const Tensor<T>& g = n.grad_ext ? *n.grad_ext : n.grad;
      if (g.empty()) continue;  // not reached from the loss
      n.backprop(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

}  // namespace specknet
