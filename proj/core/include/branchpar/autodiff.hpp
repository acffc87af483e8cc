// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff tape.
//
// Nodes are appended in creation order, so ids are a topological order.
// backward() sweeps ids in descending order. Each node's incoming gradient
// contributions are summed in ascending consumer id, with explicit seeds last;
// multiple contributions from one consumer to the same input (x * x) are
// combined by that consumer first. The resulting reduction order depends only
// on the relative structure of the graph, which is what lets a graph split
// across ranks reproduce the single-graph gradients bit for bit.

#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "branchpar/tensor.hpp"

namespace branchpar {

/// Maps the upstream gradient of a node to one gradient per input (same
/// order as the inputs). Entries for inputs that are not attached may be
/// left undefined.
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

/// Initial gradient for one output when back-propagating a vector-Jacobian
/// product instead of a scalar loss.
struct Seed {
  Tensor output;
  Tensor grad;
};

/// Gradients of the leaves of one backward sweep.
class GradientMap {
 public:
  /// Gradient of a leaf of the swept graph; zeros if the leaf was not reached.
  Tensor of(const Tensor& leaf) const;
  bool reached(const Tensor& leaf) const;

 private:
  friend class Graph;
  const Graph* graph_ = nullptr;
  std::unordered_map<NodeId, Tensor> grads_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Registers `value` as a differentiable leaf.
  Tensor leaf(const Tensor& value);

  /// Appends an op node. Returns `value` unattached if no input is attached
  /// to this graph.
  static Tensor record(const char* op, std::span<const Tensor> inputs, Tensor value,
                       BackwardFn backward);

  GradientMap backward(const Tensor& loss);
  GradientMap backward(std::span<const Seed> seeds);

  std::size_t size() const { return nodes_.size(); }
  const char* op_name(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).op; }

 private:
  struct Node {
    const char* op;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    Shape shape;
    bool is_leaf;
  };

  Tensor attach(Tensor value, Node node);

  std::vector<Node> nodes_;
};

}  // namespace branchpar
