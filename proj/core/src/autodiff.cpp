// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchpar/autodiff.hpp"

#include <algorithm>
#include <limits>

#include "branchpar/errors.hpp"
#include "branchpar/ops.hpp"

namespace branchpar {

namespace {

constexpr NodeId kSeedConsumer = std::numeric_limits<NodeId>::max();

struct Contribution {
  NodeId consumer;
  Tensor grad;
};

Tensor sum_contributions(std::vector<Contribution>& parts) {
  std::stable_sort(parts.begin(), parts.end(),
                   [](const Contribution& a, const Contribution& b) { return a.consumer < b.consumer; });
  Tensor acc = parts.front().grad;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    acc = finish_op("accumulate", kernels::binary(ElementwiseKind::add, acc, parts[i].grad));
  }
  return acc;
}

}  // namespace

Tensor GradientMap::of(const Tensor& leaf) const {
  if (leaf.graph() != graph_) throw ContractError("tensor is not a leaf of the differentiated graph");
  auto it = grads_.find(leaf.node());
  if (it == grads_.end()) return Tensor::zeros(leaf.shape());
  return it->second;
}

bool GradientMap::reached(const Tensor& leaf) const {
  return leaf.graph() == graph_ && grads_.contains(leaf.node());
}

Tensor Graph::attach(Tensor value, Node node) {
  Tensor t = value.detach();
  t.graph_ = this;
  t.node_ = static_cast<NodeId>(nodes_.size());
  node.shape = t.shape();
  nodes_.push_back(std::move(node));
  return t;
}

Tensor Graph::leaf(const Tensor& value) {
  if (!value.defined()) throw ContractError("cannot register an undefined tensor as a leaf");
  return attach(value, Node{"leaf", {}, nullptr, {}, true});
}

Tensor Graph::record(const char* op, std::span<const Tensor> inputs, Tensor value, BackwardFn backward) {
  Graph* graph = nullptr;
  for (const auto& in : inputs) {
    if (!in.attached()) continue;
    if (graph && graph != in.graph()) {
      throw ContractError(std::string(op) + ": inputs belong to different graphs");
    }
    graph = in.graph();
  }
  if (!graph) return value;
  std::vector<NodeId> ids;
  ids.reserve(inputs.size());
  for (const auto& in : inputs) ids.push_back(in.attached() ? in.node() : kNoNode);
  return graph->attach(std::move(value), Node{op, std::move(ids), std::move(backward), {}, false});
}

GradientMap Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  Seed seed{loss, Tensor::ones(loss.shape())};
  return backward(std::span<const Seed>(&seed, 1));
}

GradientMap Graph::backward(std::span<const Seed> seeds) {
  std::vector<std::vector<Contribution>> pending(nodes_.size());
  for (const auto& s : seeds) {
    if (s.output.graph() != this) throw ContractError("backward seed is not a node of this graph");
    if (s.grad.shape() != s.output.shape()) {
      throw DimensionError("seed gradient shape " + to_string(s.grad.shape()) + " does not match output " +
                           to_string(s.output.shape()));
    }
    pending[static_cast<std::size_t>(s.output.node())].push_back({kSeedConsumer, s.grad.detach()});
  }

  GradientMap out;
  out.graph_ = this;
  for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
    auto& parts = pending[static_cast<std::size_t>(id)];
    if (parts.empty()) continue;
    Tensor grad = sum_contributions(parts);
    parts.clear();
    parts.shrink_to_fit();

    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.is_leaf) {
      out.grads_.emplace(id, std::move(grad));
      continue;
    }
    std::vector<Tensor> input_grads = node.backward(grad);
    if (input_grads.size() != node.inputs.size()) {
      throw ContractError(std::string(node.op) + ": backward returned the wrong number of gradients");
    }
    // Combine repeated operands within this consumer, in operand order.
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      NodeId in = node.inputs[i];
      if (in == kNoNode) continue;
      bool seen = false;
      for (std::size_t j = 0; j < i; ++j) seen = seen || node.inputs[j] == in;
      if (seen) continue;
      Tensor g = input_grads[i];
      for (std::size_t j = i + 1; j < node.inputs.size(); ++j) {
        if (node.inputs[j] == in) g = kernels::binary(ElementwiseKind::add, g, input_grads[j]);
      }
      if (!g.defined()) throw ContractError(std::string(node.op) + ": missing gradient for an attached input");
      if (g.shape() != nodes_[static_cast<std::size_t>(in)].shape) {
        throw DimensionError(std::string(node.op) + ": gradient shape " + to_string(g.shape()) +
                             " does not match input " + to_string(nodes_[static_cast<std::size_t>(in)].shape));
      }
      pending[static_cast<std::size_t>(in)].push_back({id, finish_op(node.op, std::move(g))});
    }
  }
  return out;
}

}  // namespace branchpar
