// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Every op records itself on the graph of
// its attached inputs; with no attached input it is a plain value function.
// Binary element-wise ops broadcast with numpy rules (trailing alignment).

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "branchpar/tensor.hpp"

namespace branchpar {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, std::int64_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

enum class ElementwiseKind { add, sub, mul, sigmoid, relu, scale };

Tensor elementwise(ElementwiseKind kind, std::span<const Tensor> operands, double factor = 1.0);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor scale(const Tensor& x, double factor);

Tensor reduce_mean(const Tensor& x, std::int64_t axis);
Tensor reduce_sum(const Tensor& x, std::int64_t axis);
/// Sum of every element as a rank-0 tensor.
Tensor sum_all(const Tensor& x);

Tensor permute(const Tensor& x, std::span<const std::int64_t> axes);
Tensor permute(const Tensor& x, std::initializer_list<std::int64_t> axes);
Tensor reshape(const Tensor& x, Shape shape);

/// x[..., d_in] . w[d_in, d_out] (+ b[d_out]).
Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b = std::nullopt);

Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length);
Tensor concat(std::span<const Tensor> parts, std::int64_t axis);
/// Graph node that forwards its input unchanged; used to give a value that
/// feeds two branches one explicit edge per branch.
Tensor identity(const Tensor& x);

/// Forward-pass instrumentation for the calling thread.
struct OpCounters {
  std::uint64_t matmul_flops = 0;  // 2 per multiply-add in matmul / linear
  std::uint64_t op_calls = 0;      // user-visible op invocations
  /// Running hash of the sign pattern of every relu input. Two evaluations
  /// with equal hashes took the same linear piece of every relu.
  std::uint64_t relu_pattern = 0;
};

OpCounters& op_counters();

/// Value-level kernels shared by forward and backward passes. They never
/// touch a graph and do not count towards OpCounters.
namespace kernels {

Shape broadcast_shapes(const Shape& a, const Shape& b);
/// Sums `x` down to `shape` over broadcast dimensions.
Tensor sum_to(const Tensor& x, const Shape& shape);
Tensor binary(ElementwiseKind kind, const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose_last(const Tensor& x);
Tensor permute(const Tensor& x, std::span<const std::int64_t> axes);
Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length);
Tensor concat(std::span<const Tensor> parts, std::int64_t axis);
/// Inverse of slice: zeros of `shape` with `x` placed at `start` on `axis`.
Tensor pad_slice(const Tensor& x, const Shape& shape, std::int64_t axis, std::int64_t start);

}  // namespace kernels

/// Applies the thread's precision and finite check to a freshly computed
/// op result. Used by ops defined outside this header.
Tensor finish_op(const char* op, Tensor value);

}  // namespace branchpar
