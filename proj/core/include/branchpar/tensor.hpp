// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors. Values are immutable once constructed, so a
// Tensor is a cheap handle that can be copied freely and handed between
// threads. A tensor may additionally be attached to an autodiff Graph.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace branchpar {

class Graph;

using Shape = std::vector<std::int64_t>;
using NodeId = std::int64_t;

inline constexpr NodeId kNoNode = -1;

std::int64_t numel_of(const Shape& shape);
std::string to_string(const Shape& shape);

enum class Precision { f64, f32 };

/// Per-thread numeric mode. f32 emulates single precision by rounding every
/// op result to float; storage stays double.
struct ExecMode {
  Precision precision = Precision::f64;
  bool check_finite = true;
};

ExecMode& exec_mode();

class ScopedExecMode {
 public:
  explicit ScopedExecMode(ExecMode mode) : saved_(exec_mode()) { exec_mode() = mode; }
  ~ScopedExecMode() { exec_mode() = saved_; }
  ScopedExecMode(const ScopedExecMode&) = delete;
  ScopedExecMode& operator=(const ScopedExecMode&) = delete;

 private:
  ExecMode saved_;
};

/// Width in bytes of one element under the given precision.
int element_width(Precision p);

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(std::initializer_list<double> values);
  static Tensor from(Shape shape, std::initializer_list<double> values);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t numel() const;

  std::span<const double> data() const;
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;
  double operator[](std::int64_t flat) const { return (*data_)[static_cast<std::size_t>(flat)]; }

  /// Same storage, different row-major shape (element count must match).
  Tensor view(Shape shape) const;

  /// Deep copy detached from any graph.
  Tensor clone() const;
  /// Same storage, detached from any graph.
  Tensor detach() const;

  Graph* graph() const { return graph_; }
  NodeId node() const { return node_; }
  bool attached() const { return graph_ != nullptr; }

 private:
  friend class Graph;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Graph* graph_ = nullptr;
  NodeId node_ = kNoNode;
};

/// Exact element-wise equality of shape and bits.
bool bit_equal(const Tensor& a, const Tensor& b);

/// Largest |a_i - b_i|; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

double max_abs(const Tensor& t);

}  // namespace branchpar
