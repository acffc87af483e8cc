// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchpar/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include "branchpar/errors.hpp"

namespace branchpar {

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ExecMode& exec_mode() {
  thread_local ExecMode mode;
  return mode;
}

int element_width(Precision p) { return p == Precision::f64 ? 8 : 4; }

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d <= 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape_));
  }
  if (numel_of(shape_) != static_cast<std::int64_t>(data.size())) {
    throw DimensionError("shape " + to_string(shape_) + " does not hold " +
                         std::to_string(data.size()) + " elements");
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double v) {
  auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(std::max<std::int64_t>(n, 0)), v));
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({static_cast<std::int64_t>(values.size())}, std::vector<double>(values));
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  return Tensor(std::move(shape), std::vector<double>(values));
}

std::int64_t Tensor::dim(std::int64_t axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

std::span<const double> Tensor::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() needs exactly one element, shape is " + to_string(shape_));
  return (*data_)[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (static_cast<std::int64_t>(index.size()) != rank()) {
    throw DimensionError("index rank does not match shape " + to_string(shape_));
  }
  std::int64_t flat = 0;
  std::size_t i = 0;
  for (auto v : index) {
    auto extent = shape_[i++];
    if (v < 0 || v >= extent) throw DimensionError("index out of range for shape " + to_string(shape_));
    flat = flat * extent + v;
  }
  return (*data_)[static_cast<std::size_t>(flat)];
}

Tensor Tensor::view(Shape shape) const {
  if (numel_of(shape) != numel()) {
    throw DimensionError("cannot view " + to_string(shape_) + " as " + to_string(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

Tensor Tensor::clone() const {
  if (!data_) return {};
  return Tensor(shape_, *data_);
}

Tensor Tensor::detach() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(da[i]) != std::bit_cast<std::uint64_t>(db[i])) return false;
  }
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double m = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
  return m;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace branchpar
