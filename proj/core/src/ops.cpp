// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchpar/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "branchpar/autodiff.hpp"
#include "branchpar/errors.hpp"

namespace branchpar {

namespace {

std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return axis;
}

std::vector<std::int64_t> strides_of(const Shape& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (std::int64_t i = static_cast<std::int64_t>(shape.size()) - 2; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(i + 1)] * shape[static_cast<std::size_t>(i + 1)];
  }
  return s;
}

// Strides of `shape` laid out against the right-aligned `target` shape, with
// zero stride on broadcast dimensions.
std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& target) {
  std::vector<std::int64_t> out(target.size(), 0);
  auto own = strides_of(shape);
  auto offset = target.size() - shape.size();
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out[offset + i] = shape[i] == 1 ? 0 : own[i];
  }
  return out;
}

// Walks a row-major index space of `shape`, tracking one strided offset per
// operand.
template <std::size_t N>
class StridedWalk {
 public:
  StridedWalk(const Shape& shape, std::array<std::vector<std::int64_t>, N> strides)
      : shape_(shape), strides_(std::move(strides)), index_(shape.size(), 0) {}

  std::int64_t offset(std::size_t k) const { return offsets_[k]; }

  void next() {
    for (std::int64_t d = static_cast<std::int64_t>(shape_.size()) - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      if (++index_[du] < shape_[du]) {
        for (std::size_t k = 0; k < N; ++k) offsets_[k] += strides_[k][du];
        return;
      }
      for (std::size_t k = 0; k < N; ++k) offsets_[k] -= strides_[k][du] * (shape_[du] - 1);
      index_[du] = 0;
    }
  }

 private:
  const Shape& shape_;
  std::array<std::vector<std::int64_t>, N> strides_;
  std::vector<std::int64_t> index_;
  std::array<std::int64_t, N> offsets_{};
};

double apply_binary(ElementwiseKind kind, double a, double b) {
  switch (kind) {
    case ElementwiseKind::add:
      return a + b;
    case ElementwiseKind::sub:
      return a - b;
    case ElementwiseKind::mul:
      return a * b;
    default:
      throw ContractError("not a binary element-wise kind");
  }
}

double sigmoid_value(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void count_call() { ++op_counters().op_calls; }

template <class F>
Tensor map_values(const Tensor& x, F f) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = f(v);
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

OpCounters& op_counters() {
  thread_local OpCounters counters;
  return counters;
}

Tensor finish_op(const char* op, Tensor value) {
  const auto& mode = exec_mode();
  if (mode.precision == Precision::f32) {
    std::vector<double> rounded(value.data().begin(), value.data().end());
    for (auto& v : rounded) v = static_cast<double>(static_cast<float>(v));
    value = Tensor(value.shape(), std::move(rounded));
  }
  if (mode.check_finite) {
    for (double v : value.data()) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
  return value;
}

// ---------------------------------------------------------------------------
// kernels

namespace kernels {

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()), 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::int64_t da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
    std::int64_t db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (broadcast_shapes(shape, x.shape()) != x.shape()) {
    throw DimensionError("cannot reduce " + to_string(x.shape()) + " to " + to_string(shape));
  }
  std::vector<double> out(static_cast<std::size_t>(numel_of(shape)), 0.0);
  StridedWalk<1> walk(x.shape(), {broadcast_strides(shape, x.shape())});
  auto src = x.data();
  for (std::size_t i = 0; i < src.size(); ++i, walk.next()) {
    out[static_cast<std::size_t>(walk.offset(0))] += src[i];
  }
  return Tensor(shape, std::move(out));
}

Tensor binary(ElementwiseKind kind, const Tensor& a, const Tensor& b) {
  auto da = a.data();
  auto db = b.data();
  if (a.shape() == b.shape()) {
    std::vector<double> out(da.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_binary(kind, da[i], db[i]);
    return Tensor(a.shape(), std::move(out));
  }
  Shape shape = broadcast_shapes(a.shape(), b.shape());
  std::vector<double> out(static_cast<std::size_t>(numel_of(shape)));
  StridedWalk<2> walk(shape, {broadcast_strides(a.shape(), shape), broadcast_strides(b.shape(), shape)});
  for (std::size_t i = 0; i < out.size(); ++i, walk.next()) {
    out[i] = apply_binary(kind, da[static_cast<std::size_t>(walk.offset(0))],
                          db[static_cast<std::size_t>(walk.offset(1))]);
  }
  return Tensor(std::move(shape), std::move(out));
}

Tensor scale(const Tensor& x, double factor) {
  return map_values(x, [factor](double v) { return v * factor; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const auto p = a.dim(-2), q = a.dim(-1), q2 = b.dim(-2), t = b.dim(-1);
  if (q != q2) {
    throw DimensionError("matmul contraction mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = broadcast_shapes(batch_a, batch_b);
  } catch (const DimensionError&) {
    throw DimensionError("matmul batch dims do not broadcast: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  const auto n_batch = numel_of(batch);
  Shape out_shape = batch;
  out_shape.push_back(p);
  out_shape.push_back(t);
  std::vector<double> out(static_cast<std::size_t>(n_batch * p * t), 0.0);

  auto sa = broadcast_strides(batch_a, batch);
  auto sb = broadcast_strides(batch_b, batch);
  for (auto& s : sa) s *= p * q;
  for (auto& s : sb) s *= q * t;
  StridedWalk<2> walk(batch, {sa, sb});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::int64_t n = 0; n < n_batch; ++n, walk.next()) {
    const double* A = pa + walk.offset(0);
    const double* B = pb + walk.offset(1);
    double* C = out.data() + n * p * t;
    // i-k-j order: each C[i][j] still accumulates in ascending k from 0.
    for (std::int64_t i = 0; i < p; ++i) {
      double* row = C + i * t;
      for (std::int64_t k = 0; k < q; ++k) {
        const double aik = A[i * q + k];
        const double* brow = B + k * t;
        for (std::int64_t j = 0; j < t; ++j) row[j] += aik * brow[j];
      }
    }
  }
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor transpose_last(const Tensor& x) {
  std::vector<std::int64_t> axes(static_cast<std::size_t>(x.rank()));
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return kernels::permute(x, axes);
}

Tensor permute(const Tensor& x, std::span<const std::int64_t> axes) {
  const auto rank = x.rank();
  if (static_cast<std::int64_t>(axes.size()) != rank) {
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " + to_string(x.shape()));
  }
  std::vector<bool> used(static_cast<std::size_t>(rank), false);
  for (auto ax : axes) {
    if (ax < 0 || ax >= rank || used[static_cast<std::size_t>(ax)]) {
      throw DimensionError("permute: axes are not a permutation of 0.." + std::to_string(rank - 1));
    }
    used[static_cast<std::size_t>(ax)] = true;
  }
  Shape out_shape(static_cast<std::size_t>(rank));
  auto in_strides = strides_of(x.shape());
  std::vector<std::int64_t> walk_strides(static_cast<std::size_t>(rank));
  for (std::size_t i = 0; i < axes.size(); ++i) {
    out_shape[i] = x.shape()[static_cast<std::size_t>(axes[i])];
    walk_strides[i] = in_strides[static_cast<std::size_t>(axes[i])];
  }
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  StridedWalk<1> walk(out_shape, {walk_strides});
  auto src = x.data();
  for (std::size_t i = 0; i < out.size(); ++i, walk.next()) out[i] = src[static_cast<std::size_t>(walk.offset(0))];
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length) {
  axis = normalize_axis(axis, x.rank(), "slice");
  const auto extent = x.dim(axis);
  if (start < 0 || length <= 0 || start + length > extent) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for extent " + std::to_string(extent));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  const auto outer = numel_of(Shape(x.shape().begin(), x.shape().begin() + axis));
  const auto inner = numel_of(Shape(x.shape().begin() + axis + 1, x.shape().end()));
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(outer * length * inner));
  auto src = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    auto begin = src.begin() + (o * extent + start) * inner;
    out.insert(out.end(), begin, begin + length * inner);
  }
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor concat(std::span<const Tensor> parts, std::int64_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const auto& first = parts.front().shape();
  axis = normalize_axis(axis, static_cast<std::int64_t>(first.size()), "concat");
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<std::int64_t>(first.size())) {
      throw DimensionError("concat rank mismatch: " + to_string(first) + " vs " + to_string(p.shape()));
    }
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (static_cast<std::int64_t>(d) != axis && p.shape()[d] != first[d]) {
        throw DimensionError("concat shape mismatch: " + to_string(first) + " vs " + to_string(p.shape()));
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += p.shape()[static_cast<std::size_t>(axis)];
  }
  const auto outer = numel_of(Shape(first.begin(), first.begin() + axis));
  const auto inner = numel_of(Shape(first.begin() + axis + 1, first.end()));
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(numel_of(out_shape)));
  for (std::int64_t o = 0; o < outer; ++o) {
    for (const auto& p : parts) {
      const auto chunk = p.shape()[static_cast<std::size_t>(axis)] * inner;
      auto begin = p.data().begin() + o * chunk;
      out.insert(out.end(), begin, begin + chunk);
    }
  }
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor pad_slice(const Tensor& x, const Shape& shape, std::int64_t axis, std::int64_t start) {
  axis = normalize_axis(axis, static_cast<std::int64_t>(shape.size()), "pad_slice");
  const auto extent = shape[static_cast<std::size_t>(axis)];
  const auto length = x.dim(axis);
  const auto outer = numel_of(Shape(shape.begin(), shape.begin() + axis));
  const auto inner = numel_of(Shape(shape.begin() + axis + 1, shape.end()));
  std::vector<double> out(static_cast<std::size_t>(numel_of(shape)), 0.0);
  auto src = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(src.begin() + o * length * inner, length * inner, out.begin() + (o * extent + start) * inner);
  }
  return Tensor(shape, std::move(out));
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// differentiable ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  count_call();
  Tensor out = finish_op("matmul", kernels::matmul(a, b));
  op_counters().matmul_flops +=
      static_cast<std::uint64_t>(2 * (out.numel() / a.dim(-2) / b.dim(-1)) * a.dim(-2) * a.dim(-1) * b.dim(-1));
  Tensor inputs[] = {a, b};
  return Graph::record("matmul", inputs, out, [a = a.detach(), b = b.detach()](const Tensor& g) {
    Tensor da = kernels::sum_to(kernels::matmul(g, kernels::transpose_last(b)), a.shape());
    Tensor db = kernels::sum_to(kernels::matmul(kernels::transpose_last(a), g), b.shape());
    return std::vector<Tensor>{da, db};
  });
}

Tensor softmax(const Tensor& x, std::int64_t axis) {
  count_call();
  axis = normalize_axis(axis, x.rank(), "softmax");
  const auto n = x.dim(axis);
  const auto outer = numel_of(Shape(x.shape().begin(), x.shape().begin() + axis));
  const auto inner = numel_of(Shape(x.shape().begin() + axis + 1, x.shape().end()));
  std::vector<double> y(static_cast<std::size_t>(x.numel()));
  auto src = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const auto base = o * n * inner + in;
      double mx = src[static_cast<std::size_t>(base)];
      for (std::int64_t k = 1; k < n; ++k) mx = std::max(mx, src[static_cast<std::size_t>(base + k * inner)]);
      double sum = 0.0;
      for (std::int64_t k = 0; k < n; ++k) {
        auto idx = static_cast<std::size_t>(base + k * inner);
        y[idx] = std::exp(src[idx] - mx);
        sum += y[idx];
      }
      for (std::int64_t k = 0; k < n; ++k) y[static_cast<std::size_t>(base + k * inner)] /= sum;
    }
  }
  Tensor out = finish_op("softmax", Tensor(x.shape(), std::move(y)));
  Tensor inputs[] = {x};
  return Graph::record("softmax", inputs, out, [y = out.detach(), axis, n, outer, inner](const Tensor& g) {
    std::vector<double> dx(static_cast<std::size_t>(y.numel()));
    auto yv = y.data();
    auto gv = g.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t in = 0; in < inner; ++in) {
        const auto base = o * n * inner + in;
        double dot = 0.0;
        for (std::int64_t k = 0; k < n; ++k) {
          auto idx = static_cast<std::size_t>(base + k * inner);
          dot += gv[idx] * yv[idx];
        }
        for (std::int64_t k = 0; k < n; ++k) {
          auto idx = static_cast<std::size_t>(base + k * inner);
          dx[idx] = yv[idx] * (gv[idx] - dot);
        }
      }
    }
    (void)axis;
    return std::vector<Tensor>{Tensor(y.shape(), std::move(dx))};
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  count_call();
  if (eps < 0.0) throw ContractError("layer_norm: eps must be non-negative");
  if (x.rank() < 1) throw DimensionError("layer_norm needs rank >= 1");
  const auto c = x.dim(-1);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("layer_norm: gamma " + to_string(gamma.shape()) + " / beta " + to_string(beta.shape()) +
                         " do not match last extent of " + to_string(x.shape()));
  }
  const auto rows = x.numel() / c;
  std::vector<double> y(static_cast<std::size_t>(x.numel()));
  std::vector<double> xhat(y.size());
  std::vector<double> rstd(static_cast<std::size_t>(rows));
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mean = 0.0;
    for (std::int64_t k = 0; k < c; ++k) mean += row[k];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::int64_t k = 0; k < c; ++k) var += (row[k] - mean) * (row[k] - mean);
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(r)] = rs;
    for (std::int64_t k = 0; k < c; ++k) {
      auto idx = static_cast<std::size_t>(r * c + k);
      xhat[idx] = (row[k] - mean) * rs;
      y[idx] = xhat[idx] * gv[static_cast<std::size_t>(k)] + bv[static_cast<std::size_t>(k)];
    }
  }
  Tensor out = finish_op("layer_norm", Tensor(x.shape(), std::move(y)));
  Tensor inputs[] = {x, gamma, beta};
  return Graph::record(
      "layer_norm", inputs, out,
      [xhat = std::move(xhat), rstd = std::move(rstd), gamma = gamma.detach(), shape = x.shape(), c,
       rows](const Tensor& g) {
        std::vector<double> dx(static_cast<std::size_t>(rows * c));
        std::vector<double> dgamma(static_cast<std::size_t>(c), 0.0);
        std::vector<double> dbeta(static_cast<std::size_t>(c), 0.0);
        auto gv = g.data();
        auto gm = gamma.data();
        std::vector<double> gx(static_cast<std::size_t>(c));
        for (std::int64_t r = 0; r < rows; ++r) {
          double mean_gx = 0.0, mean_gx_xhat = 0.0;
          for (std::int64_t k = 0; k < c; ++k) {
            auto idx = static_cast<std::size_t>(r * c + k);
            auto ku = static_cast<std::size_t>(k);
            dgamma[ku] += gv[idx] * xhat[idx];
            dbeta[ku] += gv[idx];
            gx[ku] = gv[idx] * gm[ku];
            mean_gx += gx[ku];
            mean_gx_xhat += gx[ku] * xhat[idx];
          }
          mean_gx /= static_cast<double>(c);
          mean_gx_xhat /= static_cast<double>(c);
          const double rs = rstd[static_cast<std::size_t>(r)];
          for (std::int64_t k = 0; k < c; ++k) {
            auto idx = static_cast<std::size_t>(r * c + k);
            dx[idx] = rs * (gx[static_cast<std::size_t>(k)] - mean_gx - xhat[idx] * mean_gx_xhat);
          }
        }
        return std::vector<Tensor>{Tensor(shape, std::move(dx)), Tensor({c}, std::move(dgamma)),
                                   Tensor({c}, std::move(dbeta))};
      });
}

Tensor elementwise(ElementwiseKind kind, std::span<const Tensor> operands, double factor) {
  const bool binary_kind =
      kind == ElementwiseKind::add || kind == ElementwiseKind::sub || kind == ElementwiseKind::mul;
  if (operands.size() != (binary_kind ? 2u : 1u)) {
    throw ContractError("elementwise: wrong operand count for kind");
  }
  switch (kind) {
    case ElementwiseKind::add:
      return add(operands[0], operands[1]);
    case ElementwiseKind::sub:
      return sub(operands[0], operands[1]);
    case ElementwiseKind::mul:
      return mul(operands[0], operands[1]);
    case ElementwiseKind::sigmoid:
      return sigmoid(operands[0]);
    case ElementwiseKind::relu:
      return relu(operands[0]);
    case ElementwiseKind::scale:
      return scale(operands[0], factor);
  }
  throw ContractError("elementwise: unknown kind");
}

Tensor add(const Tensor& a, const Tensor& b) {
  count_call();
  Tensor out = finish_op("add", kernels::binary(ElementwiseKind::add, a, b));
  Tensor inputs[] = {a, b};
  return Graph::record("add", inputs, out, [sa = a.shape(), sb = b.shape()](const Tensor& g) {
    return std::vector<Tensor>{kernels::sum_to(g, sa), kernels::sum_to(g, sb)};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  count_call();
  Tensor out = finish_op("sub", kernels::binary(ElementwiseKind::sub, a, b));
  Tensor inputs[] = {a, b};
  return Graph::record("sub", inputs, out, [sa = a.shape(), sb = b.shape()](const Tensor& g) {
    return std::vector<Tensor>{kernels::sum_to(g, sa), kernels::sum_to(kernels::scale(g, -1.0), sb)};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  count_call();
  Tensor out = finish_op("mul", kernels::binary(ElementwiseKind::mul, a, b));
  Tensor inputs[] = {a, b};
  return Graph::record("mul", inputs, out, [a = a.detach(), b = b.detach()](const Tensor& g) {
    return std::vector<Tensor>{kernels::sum_to(kernels::binary(ElementwiseKind::mul, g, b), a.shape()),
                               kernels::sum_to(kernels::binary(ElementwiseKind::mul, g, a), b.shape())};
  });
}

Tensor sigmoid(const Tensor& x) {
  count_call();
  Tensor out = finish_op("sigmoid", map_values(x, sigmoid_value));
  Tensor inputs[] = {x};
  return Graph::record("sigmoid", inputs, out, [y = out.detach()](const Tensor& g) {
    std::vector<double> dx(static_cast<std::size_t>(y.numel()));
    auto yv = y.data();
    auto gv = g.data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = gv[i] * yv[i] * (1.0 - yv[i]);
    return std::vector<Tensor>{Tensor(y.shape(), std::move(dx))};
  });
}

Tensor relu(const Tensor& x) {
  count_call();
  std::uint64_t pattern = op_counters().relu_pattern;
  for (double v : x.data()) pattern = (pattern ^ (v > 0.0 ? 1u : 0u)) * 1099511628211ull;  // FNV-1a step
  op_counters().relu_pattern = pattern;
  Tensor out = finish_op("relu", map_values(x, [](double v) { return v > 0.0 ? v : 0.0; }));
  Tensor inputs[] = {x};
  return Graph::record("relu", inputs, out, [x = x.detach()](const Tensor& g) {
    std::vector<double> dx(static_cast<std::size_t>(x.numel()));
    auto xv = x.data();
    auto gv = g.data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = xv[i] > 0.0 ? gv[i] : 0.0;
    return std::vector<Tensor>{Tensor(x.shape(), std::move(dx))};
  });
}

Tensor scale(const Tensor& x, double factor) {
  count_call();
  Tensor out = finish_op("scale", kernels::scale(x, factor));
  Tensor inputs[] = {x};
  return Graph::record("scale", inputs, out, [factor](const Tensor& g) {
    return std::vector<Tensor>{kernels::scale(g, factor)};
  });
}

Tensor reduce_sum(const Tensor& x, std::int64_t axis) {
  count_call();
  axis = normalize_axis(axis, x.rank(), "reduce_sum");
  const auto n = x.dim(axis);
  const auto outer = numel_of(Shape(x.shape().begin(), x.shape().begin() + axis));
  const auto inner = numel_of(Shape(x.shape().begin() + axis + 1, x.shape().end()));
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + axis);
  std::vector<double> out(static_cast<std::size_t>(outer * inner), 0.0);
  auto src = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t k = 0; k < n; ++k) {
      for (std::int64_t in = 0; in < inner; ++in) {
        out[static_cast<std::size_t>(o * inner + in)] += src[static_cast<std::size_t>((o * n + k) * inner + in)];
      }
    }
  }
  Tensor value = finish_op("reduce_sum", Tensor(std::move(out_shape), std::move(out)));
  Tensor inputs[] = {x};
  return Graph::record("reduce_sum", inputs, value, [shape = x.shape(), axis](const Tensor& g) {
    Shape kept = shape;
    kept[static_cast<std::size_t>(axis)] = 1;
    Tensor expanded = kernels::binary(ElementwiseKind::add, Tensor::zeros(shape), g.view(kept));
    return std::vector<Tensor>{expanded};
  });
}

Tensor reduce_mean(const Tensor& x, std::int64_t axis) {
  count_call();
  axis = normalize_axis(axis, x.rank(), "reduce_mean");
  const auto n = x.dim(axis);
  const auto outer = numel_of(Shape(x.shape().begin(), x.shape().begin() + axis));
  const auto inner = numel_of(Shape(x.shape().begin() + axis + 1, x.shape().end()));
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + axis);
  std::vector<double> out(static_cast<std::size_t>(outer * inner), 0.0);
  auto src = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t k = 0; k < n; ++k) {
      for (std::int64_t in = 0; in < inner; ++in) {
        out[static_cast<std::size_t>(o * inner + in)] += src[static_cast<std::size_t>((o * n + k) * inner + in)];
      }
    }
  }
  for (auto& v : out) v /= static_cast<double>(n);
  Tensor value = finish_op("reduce_mean", Tensor(std::move(out_shape), std::move(out)));
  Tensor inputs[] = {x};
  return Graph::record("reduce_mean", inputs, value, [shape = x.shape(), axis, n](const Tensor& g) {
    Shape kept = shape;
    kept[static_cast<std::size_t>(axis)] = 1;
    Tensor spread = map_values(g, [n](double v) { return v / static_cast<double>(n); });
    return std::vector<Tensor>{kernels::binary(ElementwiseKind::add, Tensor::zeros(shape), spread.view(kept))};
  });
}

Tensor sum_all(const Tensor& x) {
  count_call();
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor value = finish_op("sum_all", Tensor::scalar(s));
  Tensor inputs[] = {x};
  return Graph::record("sum_all", inputs, value, [shape = x.shape()](const Tensor& g) {
    return std::vector<Tensor>{Tensor::full(shape, g.item())};
  });
}

Tensor permute(const Tensor& x, std::span<const std::int64_t> axes) {
  count_call();
  Tensor out = kernels::permute(x, axes);
  std::vector<std::int64_t> inverse(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inverse[static_cast<std::size_t>(axes[i])] = static_cast<std::int64_t>(i);
  Tensor inputs[] = {x};
  return Graph::record("permute", inputs, out, [inverse = std::move(inverse)](const Tensor& g) {
    return std::vector<Tensor>{kernels::permute(g, inverse)};
  });
}

Tensor permute(const Tensor& x, std::initializer_list<std::int64_t> axes) {
  return permute(x, std::span<const std::int64_t>(axes.begin(), axes.size()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  count_call();
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("reshape: cannot reshape " + to_string(x.shape()) + " into " + to_string(shape));
  }
  for (auto d : shape) {
    if (d <= 0) throw DimensionError("reshape: extents must be positive, got " + to_string(shape));
  }
  Tensor out = x.detach().view(std::move(shape));
  Tensor inputs[] = {x};
  return Graph::record("reshape", inputs, out, [orig = x.shape()](const Tensor& g) {
    return std::vector<Tensor>{g.view(orig)};
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b) {
  count_call();
  if (x.rank() < 1 || w.rank() != 2) {
    throw DimensionError("linear: expected x[..,d_in] and w[d_in,d_out], got " + to_string(x.shape()) + " and " +
                         to_string(w.shape()));
  }
  const auto d_in = x.dim(-1);
  const auto d_out = w.dim(1);
  if (w.dim(0) != d_in) {
    throw DimensionError("linear: d_in mismatch between x " + to_string(x.shape()) + " and w " +
                         to_string(w.shape()));
  }
  if (b && b->shape() != Shape{d_out}) {
    throw DimensionError("linear: bias " + to_string(b->shape()) + " does not match d_out " + std::to_string(d_out));
  }
  const auto rows = x.numel() / d_in;
  Tensor flat = kernels::matmul(x.detach().view({rows, d_in}), w.detach());
  op_counters().matmul_flops += static_cast<std::uint64_t>(2 * rows * d_in * d_out);
  if (b) flat = kernels::binary(ElementwiseKind::add, flat, b->detach());
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  Tensor out = finish_op("linear", flat.view(std::move(out_shape)));

  std::vector<Tensor> inputs{x, w};
  if (b) inputs.push_back(*b);
  const bool has_bias = b.has_value();
  return Graph::record("linear", inputs, out,
                       [x = x.detach(), w = w.detach(), rows, d_in, d_out, has_bias](const Tensor& g) {
                         Tensor g2 = g.view({rows, d_out});
                         Tensor x2 = x.view({rows, d_in});
                         std::vector<Tensor> grads{
                             kernels::matmul(g2, kernels::transpose_last(w)).view(x.shape()),
                             kernels::matmul(kernels::transpose_last(x2), g2)};
                         if (has_bias) grads.push_back(kernels::sum_to(g2, {d_out}));
                         return grads;
                       });
}

Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length) {
  count_call();
  axis = normalize_axis(axis, x.rank(), "slice");
  Tensor out = kernels::slice(x, axis, start, length);
  Tensor inputs[] = {x};
  return Graph::record("slice", inputs, out, [shape = x.shape(), axis, start](const Tensor& g) {
    return std::vector<Tensor>{kernels::pad_slice(g, shape, axis, start)};
  });
}

Tensor concat(std::span<const Tensor> parts, std::int64_t axis) {
  count_call();
  Tensor out = kernels::concat(parts, axis);
  axis = normalize_axis(axis, out.rank(), "concat");
  std::vector<std::int64_t> extents;
  for (const auto& p : parts) extents.push_back(p.dim(axis));
  return Graph::record("concat", parts, out, [axis, extents = std::move(extents)](const Tensor& g) {
    std::vector<Tensor> grads;
    std::int64_t start = 0;
    for (auto e : extents) {
      grads.push_back(kernels::slice(g, axis, start, e));
      start += e;
    }
    return grads;
  });
}

Tensor identity(const Tensor& x) {
  count_call();
  Tensor inputs[] = {x};
  return Graph::record("identity", inputs, x.detach(), [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

}  // namespace branchpar
