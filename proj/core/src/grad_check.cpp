// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchpar/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "branchpar/autodiff.hpp"
#include "branchpar/errors.hpp"
#include "branchpar/ops.hpp"

namespace branchpar {

namespace {

struct Coord {
  std::size_t input;
  std::int64_t index;
};

// Every coordinate, in a seeded random order.
std::vector<Coord> shuffled_coords(std::span<const Tensor> inputs, std::uint64_t seed) {
  std::vector<Coord> all;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::int64_t k = 0; k < inputs[i].numel(); ++k) all.push_back({i, k});
  }
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  return all;
}

Tensor with_offset(const Tensor& t, std::int64_t index, double delta) {
  std::vector<double> values(t.data().begin(), t.data().end());
  values[static_cast<std::size_t>(index)] += delta;
  return Tensor(t.shape(), std::move(values));
}

struct Eval {
  double value;
  std::uint64_t relu_pattern;
};

Eval eval_scalar(const MultiScalarFn& f, std::span<const Tensor> inputs) {
  op_counters().relu_pattern = 0;
  Tensor out = f(inputs);
  if (out.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  return {out.item(), op_counters().relu_pattern};
}

}  // namespace

GradCheckReport grad_check(const MultiScalarFn& f, std::span<const Tensor> inputs, const GradCheckOptions& opts) {
  if (opts.h <= 0.0) throw ContractError("grad_check: step h must be positive");

  std::vector<Tensor> plain;
  for (const auto& in : inputs) plain.push_back(in.detach());

  Graph graph;
  std::vector<Tensor> leaves;
  for (const auto& in : plain) leaves.push_back(graph.leaf(in));
  Tensor loss = f(leaves);
  if (loss.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  if (!loss.attached()) throw ContractError("grad_check: function output does not depend on its inputs");
  GradientMap grads = graph.backward(loss);

  double grad_scale = 0.0;
  for (const auto& leaf : leaves) {
    for (double g : grads.of(leaf).data()) grad_scale = std::max(grad_scale, std::abs(g));
  }
  const double floor = std::max(opts.abs_floor, opts.scale_floor * grad_scale);

  const std::uint64_t centre = eval_scalar(f, plain).relu_pattern;
  const std::size_t wanted = opts.coords > 0 ? static_cast<std::size_t>(opts.coords) : SIZE_MAX;

  GradCheckReport report;
  for (const Coord& c : shuffled_coords(plain, opts.seed)) {
    if (static_cast<std::size_t>(report.checked) >= wanted) break;
    std::vector<Tensor> probe = plain;
    probe[c.input] = with_offset(plain[c.input], c.index, opts.h);
    const Eval up = eval_scalar(f, probe);
    probe[c.input] = with_offset(plain[c.input], c.index, -opts.h);
    const Eval down = eval_scalar(f, probe);
    if (up.relu_pattern != centre || down.relu_pattern != centre) {
      ++report.skipped_kinks;
      continue;
    }
    const double analytic = grads.of(leaves[c.input])[c.index];
    const double numeric = (up.value - down.value) / (2.0 * opts.h);

    const double abs_err = std::abs(analytic - numeric);
    const double rel_err = abs_err / std::max({std::abs(analytic), std::abs(numeric), floor});
    ++report.checked;
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    if (rel_err > report.max_rel_err || report.worst_index < 0) {
      report.max_rel_err = std::max(report.max_rel_err, rel_err);
      report.worst_input = c.input;
      report.worst_index = c.index;
    }
  }
  report.passed = report.max_rel_err <= opts.tol;
  return report;
}

GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, const GradCheckOptions& opts) {
  Tensor inputs[] = {x};
  return grad_check([&f](std::span<const Tensor> in) { return f(in[0]); }, inputs, opts);
}

}  // namespace branchpar
