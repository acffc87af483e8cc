// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>

#include "branchpar/errors.hpp"
#include "branchpar/run.hpp"

namespace branchpar {

namespace {

double ratio(double num, double den) {
  if (num == 0.0) return 0.0;
  if (den == 0.0 || !std::isfinite(num)) return std::numeric_limits<double>::infinity();
  return num / den;
}

TensorDeviation deviation(std::string name, const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) {
    throw ComparisonError("tensor '" + name + "' is missing from one of the runs");
  }
  if (a.shape() != b.shape()) {
    throw ComparisonError("tensor '" + name + "' has shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  TensorDeviation d;
  d.name = std::move(name);
  d.bit_equal = bit_equal(a, b);
  d.max_abs = max_abs_diff(a, b);
  d.max_rel = ratio(d.max_abs, max_abs(b));
  return d;
}

}  // namespace

ComparisonReport compare_runs(const RunResult& a, const RunResult& b, CompareMode mode) {
  std::string missing;
  for (const auto& e : b.grads.entries()) {
    if (!a.grads.contains(e.name)) missing += " " + e.name;
  }
  for (const auto& e : a.grads.entries()) {
    if (!b.grads.contains(e.name)) missing += " " + e.name;
  }
  if (!missing.empty()) throw ComparisonError("gradient keysets differ; unmatched:" + missing);

  ComparisonReport report;
  std::vector<int> category;
  std::vector<double> category_scale(4, 0.0);
  auto push = [&](std::string name, const Tensor& x, const Tensor& ref, int cat) {
    report.tensors.push_back(deviation(std::move(name), x, ref));
    category.push_back(cat);
    category_scale[cat] = std::max(category_scale[cat], max_abs(ref));
  };
  push("m_out", a.m_out, b.m_out, 0);
  push("z_out", a.z_out, b.z_out, 0);
  push("loss", Tensor::scalar(a.loss), Tensor::scalar(b.loss), 1);
  push("dm", a.dm, b.dm, 2);
  push("dz", a.dz, b.dz, 2);
  for (const auto& e : b.grads.entries()) push("grad:" + e.name, a.grads.at(e.name), e.value, 3);

  for (std::size_t i = 0; i < report.tensors.size(); ++i) {
    auto& d = report.tensors[i];
    d.norm_rel = ratio(d.max_abs, category_scale[category[i]]);
    const bool ok = mode.bitexact ? d.bit_equal : d.norm_rel <= mode.eps;
    report.passed = report.passed && ok;
    if (d.norm_rel > report.max_rel || (report.worst.empty() && !ok)) report.worst = d.name;
    report.max_rel = std::max(report.max_rel, d.norm_rel);
    report.max_abs = std::max(report.max_abs, d.max_abs);
  }
  return report;
}

}  // namespace branchpar
