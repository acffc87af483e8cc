// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "branchpar/tensor.hpp"

namespace branchpar {

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-6;
  int coords = 32;
  std::uint64_t seed = 32;
  /// Relative errors are taken against max(|analytic|, |numeric|, floor) with
  /// floor = max(abs_floor, scale_floor * max |analytic gradient|). The scale
  /// term keeps coordinates whose gradient sits at the finite-difference noise
  /// level from dominating the report.
  double abs_floor = 1e-8;
  double scale_floor = 1e-3;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int checked = 0;
  /// Coordinates passed over because x +/- h changed which side of zero some
  /// relu input lies on; central differences are meaningless there.
  int skipped_kinks = 0;
  std::size_t worst_input = 0;
  std::int64_t worst_index = -1;
  bool passed = true;
};

using ScalarFn = std::function<Tensor(const Tensor&)>;
using MultiScalarFn = std::function<Tensor(std::span<const Tensor>)>;

/// Compares the autodiff gradient of scalar `f` at `x` against central
/// differences on a seeded sample of coordinates. Coordinates whose stencil
/// straddles a relu kink are replaced by the next coordinate in the seeded
/// order, so `coords` valid coordinates are checked whenever they exist.
GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, const GradCheckOptions& opts = {});

/// Same, with coordinates sampled uniformly across all `inputs`.
GradCheckReport grad_check(const MultiScalarFn& f, std::span<const Tensor> inputs,
                           const GradCheckOptions& opts = {});

}  // namespace branchpar
