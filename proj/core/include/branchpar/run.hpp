// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0
//
// Forward + backward executions of the Evoformer stack on one rank or on a
// simulated world, and tools to check them against each other.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "branchpar/comm.hpp"
#include "branchpar/evoformer.hpp"
#include "branchpar/layout.hpp"

namespace branchpar {

/// How gradient synchronization is packed into collectives.
enum class GradSync {
  per_tensor,  // one collective per parameter tensor
  fused,       // one collective per owner / group carrying every tensor
};

struct RunOptions {
  Precision precision = Precision::f64;
  GradSync grad_sync = GradSync::per_tensor;
};

struct RunResult {
  Tensor m_out;
  Tensor z_out;
  double loss = 0.0;
  Tensor dm;  // gradient of the loss w.r.t. the input m
  Tensor dz;  // gradient of the loss w.r.t. the input z
  ParamStore grads;
  CommTrace trace;
  std::vector<double> forward_seconds;  // per rank
};

/// Single-rank oracle: forward stack, synthetic loss, backward.
RunResult run_single(const Sample& sample, const ParamStore& params, const EvoConfig& cfg,
                     const RunOptions& opts = {});

/// Branch parallelism on two ranks.
RunResult run_bp(const Sample& sample, const ParamStore& params, const EvoConfig& cfg,
                 const RunOptions& opts = {});
RunResult run_bp(World& world, const Sample& sample, const ParamStore& params, const EvoConfig& cfg,
                 const RunOptions& opts = {});

/// Axial parallelism over `dap` ranks.
RunResult run_dap(const Sample& sample, const ParamStore& params, const EvoConfig& cfg, int dap,
                  const RunOptions& opts = {});

/// Data parallelism, one sample per rank; gradients are averaged.
RunResult run_dp(std::span<const Sample> batch, const ParamStore& params, const EvoConfig& cfg, int dp,
                 const RunOptions& opts = {});

/// Any combination of the three. `batch` holds one sample per DP replica.
RunResult run_hybrid(std::span<const Sample> batch, const ParamStore& params, const EvoConfig& cfg,
                     const ParallelLayout& layout, const RunOptions& opts = {});

/// run_hybrid on a caller-provided world built by make_world(layout).
RunResult run_on_world(World& world, std::span<const Sample> batch, const ParamStore& params, const EvoConfig& cfg,
                       const ParallelLayout& layout, const RunOptions& opts = {});

// ---------------------------------------------------------------------------
// Comparison

struct CompareMode {
  bool bitexact = true;
  double eps = 0.0;

  static CompareMode exact() { return {true, 0.0}; }
  static CompareMode tol(double eps) { return {false, eps}; }
};

struct TensorDeviation {
  std::string name;
  double max_abs = 0.0;
  /// max |a - b| / max |b| over the tensor.
  double max_rel = 0.0;
  /// max |a - b| divided by the largest |b| over the tensor's category
  /// (outputs, loss, input gradients, parameter gradients). Parameters whose
  /// gradient vanishes analytically carry only rounding noise, which this
  /// measures against the size of the whole gradient.
  double norm_rel = 0.0;
  bool bit_equal = true;
};

struct ComparisonReport {
  std::vector<TensorDeviation> tensors;
  double max_abs = 0.0;
  double max_rel = 0.0;   // largest norm_rel; this is what tolerance mode tests
  std::string worst;
  bool passed = true;
};

/// Compares outputs, loss, input gradients and every parameter gradient of
/// `a` against the reference `b`.
ComparisonReport compare_runs(const RunResult& a, const RunResult& b, CompareMode mode);

// ---------------------------------------------------------------------------
// Communication volume

struct CommVolumeEntry {
  GroupKind schedule;
  Phase phase;
  CollectiveKind kind;
  std::int64_t collectives = 0;
  std::int64_t elements = 0;

  bool operator==(const CommVolumeEntry&) const = default;
};

std::string_view to_string(GroupKind k);

/// Closed-form communication of one training step, summed over all groups
/// of each schedule, in canonical (schedule, phase, kind) order.
std::vector<CommVolumeEntry> expected_comm_volume(const EvoConfig& cfg, const ParallelLayout& layout,
                                                  GradSync sync = GradSync::per_tensor);

/// Communication of a single DAP group of `dap` ranks that executes one
/// branch (or both when `branch` is empty). Empty when dap == 1.
std::vector<CommVolumeEntry> dap_group_volume(const EvoConfig& cfg, int dap, std::optional<Branch> branch,
                                              GradSync sync = GradSync::per_tensor);

/// The same aggregation applied to a recorded trace.
std::vector<CommVolumeEntry> observed_comm_volume(const CommTrace& trace, const ParallelLayout& layout);

std::int64_t total_elements(std::span<const CommVolumeEntry> entries, std::optional<GroupKind> schedule = {});

}  // namespace branchpar
