// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic time model of one training step at production scale.
//
// Compute is costed from the matmul FLOPs of each sub-op plus a fixed
// overhead per operator launch. Communication is costed per collective as
// latency plus transferred bytes over link bandwidth, with ring factors for
// allgather and allreduce. Everything outside the Evoformer stack is one
// calibrated scalar.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "branchpar/evoformer.hpp"
#include "branchpar/layout.hpp"
#include "branchpar/run.hpp"

namespace branchpar {

struct DeviceModel {
  double compute_rate = 2.5e13;     // FLOP/s
  double link_bandwidth = 4.0e11;   // bytes/s
  double link_latency = 6.0e-4;     // s per collective
  double launch_overhead = 3.0e-5;  // s per operator launch
  double non_evoformer_time = 1.89; // s per step outside the Evoformer stack
  double bytes_per_element = 2.0;   // activation width on the wire

  /// Throws ConfigError unless every field is strictly positive.
  void validate() const;
};

/// Sub-op names in block order.
std::span<const std::string_view> sub_op_names();
/// Branch that executes a sub-op. The outer product mean runs with the MSA track.
Branch sub_op_branch(std::string_view sub_op);

/// Forward matmul FLOPs of one sub-op instance (2 per multiply-add).
/// Throws ConfigError for an unknown name.
std::int64_t op_flops(std::string_view sub_op, const EvoConfig& cfg);
/// Forward operator launches of one sub-op instance. Independent of sizes.
std::int64_t op_launches(std::string_view sub_op);
/// Launches of the residual adds and branch forks that wire a block.
std::int64_t block_glue_launches();

/// Forward FLOPs of one block (sum over sub-ops).
std::int64_t block_flops(const EvoConfig& cfg);

struct SubOpCost {
  std::string name;
  std::int64_t flops = 0;  // forward, per block
};

struct CostReport {
  ParallelLayout layout;
  std::vector<SubOpCost> sub_ops;
  double evoformer_time = 0.0;  // max-path Evoformer compute plus its collectives
  double other_time = 0.0;
  double comm_time = 0.0;       // collective time on the max path
  double step_time = 0.0;
  double evoformer_fraction = 0.0;
  double speedup = 1.0;         // step_time of bp = dap = 1 (same dp) over step_time
};

/// Modeled step of one replica. `recycle_factor` multiplies forward work and
/// forward collectives; the backward pass runs once at twice the forward cost.
CostReport step_time(const EvoConfig& cfg, const ParallelLayout& layout, const DeviceModel& device,
                     double recycle_factor = 2.5);

/// evoformer_time / (evoformer_time + non_evoformer_time) for bp = dap = 1.
double evoformer_fraction(const EvoConfig& cfg, const DeviceModel& device, double recycle_factor = 2.5);

/// Upper bound on BP speedup when both branches cost the same and
/// communication is free: 1 / (1 - f / 2).
double bp_ideal_speedup(double evoformer_fraction);

struct ScheduleBytes {
  GroupKind schedule;
  Phase phase;
  std::int64_t bytes = 0;
};

/// expected_comm_volume scaled to bytes, one entry per (schedule, phase).
/// Each payload is counted once per remote rank that receives it, i.e.
/// elements * (group size - 1) * bytes_per_element; a two-rank BP group
/// therefore moves exactly its logical volume.
std::vector<ScheduleBytes> schedule_bytes(const EvoConfig& cfg, const ParallelLayout& layout,
                                          double bytes_per_element);

/// One row of a speedup table.
struct SpeedupRow {
  std::string preset;
  ParallelLayout layout;
  double step_time = 0.0;
  double proteins_per_second = 0.0;  // global_batch / step_time
  double gain_percent = 0.0;         // vs the preset's first layout
  double evoformer_fraction = 0.0;
  std::int64_t comm_bytes = 0;       // per step, all schedules
};

struct CostPreset {
  std::string name;
  EvoConfig cfg;
  DeviceModel device;
};

/// Models every layout for every preset. The first layout of each preset is
/// its baseline.
std::vector<SpeedupRow> speedup_report(std::span<const CostPreset> presets, std::span<const ParallelLayout> layouts,
                                       double recycle_factor = 2.5, std::int64_t global_batch = 128);

/// Header plus one line per row.
void write_speedup_csv(std::ostream& os, std::span<const SpeedupRow> rows);

/// Production-scale shapes for the two training stages, 52 blocks each,
/// with the matching non-Evoformer time.
CostPreset initial_training_preset();
CostPreset fine_tuning_preset();

}  // namespace branchpar
