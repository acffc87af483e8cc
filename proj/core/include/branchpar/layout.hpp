// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "branchpar/comm.hpp"
#include "branchpar/evoformer.hpp"

namespace branchpar {

/// Degrees of data, branch and axial parallelism. Ranks are laid out as
/// rank = ((dp_idx * bp) + bp_idx) * dap + dap_idx.
struct ParallelLayout {
  int dp = 1;
  int bp = 1;
  int dap = 1;

  int world_size() const { return dp * bp * dap; }
  /// Degrees must be positive, bp at most 2 and dap a power of two. With a
  /// config, dap must also divide s and r.
  void validate() const;
  void validate(const EvoConfig& cfg) const;
  std::string name() const;

  struct Coord {
    int dp;
    int bp;
    int dap;
  };
  Coord coord(int rank) const;
  int rank_of(Coord c) const;
};

/// Group ids of the three kinds of groups a rank belongs to.
struct RankGroups {
  int dap;
  int bp;
  int dp;
};

/// Every DAP group (ranks sharing dp and bp index) comes first, then every
/// BP group, then every DP group; group 0 is the whole world.
RankGroups groups_of(const ParallelLayout& layout, int rank);

enum class GroupKind { world, dap, bp, dp };
GroupKind group_kind(const ParallelLayout& layout, int group);

/// Throws ConfigError unless `world` has exactly the groups make_world(layout) builds.
void check_world(const World& world, const ParallelLayout& layout);

std::unique_ptr<World> make_world(const ParallelLayout& layout, Precision precision = Precision::f64);

}  // namespace branchpar
