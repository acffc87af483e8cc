// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchpar/layout.hpp"

#include <bit>

#include "branchpar/errors.hpp"

namespace branchpar {

void ParallelLayout::validate() const {
  if (dp < 1) throw ConfigError("layout.dp must be >= 1, got " + std::to_string(dp));
  if (bp < 1 || bp > 2) {
    throw ConfigError("layout.bp must be 1 or 2, got " + std::to_string(bp) +
                      ": a block has exactly two independent branches to distribute");
  }
  if (dap < 1 || !std::has_single_bit(static_cast<unsigned>(dap))) {
    throw ConfigError("layout.dap must be a power of two, got " + std::to_string(dap));
  }
}

void ParallelLayout::validate(const EvoConfig& cfg) const {
  validate();
  if (cfg.s % dap != 0 || cfg.r % dap != 0) {
    throw ConfigError("layout.dap=" + std::to_string(dap) + " must divide model.s=" + std::to_string(cfg.s) +
                      " and model.r=" + std::to_string(cfg.r));
  }
  if (bp == 2 && cfg.variant != Variant::parallel) {
    throw ConfigError("branch parallelism requires the parallel block variant (branch-independent blocks), got " +
                      std::string(to_string(cfg.variant)));
  }
}

std::string ParallelLayout::name() const {
  return "dp" + std::to_string(dp) + "-bp" + std::to_string(bp) + "-dap" + std::to_string(dap);
}

ParallelLayout::Coord ParallelLayout::coord(int rank) const {
  return {rank / (bp * dap), (rank / dap) % bp, rank % dap};
}

int ParallelLayout::rank_of(Coord c) const { return ((c.dp * bp) + c.bp) * dap + c.dap; }

RankGroups groups_of(const ParallelLayout& layout, int rank) {
  const auto c = layout.coord(rank);
  const int n_dap_groups = layout.dp * layout.bp;
  const int n_bp_groups = layout.dp * layout.dap;
  return {1 + c.dp * layout.bp + c.bp, 1 + n_dap_groups + c.dp * layout.dap + c.dap,
          1 + n_dap_groups + n_bp_groups + c.bp * layout.dap + c.dap};
}

GroupKind group_kind(const ParallelLayout& layout, int group) {
  const int n_dap_groups = layout.dp * layout.bp;
  const int n_bp_groups = layout.dp * layout.dap;
  if (group == 0) return GroupKind::world;
  if (group <= n_dap_groups) return GroupKind::dap;
  if (group <= n_dap_groups + n_bp_groups) return GroupKind::bp;
  return GroupKind::dp;
}

namespace {

std::vector<std::vector<int>> layout_groups(const ParallelLayout& layout) {
  std::vector<std::vector<int>> groups;
  for (int d = 0; d < layout.dp; ++d) {
    for (int b = 0; b < layout.bp; ++b) {
      std::vector<int> g;
      for (int a = 0; a < layout.dap; ++a) g.push_back(layout.rank_of({d, b, a}));
      groups.push_back(std::move(g));
    }
  }
  for (int d = 0; d < layout.dp; ++d) {
    for (int a = 0; a < layout.dap; ++a) {
      std::vector<int> g;
      for (int b = 0; b < layout.bp; ++b) g.push_back(layout.rank_of({d, b, a}));
      groups.push_back(std::move(g));
    }
  }
  for (int b = 0; b < layout.bp; ++b) {
    for (int a = 0; a < layout.dap; ++a) {
      std::vector<int> g;
      for (int d = 0; d < layout.dp; ++d) g.push_back(layout.rank_of({d, b, a}));
      groups.push_back(std::move(g));
    }
  }
  return groups;
}

}  // namespace

void check_world(const World& world, const ParallelLayout& layout) {
  auto groups = layout_groups(layout);
  bool ok = world.size() == layout.world_size() && world.group_count() == static_cast<int>(groups.size()) + 1;
  for (std::size_t i = 0; ok && i < groups.size(); ++i) ok = world.group(static_cast<int>(i) + 1) == groups[i];
  if (!ok) {
    throw ConfigError("world of " + std::to_string(world.size()) + " ranks was not built for layout " +
                      layout.name() + " (" + std::to_string(layout.world_size()) + " ranks)");
  }
}

std::unique_ptr<World> make_world(const ParallelLayout& layout, Precision precision) {
  layout.validate();
  return std::make_unique<World>(layout.world_size(), layout_groups(layout), precision);
}

}  // namespace branchpar
