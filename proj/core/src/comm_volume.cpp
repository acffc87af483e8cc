// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include <map>
#include <tuple>

#include "branchpar/run.hpp"

namespace branchpar {

std::string_view to_string(GroupKind k) {
  switch (k) {
    case GroupKind::world:
      return "world";
    case GroupKind::dap:
      return "dap";
    case GroupKind::bp:
      return "bp";
    case GroupKind::dp:
      return "dp";
  }
  return "?";
}

namespace {

using Key = std::tuple<GroupKind, Phase, CollectiveKind>;

struct Tally {
  std::int64_t collectives = 0;
  std::int64_t elements = 0;
};

class Accumulator {
 public:
  void add(GroupKind g, Phase p, CollectiveKind k, std::int64_t collectives, std::int64_t elements) {
    if (collectives == 0) return;
    auto& t = tally_[{g, p, k}];
    t.collectives += collectives;
    t.elements += elements;
  }

  std::vector<CommVolumeEntry> entries() const {
    std::vector<CommVolumeEntry> out;
    for (const auto& [key, t] : tally_) {
      out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), t.collectives, t.elements});
    }
    return out;
  }

 private:
  std::map<Key, Tally> tally_;
};

struct ParamTotals {
  std::int64_t tensors = 0;
  std::int64_t elements = 0;
};

ParamTotals param_totals(const std::vector<ParamInfo>& params, std::optional<Branch> branch) {
  ParamTotals t;
  for (const auto& p : params) {
    if (branch && p.branch != *branch) continue;
    ++t.tensors;
    t.elements += numel_of(p.shape);
  }
  return t;
}

std::int64_t sync_collectives(const ParamTotals& t, GradSync sync) {
  if (t.tensors == 0) return 0;
  return sync == GradSync::per_tensor ? t.tensors : 1;
}

void add_dap_group(Accumulator& acc, const EvoConfig& cfg, const std::vector<ParamInfo>& params,
                   std::optional<Branch> branch, GradSync sync) {
  using CK = CollectiveKind;
  const std::int64_t L = cfg.n_blocks;
  const std::int64_t S = cfg.s * cfg.r * cfg.c_m;                // MSA representation
  const std::int64_t Z = cfg.r * cfg.r * cfg.c_z;                // pair representation
  const std::int64_t O = cfg.r * cfg.r * cfg.c_opm * cfg.c_opm;  // outer-product sum
  const std::int64_t A = cfg.r * cfg.r * cfg.c_opm;              // triangle projection
  const std::int64_t H = cfg.r * cfg.r * cfg.h;                  // attention bias
  const bool msa = !branch || *branch == Branch::msa;
  const bool pair = !branch || *branch == Branch::pair;
  if (msa) {
    // Row attention gathers s-shards, column attention and transition gather r-shards.
    acc.add(GroupKind::dap, Phase::fwd, CK::allgather, 2 * L, 2 * L * S);
    acc.add(GroupKind::dap, Phase::bwd, CK::allreduce, 2 * L, 2 * L * S);
    // Outer product mean: partial sums over s-shards.
    acc.add(GroupKind::dap, Phase::fwd, CK::allreduce, L, L * O);
    acc.add(GroupKind::dap, Phase::bwd, CK::allreduce, L, L * O);
  }
  if (pair) {
    // Outgoing: b. Incoming: a and b. Starting attention: bias. Ending
    // attention: z, bias and the transposed delta. Block end: z.
    const std::int64_t elements = 3 * A + 2 * H + 3 * Z;
    acc.add(GroupKind::dap, Phase::fwd, CK::allgather, 8 * L, L * elements);
    acc.add(GroupKind::dap, Phase::bwd, CK::allreduce, 8 * L, L * elements);
  }
  const ParamTotals owned = param_totals(params, branch);
  acc.add(GroupKind::dap, Phase::param, CK::allreduce, sync_collectives(owned, sync), owned.elements);
  acc.add(GroupKind::dap, Phase::bwd, CK::allreduce, 2, S + Z);
}

}  // namespace

std::vector<CommVolumeEntry> dap_group_volume(const EvoConfig& cfg, int dap, std::optional<Branch> branch,
                                              GradSync sync) {
  Accumulator acc;
  if (dap > 1) add_dap_group(acc, cfg, param_layout(cfg), branch, sync);
  return acc.entries();
}

std::vector<CommVolumeEntry> expected_comm_volume(const EvoConfig& cfg, const ParallelLayout& layout, GradSync sync) {
  layout.validate();
  const auto params = param_layout(cfg);
  const std::int64_t L = cfg.n_blocks;
  const std::int64_t S = cfg.s * cfg.r * cfg.c_m;
  const std::int64_t Z = cfg.r * cfg.r * cfg.c_z;
  const ParamTotals all = param_totals(params, std::nullopt);

  Accumulator acc;
  using CK = CollectiveKind;

  if (layout.dap > 1) {
    // One DAP group per replica and branch set; bp == 1 runs both branches in one set.
    for (int g = 0; g < layout.dp; ++g) {
      if (layout.bp == 1) {
        add_dap_group(acc, cfg, params, std::nullopt, sync);
      } else {
        add_dap_group(acc, cfg, params, Branch::msa, sync);
        add_dap_group(acc, cfg, params, Branch::pair, sync);
      }
    }
  }

  if (layout.bp == 2) {
    const std::int64_t n_groups = static_cast<std::int64_t>(layout.dp) * layout.dap;
    const ParamTotals msa = param_totals(params, Branch::msa);
    const ParamTotals pair = param_totals(params, Branch::pair);
    for (std::int64_t g = 0; g < n_groups; ++g) {
      acc.add(GroupKind::bp, Phase::fwd, CK::broadcast, 2 * L, 2 * L * Z);
      acc.add(GroupKind::bp, Phase::bwd, CK::broadcast, L, L * Z);
      acc.add(GroupKind::bp, Phase::bwd, CK::allreduce, L, L * Z);
      acc.add(GroupKind::bp, Phase::bwd, CK::broadcast, 1, S);
      acc.add(GroupKind::bp, Phase::param, CK::broadcast,
              sync_collectives(msa, sync) + sync_collectives(pair, sync), msa.elements + pair.elements);
    }
  }

  if (layout.dp > 1) {
    const std::int64_t n_groups = static_cast<std::int64_t>(layout.bp) * layout.dap;
    for (std::int64_t g = 0; g < n_groups; ++g) {
      acc.add(GroupKind::dp, Phase::param, CK::allreduce, sync_collectives(all, sync), all.elements);
    }
  }
  return acc.entries();
}

std::vector<CommVolumeEntry> observed_comm_volume(const CommTrace& trace, const ParallelLayout& layout) {
  Accumulator acc;
  for (const auto& r : trace.records) acc.add(group_kind(layout, r.group), r.phase, r.kind, 1, r.elements);
  return acc.entries();
}

std::int64_t total_elements(std::span<const CommVolumeEntry> entries, std::optional<GroupKind> schedule) {
  std::int64_t n = 0;
  for (const auto& e : entries) {
    if (!schedule || e.schedule == *schedule) n += e.elements;
  }
  return n;
}

}  // namespace branchpar
