// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchpar/sharded.hpp"

#include "branchpar/autodiff.hpp"
#include "branchpar/errors.hpp"
#include "branchpar/ops.hpp"

namespace branchpar {

namespace {

std::int64_t shard_extent(std::int64_t full, const ShardGroup& g) {
  if (full % g.size != 0) {
    throw ConfigError("extent " + std::to_string(full) + " is not divisible by " + std::to_string(g.size) +
                      " shards");
  }
  return full / g.size;
}

}  // namespace

Tensor dap_shard(const Tensor& full, std::int64_t axis, const ShardGroup& g) {
  const auto len = shard_extent(full.dim(axis), g);
  return slice(full, axis, g.index * len, len);
}

Tensor dap_gather(const Tensor& shard, std::int64_t axis, const ShardGroup& g) {
  if (axis < 0) axis += shard.rank();
  Tensor full = g.comm->allgather(g.group, shard.detach(), axis, Phase::fwd);
  const auto len = shard.dim(axis);
  Tensor inputs[] = {shard};
  return Graph::record("dap_gather", inputs, full, [g, axis, len](const Tensor& grad) {
    Tensor total = g.comm->allreduce_sum(g.group, grad, Phase::bwd);
    return std::vector<Tensor>{kernels::slice(total, axis, g.index * len, len)};
  });
}

Tensor dap_reduce(const Tensor& partial, const ShardGroup& g) {
  Tensor total = g.comm->allreduce_sum(g.group, partial.detach(), Phase::fwd);
  Tensor inputs[] = {partial};
  return Graph::record("dap_reduce", inputs, total, [g](const Tensor& grad) {
    return std::vector<Tensor>{g.comm->allreduce_sum(g.group, grad, Phase::bwd)};
  });
}

Tensor ShardedTracks::msa_track(const Tensor& m, const Tensor& z, const ParamStore& params, const EvoConfig& cfg,
                                std::int64_t block) {
  // Row attention mixes residues within one MSA row: shard the rows.
  auto row = op_context(params, cfg, block, "row_attn");
  Tensor rows = dap_shard(m, 0, g_);
  Tensor bias = row_attn_bias(z, row);
  rows = add(rows, row_attn_core(rows, bias, row));
  Tensor m1 = dap_gather(rows, 0, g_);

  // Column attention mixes MSA rows within one residue column: shard columns.
  Tensor cols = dap_shard(m1, 1, g_);
  cols = add(cols, col_attn(cols, op_context(params, cfg, block, "col_attn")));
  cols = add(cols, msa_transition(cols, op_context(params, cfg, block, "msa_transition")));
  return dap_gather(cols, 1, g_);
}

Tensor ShardedTracks::opm(const Tensor& m, const ParamStore& params, const EvoConfig& cfg, std::int64_t block) {
  auto p = op_context(params, cfg, block, "opm");
  Tensor partial = opm_partial_sum(dap_shard(m, 0, g_), p);
  return opm_finish(dap_reduce(partial, g_), m.dim(0), p);
}

Tensor ShardedTracks::attn_start_rows(const Tensor& rows, const OpContext& p) {
  Tensor z_hat = tri_attn_norm(rows, p);
  Tensor bias = dap_gather(tri_attn_bias(z_hat, p), 0, g_);
  return gated_attention(z_hat, bias, p);
}

Tensor ShardedTracks::pair_track(const Tensor& z, const ParamStore& params, const EvoConfig& cfg,
                                 std::int64_t block) {
  Tensor rows = dap_shard(z, 0, g_);

  {
    auto p = op_context(params, cfg, block, "tri_mult_out");
    TriProjection proj = tri_mult_project(rows, p);
    Tensor b = dap_gather(proj.b, 0, g_);
    rows = add(rows, tri_mult_finish(proj.z_hat, tri_mult_core(proj.a, b, TriMode::outgoing), p));
  }
  {
    auto p = op_context(params, cfg, block, "tri_mult_in");
    TriProjection proj = tri_mult_project(rows, p);
    Tensor a = dap_gather(proj.a, 0, g_);
    Tensor b = dap_gather(proj.b, 0, g_);
    Tensor a_cols = dap_shard(a, 1, g_);
    rows = add(rows, tri_mult_finish(proj.z_hat, tri_mult_core(a_cols, b, TriMode::incoming), p));
  }
  rows = add(rows, attn_start_rows(rows, op_context(params, cfg, block, "tri_attn_start")));
  {
    // Ending-node attention is starting-node attention on the transpose.
    Tensor full = dap_gather(rows, 0, g_);
    Tensor t_rows = dap_shard(permute(full, {1, 0, 2}), 0, g_);
    Tensor delta_t = dap_gather(attn_start_rows(t_rows, op_context(params, cfg, block, "tri_attn_end")), 0, g_);
    rows = add(rows, dap_shard(permute(delta_t, {1, 0, 2}), 0, g_));
  }
  rows = add(rows, pair_transition(rows, op_context(params, cfg, block, "pair_transition")));
  return dap_gather(rows, 0, g_);
}

}  // namespace branchpar
