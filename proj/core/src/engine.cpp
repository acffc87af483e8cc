// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-rank schedules. Every rank of a world runs `run_rank`, which picks the
// schedule from the layout:
//
//   bp = 1           one graph for the whole stack; with dap > 1 the tracks
//                    are sharded over the rank's DAP group.
//   bp = 2           one graph per block and per branch. The MSA rank runs
//                    the MSA track and the outer product mean, the pair rank
//                    runs the pair track; the two meet through broadcasts.
//
// Gradients are then synchronized DAP group first, BP group second and DP
// group last.

#include <chrono>
#include <memory>

#include "branchpar/autodiff.hpp"
#include "branchpar/errors.hpp"
#include "branchpar/ops.hpp"
#include "branchpar/run.hpp"
#include "branchpar/sharded.hpp"

namespace branchpar {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct RankOutput {
  Tensor m_out;
  Tensor z_out;
  double loss = 0.0;
  Tensor dm;
  Tensor dz;
  ParamStore grads;
  double forward_seconds = 0.0;
};

ParamStore zero_grads(const ParamStore& params) {
  return params.map([](const ParamEntry& e) { return Tensor::zeros(e.value.shape()); });
}

std::string block_prefix(std::int64_t block) { return "blk" + std::to_string(block) + "."; }

// ---------------------------------------------------------------------------
// Whole-stack graph (bp = 1)

RankOutput run_whole_graph(const Sample& sample, const ParamStore& params, const EvoConfig& cfg,
                           const ShardGroup* dap) {
  Graph graph;
  ParamStore leaves = params.map([&](const ParamEntry& e) { return graph.leaf(e.value); });
  Tensor m = graph.leaf(sample.m);
  Tensor z = graph.leaf(sample.z);

  auto t0 = Clock::now();
  std::unique_ptr<ShardedTracks> sharded;
  if (dap) sharded = std::make_unique<ShardedTracks>(*dap);
  TrackOps& tracks = sharded ? static_cast<TrackOps&>(*sharded) : local_tracks();
  BlockOutput out = evoformer_stack(m, z, leaves, cfg, tracks);

  RankOutput result;
  result.forward_seconds = seconds_since(t0);
  result.m_out = out.m.detach();
  result.z_out = out.z.detach();

  Tensor loss;
  if (dap) {
    // Each rank owns the loss terms of its rows; the partial losses sum to
    // the full loss.
    loss = add(loss_term(dap_shard(out.m, 0, *dap), out.m.numel()),
               loss_term(dap_shard(out.z, 0, *dap), out.z.numel()));
    result.loss = synthetic_loss(result.m_out, result.z_out).item();
  } else {
    loss = synthetic_loss(out.m, out.z);
    result.loss = loss.item();
  }
  GradientMap grads = graph.backward(loss);
  result.dm = grads.of(m);
  result.dz = grads.of(z);
  result.grads = leaves.map([&](const ParamEntry& e) { return grads.of(e.value); });
  return result;
}

// ---------------------------------------------------------------------------
// Branch-parallel schedule (bp = 2)

struct BlockGraph {
  std::unique_ptr<Graph> graph;
  ParamStore leaves;
  Tensor m_in;   // MSA rank
  Tensor z_in;
  Tensor m_out;  // MSA rank
  Tensor o;      // MSA rank: opm output
  Tensor z_out;  // pair rank: pair track + opm
};

RankOutput run_branch_parallel(Communicator& comm, const Sample& sample, const ParamStore& params,
                               const EvoConfig& cfg, const ParallelLayout& layout, const ShardGroup* dap) {
  const auto coord = layout.coord(comm.rank());
  const auto groups = groups_of(layout, comm.rank());
  const bool is_msa = coord.bp == 0;
  const Branch own = is_msa ? Branch::msa : Branch::pair;
  const int msa_rank = layout.rank_of({coord.dp, 0, coord.dap});
  const int pair_rank = layout.rank_of({coord.dp, 1, coord.dap});
  const Tensor pair_placeholder = Tensor::zeros(cfg.pair_shape());

  std::unique_ptr<ShardedTracks> sharded;
  if (dap) sharded = std::make_unique<ShardedTracks>(*dap);
  TrackOps& tracks = sharded ? static_cast<TrackOps&>(*sharded) : local_tracks();

  RankOutput result;
  result.grads = zero_grads(params);

  // Forward.
  Tensor m = is_msa ? sample.m : Tensor();
  Tensor z = sample.z;
  std::vector<BlockGraph> blocks(static_cast<std::size_t>(cfg.n_blocks));
  auto t0 = Clock::now();
  for (std::int64_t blk = 0; blk < cfg.n_blocks; ++blk) {
    BlockGraph& bg = blocks[static_cast<std::size_t>(blk)];
    bg.graph = std::make_unique<Graph>();
    Graph& g = *bg.graph;
    const std::string prefix = block_prefix(blk);
    for (const auto& e : params.entries()) {
      if (e.branch == own && e.name.starts_with(prefix)) bg.leaves.add(e.name, g.leaf(e.value), e.branch);
    }
    bg.z_in = g.leaf(z);
    if (is_msa) {
      bg.m_in = g.leaf(m);
      Tensor m_track = identity(bg.m_in);
      Tensor z_bias = identity(bg.z_in);
      bg.m_out = tracks.msa_track(m_track, z_bias, bg.leaves, cfg, blk);
      bg.o = tracks.opm(bg.m_out, bg.leaves, cfg, blk);
      comm.broadcast(groups.bp, msa_rank, bg.o.detach(), Phase::fwd);
      z = comm.broadcast(groups.bp, pair_rank, pair_placeholder, Phase::fwd);
      m = bg.m_out.detach();
    } else {
      Tensor z_track = identity(bg.z_in);
      Tensor z_mid = tracks.pair_track(z_track, bg.leaves, cfg, blk);
      Tensor o = g.leaf(comm.broadcast(groups.bp, msa_rank, pair_placeholder, Phase::fwd));
      bg.z_out = add(z_mid, o);
      z = comm.broadcast(groups.bp, pair_rank, bg.z_out.detach(), Phase::fwd);
    }
  }
  result.forward_seconds = seconds_since(t0);
  result.m_out = m;
  result.z_out = z;

  // Loss seeds. The MSA rank holds both outputs and reports the loss value.
  Tensor dm, dz;
  {
    Graph g;
    Tensor zl = g.leaf(z);
    Tensor lz = dap ? loss_term(dap_shard(zl, 0, *dap), zl.numel()) : loss_term(zl, zl.numel());
    dz = g.backward(lz).of(zl);
  }
  if (is_msa) {
    Graph g;
    Tensor ml = g.leaf(m);
    Tensor lm = dap ? loss_term(dap_shard(ml, 0, *dap), ml.numel()) : loss_term(ml, ml.numel());
    dm = g.backward(lm).of(ml);
    result.loss = synthetic_loss(m, z).item();
  }

  // Backward, last block first.
  for (std::int64_t blk = cfg.n_blocks - 1; blk >= 0; --blk) {
    BlockGraph& bg = blocks[static_cast<std::size_t>(blk)];
    Tensor d_o = comm.broadcast(groups.bp, pair_rank, is_msa ? pair_placeholder : dz, Phase::bwd);
    GradientMap grads;
    if (is_msa) {
      Seed seeds[] = {{bg.m_out, dm}, {bg.o, d_o}};
      grads = bg.graph->backward(seeds);
      dm = grads.of(bg.m_in);
    } else {
      Seed seeds[] = {{bg.z_out, dz}};
      grads = bg.graph->backward(seeds);
    }
    for (const auto& e : bg.leaves.entries()) result.grads.set(e.name, grads.of(e.value));
    dz = comm.allreduce_sum(groups.bp, grads.of(bg.z_in), Phase::bwd);
    bg.graph.reset();
  }
  result.dm = comm.broadcast(groups.bp, msa_rank, is_msa ? dm : Tensor::zeros(cfg.msa_shape()), Phase::bwd);
  result.dz = dz;
  return result;
}

// ---------------------------------------------------------------------------
// Gradient synchronization

Tensor flatten(const std::vector<Tensor>& parts) {
  std::vector<Tensor> flat;
  flat.reserve(parts.size());
  for (const auto& p : parts) flat.push_back(p.view({p.numel()}));
  return kernels::concat(flat, 0);
}

std::vector<Tensor> unflatten(const Tensor& flat, const std::vector<Tensor>& like) {
  std::vector<Tensor> out;
  std::int64_t offset = 0;
  for (const auto& t : like) {
    out.push_back(kernels::slice(flat, 0, offset, t.numel()).view(t.shape()));
    offset += t.numel();
  }
  return out;
}

template <class Collective>
void sync_grads(ParamStore& grads, const std::vector<std::string>& names, GradSync mode, Collective collective) {
  if (names.empty()) return;
  if (mode == GradSync::per_tensor) {
    for (const auto& n : names) grads.set(n, collective(grads.at(n)));
    return;
  }
  std::vector<Tensor> parts;
  for (const auto& n : names) parts.push_back(grads.at(n));
  auto synced = unflatten(collective(flatten(parts)), parts);
  for (std::size_t i = 0; i < names.size(); ++i) grads.set(names[i], synced[i]);
}

std::vector<std::string> names_of(const ParamStore& store, std::optional<Branch> branch) {
  std::vector<std::string> out;
  for (const auto& e : store.entries()) {
    if (!branch || e.branch == *branch) out.push_back(e.name);
  }
  return out;
}

RankOutput run_rank(Communicator& comm, std::span<const Sample> batch, const ParamStore& params,
                    const EvoConfig& cfg, const ParallelLayout& layout, const RunOptions& opts) {
  const auto coord = layout.coord(comm.rank());
  const auto groups = groups_of(layout, comm.rank());
  const Sample& sample = batch[static_cast<std::size_t>(coord.dp)];

  ShardGroup dap_group{&comm, groups.dap, coord.dap, layout.dap};
  const ShardGroup* dap = layout.dap > 1 ? &dap_group : nullptr;

  RankOutput out = layout.bp == 1 ? run_whole_graph(sample, params, cfg, dap)
                                  : run_branch_parallel(comm, sample, params, cfg, layout, dap);

  if (dap) {
    std::optional<Branch> owned;
    if (layout.bp == 2) owned = coord.bp == 0 ? Branch::msa : Branch::pair;
    sync_grads(out.grads, names_of(params, owned), opts.grad_sync,
               [&](const Tensor& t) { return comm.allreduce_sum(groups.dap, t, Phase::param); });
    out.dm = comm.allreduce_sum(groups.dap, out.dm, Phase::bwd);
    out.dz = comm.allreduce_sum(groups.dap, out.dz, Phase::bwd);
  }
  if (layout.bp == 2) {
    for (Branch b : {Branch::msa, Branch::pair}) {
      const int owner = layout.rank_of({coord.dp, b == Branch::msa ? 0 : 1, coord.dap});
      sync_grads(out.grads, names_of(params, b), opts.grad_sync,
                 [&](const Tensor& t) { return comm.broadcast(groups.bp, owner, t, Phase::param); });
    }
  }
  if (layout.dp > 1) {
    const double dp = static_cast<double>(layout.dp);
    sync_grads(out.grads, names_of(params, std::nullopt), opts.grad_sync, [&](const Tensor& t) {
      Tensor sum = comm.allreduce_sum(groups.dp, t, Phase::param);
      std::vector<double> mean(sum.data().begin(), sum.data().end());
      for (auto& v : mean) v /= dp;
      return finish_op("dp_mean", Tensor(sum.shape(), std::move(mean)));
    });
  }
  return out;
}

void check_sample(const Sample& s, const EvoConfig& cfg) {
  if (s.m.shape() != cfg.msa_shape() || s.z.shape() != cfg.pair_shape()) {
    throw DimensionError("sample shapes " + to_string(s.m.shape()) + " / " + to_string(s.z.shape()) +
                         " do not match the config " + to_string(cfg.msa_shape()) + " / " +
                         to_string(cfg.pair_shape()));
  }
}

}  // namespace

RunResult run_single(const Sample& sample, const ParamStore& params, const EvoConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  check_sample(sample, cfg);
  ScopedExecMode mode({opts.precision, true});
  RankOutput out = run_whole_graph(sample, params, cfg, nullptr);
  RunResult r;
  r.m_out = out.m_out;
  r.z_out = out.z_out;
  r.loss = out.loss;
  r.dm = out.dm;
  r.dz = out.dz;
  r.grads = std::move(out.grads);
  r.forward_seconds = {out.forward_seconds};
  return r;
}

RunResult run_on_world(World& world, std::span<const Sample> batch, const ParamStore& params, const EvoConfig& cfg,
                       const ParallelLayout& layout, const RunOptions& opts) {
  cfg.validate();
  layout.validate(cfg);
  check_world(world, layout);
  if (static_cast<int>(batch.size()) != layout.dp) {
    throw ConfigError("batch holds " + std::to_string(batch.size()) + " samples but dp=" +
                      std::to_string(layout.dp) + " (one sample per replica)");
  }
  for (const auto& s : batch) check_sample(s, cfg);

  ScopedExecMode mode({opts.precision, true});
  auto outputs = spawn_world(world, [&](Communicator& comm) { return run_rank(comm, batch, params, cfg, layout, opts); });

  RunResult r;
  RankOutput& lead = outputs.front();
  r.m_out = lead.m_out;
  r.z_out = lead.z_out;
  r.loss = lead.loss;
  r.dm = lead.dm;
  r.dz = lead.dz;
  r.grads = std::move(lead.grads);
  r.trace = world.trace();
  for (const auto& o : outputs) r.forward_seconds.push_back(o.forward_seconds);
  return r;
}

RunResult run_hybrid(std::span<const Sample> batch, const ParamStore& params, const EvoConfig& cfg,
                     const ParallelLayout& layout, const RunOptions& opts) {
  layout.validate(cfg);
  auto world = make_world(layout, opts.precision);
  return run_on_world(*world, batch, params, cfg, layout, opts);
}

RunResult run_bp(const Sample& sample, const ParamStore& params, const EvoConfig& cfg, const RunOptions& opts) {
  return run_hybrid(std::span<const Sample>(&sample, 1), params, cfg, ParallelLayout{1, 2, 1}, opts);
}

RunResult run_bp(World& world, const Sample& sample, const ParamStore& params, const EvoConfig& cfg,
                 const RunOptions& opts) {
  if (world.size() != 2) {
    throw ConfigError("branch parallelism runs on exactly 2 ranks, world has " + std::to_string(world.size()));
  }
  return run_on_world(world, std::span<const Sample>(&sample, 1), params, cfg, ParallelLayout{1, 2, 1}, opts);
}

RunResult run_dap(const Sample& sample, const ParamStore& params, const EvoConfig& cfg, int dap,
                  const RunOptions& opts) {
  return run_hybrid(std::span<const Sample>(&sample, 1), params, cfg, ParallelLayout{1, 1, dap}, opts);
}

RunResult run_dp(std::span<const Sample> batch, const ParamStore& params, const EvoConfig& cfg, int dp,
                 const RunOptions& opts) {
  return run_hybrid(batch, params, cfg, ParallelLayout{dp, 1, 1}, opts);
}

}  // namespace branchpar
