// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0
//
// Axial sharding of the block tracks across a group of ranks.
//
// Gradient convention: a value replicated on every rank of the group carries
// a per-rank partial gradient; the true gradient is the sum of the partials.
// Under that convention the backward of a gather is an allreduce followed by
// taking the local shard, and the backward of a sum-reduction is an allreduce.

#pragma once

#include "branchpar/comm.hpp"
#include "branchpar/evoformer.hpp"

namespace branchpar {

struct ShardGroup {
  Communicator* comm = nullptr;
  int group = 0;
  int index = 0;  // position in the group
  int size = 1;
};

/// Local block of `full` along `axis`.
Tensor dap_shard(const Tensor& full, std::int64_t axis, const ShardGroup& g);
/// Differentiable allgather along `axis`.
Tensor dap_gather(const Tensor& shard, std::int64_t axis, const ShardGroup& g);
/// Differentiable allreduce of per-rank partial sums.
Tensor dap_reduce(const Tensor& partial, const ShardGroup& g);

/// Tracks that take replicated inputs, compute on shards and return
/// replicated outputs.
class ShardedTracks final : public TrackOps {
 public:
  explicit ShardedTracks(ShardGroup g) : g_(g) {}

  Tensor msa_track(const Tensor& m, const Tensor& z, const ParamStore& params, const EvoConfig& cfg,
                   std::int64_t block) override;
  Tensor pair_track(const Tensor& z, const ParamStore& params, const EvoConfig& cfg, std::int64_t block) override;
  Tensor opm(const Tensor& m, const ParamStore& params, const EvoConfig& cfg, std::int64_t block) override;

 private:
  Tensor attn_start_rows(const Tensor& rows, const OpContext& p);

  ShardGroup g_;
};

}  // namespace branchpar
