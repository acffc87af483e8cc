// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evoformer sub-operations, block wirings and stack construction.
//
// Every sub-op returns a residual delta shaped like the track it updates.
// Sub-ops read their parameters through an OpContext, which pairs a
// ParamStore with a name prefix such as "blk3.row_attn.". Parameters may be
// graph leaves, in which case gradients flow to them.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "branchpar/tensor.hpp"

namespace branchpar {

enum class Variant { af2, multimer, parallel };
enum class Branch { msa, pair };

Variant parse_variant(std::string_view name);
std::string_view to_string(Variant v);
std::string_view to_string(Branch b);

struct EvoConfig {
  std::int64_t s = 8;        // MSA depth
  std::int64_t r = 16;       // residues
  std::int64_t c_m = 8;      // MSA channels
  std::int64_t c_z = 8;      // pair channels
  std::int64_t h = 2;        // attention heads
  std::int64_t c_head = 4;   // channels per head
  std::int64_t c_opm = 4;    // outer-product / triangle hidden channels
  std::int64_t t_factor = 4; // transition widening
  std::int64_t n_blocks = 2;
  Variant variant = Variant::parallel;

  /// Throws ConfigError when an extent is not positive (n_blocks may be 0).
  void validate() const;
  Shape msa_shape() const { return {s, r, c_m}; }
  Shape pair_shape() const { return {r, r, c_z}; }
};

struct ParamEntry {
  std::string name;
  Tensor value;
  Branch branch;
};

/// Named parameters in insertion order, each tagged with the branch that
/// owns it.
class ParamStore {
 public:
  void add(std::string name, Tensor value, Branch branch);
  void set(std::string_view name, Tensor value);

  const Tensor& at(std::string_view name) const;
  Branch branch(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<std::string> names() const;

  /// Total element count, optionally restricted to one branch.
  std::int64_t numel(std::optional<Branch> branch = std::nullopt) const;

  /// Store with the same names and tags and every value replaced by f(entry).
  template <class F>
  ParamStore map(F f) const {
    ParamStore out;
    for (const auto& e : entries_) out.add(e.name, f(e), e.branch);
    return out;
  }

 private:
  std::size_t index_of(std::string_view name) const;

  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ParamInfo {
  std::string name;
  Shape shape;
  Branch branch;
};

/// Names, shapes and branch tags of every parameter, in store order.
std::vector<ParamInfo> param_layout(const EvoConfig& cfg);

/// Seeded initialization: weights U(-0.02, 0.02), biases zero except gate
/// biases (one), layer-norm scale one and shift zero.
ParamStore init_params(const EvoConfig& cfg, std::uint64_t seed);

/// Closed-form parameter element count of init_params(cfg, *).
std::int64_t param_count(const EvoConfig& cfg);

/// Parameter lookup for one sub-op of one block.
class OpContext {
 public:
  OpContext(const ParamStore& params, const EvoConfig& cfg, std::string prefix)
      : params_(&params), cfg_(&cfg), prefix_(std::move(prefix)) {}

  const Tensor& operator[](std::string_view key) const;
  const EvoConfig& cfg() const { return *cfg_; }
  const ParamStore& params() const { return *params_; }
  const std::string& prefix() const { return prefix_; }

 private:
  const ParamStore* params_;
  const EvoConfig* cfg_;
  std::string prefix_;
};

/// Context for sub-op `op` (e.g. "row_attn") of block `block`.
OpContext op_context(const ParamStore& params, const EvoConfig& cfg, std::int64_t block, std::string_view op);

enum class TriMode { outgoing, incoming };
enum class AttnMode { start, end };

// Full sub-ops.
Tensor row_attn_pair_bias(const Tensor& m, const Tensor& z, const OpContext& p);
Tensor col_attn(const Tensor& m, const OpContext& p);
Tensor msa_transition(const Tensor& m, const OpContext& p);
Tensor pair_transition(const Tensor& z, const OpContext& p);
Tensor outer_product_mean(const Tensor& m, const OpContext& p);
Tensor tri_mult(const Tensor& z, TriMode mode, const OpContext& p);
Tensor tri_attn(const Tensor& z, AttnMode mode, const OpContext& p);

// Building blocks of the sub-ops, exposed so that sharded executions can
// place communication between them.

/// Gated multi-head attention over axis 1 of x_hat [B, N, c]. `bias`, if
/// defined, is [N, N, h] and is added to the logits of every batch entry.
Tensor gated_attention(const Tensor& x_hat, const Tensor& bias, const OpContext& p);
/// Per-head pair bias [r, r, h] from the pair track.
Tensor row_attn_bias(const Tensor& z, const OpContext& p);
Tensor row_attn_core(const Tensor& m, const Tensor& bias, const OpContext& p);

/// Sum over the rows of `m_part` of the per-row outer products, [r, r, c_opm^2].
Tensor opm_partial_sum(const Tensor& m_part, const OpContext& p);
Tensor opm_finish(const Tensor& sum, std::int64_t s_total, const OpContext& p);

struct TriProjection {
  Tensor z_hat;  // LN(z)
  Tensor a;      // gated left projection
  Tensor b;      // gated right projection
};
TriProjection tri_mult_project(const Tensor& z, const OpContext& p);
/// outgoing: a holds rows i of a(i, k, c), b is complete; result p(i, j).
/// incoming: a holds columns i of a(k, i, c), b is complete; result p(i, j).
Tensor tri_mult_core(const Tensor& a, const Tensor& b, TriMode mode);
Tensor tri_mult_finish(const Tensor& z_hat, const Tensor& p_core, const OpContext& p);

/// Bias [rows, r, h] of starting-node attention computed from LN(z) rows.
Tensor tri_attn_bias(const Tensor& z_hat, const OpContext& p);
Tensor tri_attn_norm(const Tensor& z, const OpContext& p);

/// Pluggable implementation of the three pieces a block is wired from.
class TrackOps {
 public:
  virtual ~TrackOps() = default;
  /// MSA track output m' from m and the pair tensor used for the row bias.
  virtual Tensor msa_track(const Tensor& m, const Tensor& z, const ParamStore& params, const EvoConfig& cfg,
                           std::int64_t block) = 0;
  virtual Tensor pair_track(const Tensor& z, const ParamStore& params, const EvoConfig& cfg,
                            std::int64_t block) = 0;
  virtual Tensor opm(const Tensor& m, const ParamStore& params, const EvoConfig& cfg, std::int64_t block) = 0;
};

/// Unsharded tracks.
class LocalTracks final : public TrackOps {
 public:
  Tensor msa_track(const Tensor& m, const Tensor& z, const ParamStore& params, const EvoConfig& cfg,
                   std::int64_t block) override;
  Tensor pair_track(const Tensor& z, const ParamStore& params, const EvoConfig& cfg, std::int64_t block) override;
  Tensor opm(const Tensor& m, const ParamStore& params, const EvoConfig& cfg, std::int64_t block) override;
};

LocalTracks& local_tracks();

struct BlockOutput {
  Tensor m;
  Tensor z;
};

/// One block in the configured variant. Inputs that feed two consumers are
/// split through identity nodes so every cross-track edge is explicit.
BlockOutput evoformer_block(const Tensor& m, const Tensor& z, const ParamStore& params, const EvoConfig& cfg,
                            std::int64_t block, TrackOps& tracks = local_tracks());

BlockOutput evoformer_stack(const Tensor& m, const Tensor& z, const ParamStore& params, const EvoConfig& cfg,
                            TrackOps& tracks = local_tracks());

/// mean(m^2) + mean(z^2) as a rank-0 tensor.
Tensor synthetic_loss(const Tensor& m, const Tensor& z);
/// The m or z half of synthetic_loss, with the mean taken over `full_numel`
/// elements (a shard contributes its share of the full mean).
Tensor loss_term(const Tensor& x, std::int64_t full_numel);

/// Random MSA and pair inputs drawn from N(0, 1) with the given seed.
struct Sample {
  Tensor m;
  Tensor z;
};
Sample random_sample(const EvoConfig& cfg, std::uint64_t seed);

}  // namespace branchpar
