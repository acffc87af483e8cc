// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchpar/evoformer.hpp"

#include <cmath>
#include <random>

#include "branchpar/errors.hpp"
#include "branchpar/ops.hpp"

namespace branchpar {

Variant parse_variant(std::string_view name) {
  if (name == "af2") return Variant::af2;
  if (name == "multimer") return Variant::multimer;
  if (name == "parallel") return Variant::parallel;
  throw ConfigError("unknown block variant '" + std::string(name) + "' (expected af2, multimer or parallel)");
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::af2:
      return "af2";
    case Variant::multimer:
      return "multimer";
    case Variant::parallel:
      return "parallel";
  }
  return "?";
}

std::string_view to_string(Branch b) { return b == Branch::msa ? "msa" : "pair"; }

void EvoConfig::validate() const {
  auto positive = [](std::int64_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string("model.") + name + " must be >= 1, got " + std::to_string(v));
  };
  positive(s, "s");
  positive(r, "r");
  positive(c_m, "c_m");
  positive(c_z, "c_z");
  positive(h, "h");
  positive(c_head, "c_head");
  positive(c_opm, "c_opm");
  positive(t_factor, "t_factor");
  if (n_blocks < 0) throw ConfigError("model.n_blocks must be >= 0, got " + std::to_string(n_blocks));
}

// ---------------------------------------------------------------------------
// ParamStore

void ParamStore::add(std::string name, Tensor value, Branch branch) {
  if (index_.contains(name)) throw ContractError("duplicate parameter name " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), branch});
}

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter " + std::string(name));
  return it->second;
}

void ParamStore::set(std::string_view name, Tensor value) {
  auto& entry = entries_[index_of(name)];
  if (entry.value.shape() != value.shape()) {
    throw DimensionError("parameter " + entry.name + " has shape " + to_string(entry.value.shape()) +
                         ", cannot assign " + to_string(value.shape()));
  }
  entry.value = std::move(value);
}

const Tensor& ParamStore::at(std::string_view name) const { return entries_[index_of(name)].value; }
Branch ParamStore::branch(std::string_view name) const { return entries_[index_of(name)].branch; }
bool ParamStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

std::int64_t ParamStore::numel(std::optional<Branch> branch) const {
  std::int64_t n = 0;
  for (const auto& e : entries_) {
    if (!branch || e.branch == *branch) n += e.value.numel();
  }
  return n;
}

// ---------------------------------------------------------------------------
// Parameter layout

namespace {

enum class Init { weight, zero, one };

struct ParamSpec {
  const char* key;
  Shape shape;
  Init init;
};

struct SubOpSpec {
  const char* name;
  Branch branch;
  std::vector<ParamSpec> params;
};

std::vector<ParamSpec> attention_params(std::int64_t c, std::int64_t h, std::int64_t d, bool with_bias_proj) {
  const auto hd = h * d;
  std::vector<ParamSpec> p{{"ln_g", {c}, Init::one}, {"ln_b", {c}, Init::zero}};
  if (with_bias_proj) p.push_back({"bias_w", {0, h}, Init::weight});  // rows patched by caller
  p.push_back({"q_w", {c, hd}, Init::weight});
  p.push_back({"k_w", {c, hd}, Init::weight});
  p.push_back({"v_w", {c, hd}, Init::weight});
  p.push_back({"g_w", {c, hd}, Init::weight});
  p.push_back({"g_b", {hd}, Init::one});
  p.push_back({"o_w", {hd, c}, Init::weight});
  p.push_back({"o_b", {c}, Init::zero});
  return p;
}

std::vector<ParamSpec> transition_params(std::int64_t c, std::int64_t t) {
  return {{"ln_g", {c}, Init::one},      {"ln_b", {c}, Init::zero},    {"w1", {c, t * c}, Init::weight},
          {"b1", {t * c}, Init::zero},   {"w2", {t * c, c}, Init::weight}, {"b2", {c}, Init::zero}};
}

std::vector<ParamSpec> tri_mult_params(std::int64_t c_z, std::int64_t c_o) {
  return {{"ln_g", {c_z}, Init::one},        {"ln_b", {c_z}, Init::zero},
          {"a_g_w", {c_z, c_o}, Init::weight}, {"a_g_b", {c_o}, Init::one},
          {"a_p_w", {c_z, c_o}, Init::weight}, {"a_p_b", {c_o}, Init::zero},
          {"b_g_w", {c_z, c_o}, Init::weight}, {"b_g_b", {c_o}, Init::one},
          {"b_p_w", {c_z, c_o}, Init::weight}, {"b_p_b", {c_o}, Init::zero},
          {"g_w", {c_z, c_z}, Init::weight},   {"g_b", {c_z}, Init::one},
          {"ln_out_g", {c_o}, Init::one},      {"ln_out_b", {c_o}, Init::zero},
          {"o_w", {c_o, c_z}, Init::weight},   {"o_b", {c_z}, Init::zero}};
}

std::vector<SubOpSpec> block_layout(const EvoConfig& c) {
  auto row = attention_params(c.c_m, c.h, c.c_head, true);
  // Row attention normalizes both tracks: LN(m) for queries, LN(z) for the bias.
  row[0].key = "ln_m_g";
  row[1].key = "ln_m_b";
  row[2].shape = {c.c_z, c.h};
  row.insert(row.begin() + 2, {{"ln_z_g", {c.c_z}, Init::one}, {"ln_z_b", {c.c_z}, Init::zero}});

  auto tri_attn = attention_params(c.c_z, c.h, c.c_head, true);
  tri_attn[2].shape = {c.c_z, c.h};

  return {
      {"row_attn", Branch::msa, row},
      {"col_attn", Branch::msa, attention_params(c.c_m, c.h, c.c_head, false)},
      {"msa_transition", Branch::msa, transition_params(c.c_m, c.t_factor)},
      {"opm",
       Branch::msa,
       {{"ln_g", {c.c_m}, Init::one},
        {"ln_b", {c.c_m}, Init::zero},
        {"a_w", {c.c_m, c.c_opm}, Init::weight},
        {"a_b", {c.c_opm}, Init::zero},
        {"b_w", {c.c_m, c.c_opm}, Init::weight},
        {"b_b", {c.c_opm}, Init::zero},
        {"o_w", {c.c_opm * c.c_opm, c.c_z}, Init::weight},
        {"o_b", {c.c_z}, Init::zero}}},
      {"tri_mult_out", Branch::pair, tri_mult_params(c.c_z, c.c_opm)},
      {"tri_mult_in", Branch::pair, tri_mult_params(c.c_z, c.c_opm)},
      {"tri_attn_start", Branch::pair, tri_attn},
      {"tri_attn_end", Branch::pair, tri_attn},
      {"pair_transition", Branch::pair, transition_params(c.c_z, c.t_factor)},
  };
}

}  // namespace

std::vector<ParamInfo> param_layout(const EvoConfig& cfg) {
  cfg.validate();
  const auto layout = block_layout(cfg);
  std::vector<ParamInfo> out;
  for (std::int64_t blk = 0; blk < cfg.n_blocks; ++blk) {
    for (const auto& op : layout) {
      for (const auto& p : op.params) {
        out.push_back({"blk" + std::to_string(blk) + "." + op.name + "." + p.key, p.shape, op.branch});
      }
    }
  }
  return out;
}

ParamStore init_params(const EvoConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-0.02, 0.02);
  const auto layout = block_layout(cfg);
  ParamStore store;
  for (std::int64_t blk = 0; blk < cfg.n_blocks; ++blk) {
    for (const auto& op : layout) {
      for (const auto& p : op.params) {
        std::vector<double> values(static_cast<std::size_t>(numel_of(p.shape)));
        for (auto& v : values) {
          v = p.init == Init::weight ? uniform(rng) : (p.init == Init::one ? 1.0 : 0.0);
        }
        store.add("blk" + std::to_string(blk) + "." + op.name + "." + p.key, Tensor(p.shape, std::move(values)),
                  op.branch);
      }
    }
  }
  return store;
}

std::int64_t param_count(const EvoConfig& cfg) {
  const auto c_m = cfg.c_m, c_z = cfg.c_z, h = cfg.h, hd = cfg.h * cfg.c_head, c_o = cfg.c_opm, t = cfg.t_factor;
  // Gated attention over c channels: LN (2c), q/k/v/gate weights (4 c hd),
  // gate bias (hd), output projection (hd c + c).
  auto attention = [&](std::int64_t c) { return 2 * c + 4 * c * hd + hd + hd * c + c; };
  // LN (2c), up-projection (c tc + tc), down-projection (tc c + c).
  auto transition = [&](std::int64_t c) { return 2 * c + 2 * t * c * c + t * c + c; };
  const auto row = attention(c_m) + 2 * c_z + c_z * h;
  const auto col = attention(c_m);
  const auto opm = 2 * c_m + 2 * (c_m * c_o + c_o) + c_o * c_o * c_z + c_z;
  // LN (2 c_z), four c_z->c_o projections with bias, gate (c_z^2 + c_z),
  // LN over c_o (2 c_o), output (c_o c_z + c_z).
  const auto tri_mul = 2 * c_z + 4 * (c_z * c_o + c_o) + c_z * c_z + c_z + 2 * c_o + c_o * c_z + c_z;
  const auto tri_att = attention(c_z) + c_z * h;
  const auto per_block = row + col + transition(c_m) + opm + 2 * tri_mul + 2 * tri_att + transition(c_z);
  return cfg.n_blocks * per_block;
}

const Tensor& OpContext::operator[](std::string_view key) const {
  std::string name = prefix_;
  name += key;
  return params_->at(name);
}

OpContext op_context(const ParamStore& params, const EvoConfig& cfg, std::int64_t block, std::string_view op) {
  return OpContext(params, cfg, "blk" + std::to_string(block) + "." + std::string(op) + ".");
}

// ---------------------------------------------------------------------------
// Sub-ops

namespace {

void expect_rank3(const Tensor& x, const char* what) {
  if (x.rank() != 3) throw DimensionError(std::string(what) + " must be rank 3, got " + to_string(x.shape()));
}

void expect_pair(const Tensor& z, const char* what) {
  expect_rank3(z, what);
  if (z.dim(0) != z.dim(1)) throw DimensionError(std::string(what) + " must be square, got " + to_string(z.shape()));
}

Tensor ln(const Tensor& x, const OpContext& p, const char* g, const char* b) { return layer_norm(x, p[g], p[b]); }

Tensor transpose_pair(const Tensor& z) { return permute(z, {1, 0, 2}); }

}  // namespace

Tensor gated_attention(const Tensor& x_hat, const Tensor& bias, const OpContext& p) {
  expect_rank3(x_hat, "attention input");
  const auto B = x_hat.dim(0), N = x_hat.dim(1);
  const auto h = p.cfg().h, d = p.cfg().c_head;
  if (bias.defined() && bias.shape() != Shape{N, N, h}) {
    throw DimensionError("attention bias " + to_string(bias.shape()) + " does not match [" + std::to_string(N) +
                         "," + std::to_string(N) + "," + std::to_string(h) + "]");
  }
  auto heads = [&](const char* key) { return reshape(linear(x_hat, p[key]), {B, N, h, d}); };
  Tensor q = permute(heads("q_w"), {0, 2, 1, 3});
  Tensor k = permute(heads("k_w"), {0, 2, 3, 1});
  Tensor v = permute(heads("v_w"), {0, 2, 1, 3});
  Tensor logits = scale(matmul(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
  if (bias.defined()) logits = add(logits, permute(bias, {2, 0, 1}));
  Tensor weights = softmax(logits, -1);
  Tensor o = reshape(permute(matmul(weights, v), {0, 2, 1, 3}), {B, N, h * d});
  Tensor gate = sigmoid(linear(x_hat, p["g_w"], p["g_b"]));
  return linear(mul(gate, o), p["o_w"], p["o_b"]);
}

Tensor row_attn_bias(const Tensor& z, const OpContext& p) {
  expect_pair(z, "pair representation");
  return linear(ln(z, p, "ln_z_g", "ln_z_b"), p["bias_w"]);
}

Tensor row_attn_core(const Tensor& m, const Tensor& bias, const OpContext& p) {
  expect_rank3(m, "MSA representation");
  return gated_attention(ln(m, p, "ln_m_g", "ln_m_b"), bias, p);
}

Tensor row_attn_pair_bias(const Tensor& m, const Tensor& z, const OpContext& p) {
  expect_rank3(m, "MSA representation");
  expect_pair(z, "pair representation");
  if (m.dim(1) != z.dim(0)) {
    throw DimensionError("residue count differs between m " + to_string(m.shape()) + " and z " +
                         to_string(z.shape()));
  }
  return row_attn_core(m, row_attn_bias(z, p), p);
}

Tensor col_attn(const Tensor& m, const OpContext& p) {
  expect_rank3(m, "MSA representation");
  Tensor columns = permute(m, {1, 0, 2});
  Tensor delta = gated_attention(ln(columns, p, "ln_g", "ln_b"), Tensor(), p);
  return permute(delta, {1, 0, 2});
}

namespace {

Tensor transition(const Tensor& x, const OpContext& p) {
  expect_rank3(x, "transition input");
  Tensor hidden = relu(linear(ln(x, p, "ln_g", "ln_b"), p["w1"], p["b1"]));
  return linear(hidden, p["w2"], p["b2"]);
}

}  // namespace

Tensor msa_transition(const Tensor& m, const OpContext& p) { return transition(m, p); }
Tensor pair_transition(const Tensor& z, const OpContext& p) { return transition(z, p); }

Tensor opm_partial_sum(const Tensor& m_part, const OpContext& p) {
  expect_rank3(m_part, "MSA representation");
  const auto s = m_part.dim(0), r = m_part.dim(1), c = p.cfg().c_opm;
  Tensor x = ln(m_part, p, "ln_g", "ln_b");
  Tensor a = reshape(linear(x, p["a_w"], p["a_b"]), {s, r * c});
  Tensor b = reshape(linear(x, p["b_w"], p["b_b"]), {s, r * c});
  // (A^T B)[(i,c1),(j,c2)] = sum_s a(s,i,c1) b(s,j,c2)
  Tensor outer = reshape(matmul(permute(a, {1, 0}), b), {r, c, r, c});
  return reshape(permute(outer, {0, 2, 1, 3}), {r, r, c * c});
}

Tensor opm_finish(const Tensor& sum, std::int64_t s_total, const OpContext& p) {
  return linear(scale(sum, 1.0 / static_cast<double>(s_total)), p["o_w"], p["o_b"]);
}

Tensor outer_product_mean(const Tensor& m, const OpContext& p) {
  return opm_finish(opm_partial_sum(m, p), m.dim(0), p);
}

TriProjection tri_mult_project(const Tensor& z, const OpContext& p) {
  expect_rank3(z, "pair representation");
  Tensor z_hat = ln(z, p, "ln_g", "ln_b");
  auto gated = [&](const char* gw, const char* gb, const char* pw, const char* pb) {
    return mul(sigmoid(linear(z_hat, p[gw], p[gb])), linear(z_hat, p[pw], p[pb]));
  };
  Tensor a = gated("a_g_w", "a_g_b", "a_p_w", "a_p_b");
  Tensor b = gated("b_g_w", "b_g_b", "b_p_w", "b_p_b");
  return {z_hat, a, b};
}

Tensor tri_mult_core(const Tensor& a, const Tensor& b, TriMode mode) {
  expect_rank3(a, "triangle left operand");
  expect_rank3(b, "triangle right operand");
  Tensor lhs, rhs;
  if (mode == TriMode::outgoing) {
    lhs = permute(a, {2, 0, 1});  // [c, i, k]
    rhs = permute(b, {2, 1, 0});  // [c, k, j]
  } else {
    lhs = permute(a, {2, 1, 0});  // [c, i, k]
    rhs = permute(b, {2, 0, 1});  // [c, k, j]
  }
  return permute(matmul(lhs, rhs), {1, 2, 0});
}

Tensor tri_mult_finish(const Tensor& z_hat, const Tensor& p_core, const OpContext& p) {
  Tensor gate = sigmoid(linear(z_hat, p["g_w"], p["g_b"]));
  return mul(gate, linear(ln(p_core, p, "ln_out_g", "ln_out_b"), p["o_w"], p["o_b"]));
}

Tensor tri_mult(const Tensor& z, TriMode mode, const OpContext& p) {
  expect_pair(z, "pair representation");
  TriProjection proj = tri_mult_project(z, p);
  return tri_mult_finish(proj.z_hat, tri_mult_core(proj.a, proj.b, mode), p);
}

Tensor tri_attn_norm(const Tensor& z, const OpContext& p) { return ln(z, p, "ln_g", "ln_b"); }

Tensor tri_attn_bias(const Tensor& z_hat, const OpContext& p) { return linear(z_hat, p["bias_w"]); }

Tensor tri_attn(const Tensor& z, AttnMode mode, const OpContext& p) {
  expect_pair(z, "pair representation");
  if (mode == AttnMode::end) return transpose_pair(tri_attn(transpose_pair(z), AttnMode::start, p));
  Tensor z_hat = tri_attn_norm(z, p);
  return gated_attention(z_hat, tri_attn_bias(z_hat, p), p);
}

// ---------------------------------------------------------------------------
// Tracks and blocks

Tensor LocalTracks::msa_track(const Tensor& m, const Tensor& z, const ParamStore& params, const EvoConfig& cfg,
                              std::int64_t block) {
  Tensor x = add(m, row_attn_pair_bias(m, z, op_context(params, cfg, block, "row_attn")));
  x = add(x, col_attn(x, op_context(params, cfg, block, "col_attn")));
  return add(x, msa_transition(x, op_context(params, cfg, block, "msa_transition")));
}

Tensor LocalTracks::pair_track(const Tensor& z, const ParamStore& params, const EvoConfig& cfg,
                               std::int64_t block) {
  Tensor x = add(z, tri_mult(z, TriMode::outgoing, op_context(params, cfg, block, "tri_mult_out")));
  x = add(x, tri_mult(x, TriMode::incoming, op_context(params, cfg, block, "tri_mult_in")));
  x = add(x, tri_attn(x, AttnMode::start, op_context(params, cfg, block, "tri_attn_start")));
  x = add(x, tri_attn(x, AttnMode::end, op_context(params, cfg, block, "tri_attn_end")));
  return add(x, pair_transition(x, op_context(params, cfg, block, "pair_transition")));
}

Tensor LocalTracks::opm(const Tensor& m, const ParamStore& params, const EvoConfig& cfg, std::int64_t block) {
  return outer_product_mean(m, op_context(params, cfg, block, "opm"));
}

LocalTracks& local_tracks() {
  static LocalTracks tracks;
  return tracks;
}

BlockOutput evoformer_block(const Tensor& m, const Tensor& z, const ParamStore& params, const EvoConfig& cfg,
                            std::int64_t block, TrackOps& tracks) {
  expect_rank3(m, "MSA representation");
  expect_pair(z, "pair representation");
  switch (cfg.variant) {
    case Variant::parallel: {
      Tensor m_in = identity(m);
      Tensor z_msa = identity(z);
      Tensor z_pair = identity(z);
      Tensor m_out = tracks.msa_track(m_in, z_msa, params, cfg, block);
      Tensor z_mid = tracks.pair_track(z_pair, params, cfg, block);
      return {m_out, add(z_mid, tracks.opm(m_out, params, cfg, block))};
    }
    case Variant::af2: {
      Tensor z_msa = identity(z);
      Tensor z_res = identity(z);
      Tensor m_out = tracks.msa_track(m, z_msa, params, cfg, block);
      Tensor z_mid = add(z_res, tracks.opm(m_out, params, cfg, block));
      return {m_out, tracks.pair_track(z_mid, params, cfg, block)};
    }
    case Variant::multimer: {
      Tensor m_opm = identity(m);
      Tensor m_track = identity(m);
      Tensor z_mid = add(z, tracks.opm(m_opm, params, cfg, block));
      Tensor z_msa = identity(z_mid);
      Tensor z_pair = identity(z_mid);
      Tensor m_out = tracks.msa_track(m_track, z_msa, params, cfg, block);
      return {m_out, tracks.pair_track(z_pair, params, cfg, block)};
    }
  }
  throw ConfigError("unknown block variant");
}

BlockOutput evoformer_stack(const Tensor& m, const Tensor& z, const ParamStore& params, const EvoConfig& cfg,
                            TrackOps& tracks) {
  BlockOutput state{m, z};
  for (std::int64_t blk = 0; blk < cfg.n_blocks; ++blk) {
    state = evoformer_block(state.m, state.z, params, cfg, blk, tracks);
  }
  return state;
}

Tensor loss_term(const Tensor& x, std::int64_t full_numel) {
  return scale(sum_all(mul(x, x)), 1.0 / static_cast<double>(full_numel));
}

Tensor synthetic_loss(const Tensor& m, const Tensor& z) {
  return add(loss_term(m, m.numel()), loss_term(z, z.numel()));
}

Sample random_sample(const EvoConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](Shape shape) {
    std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& x : v) x = normal(rng);
    return Tensor(std::move(shape), std::move(v));
  };
  Tensor m = draw(cfg.msa_shape());
  Tensor z = draw(cfg.pair_shape());
  return {m, z};
}

}  // namespace branchpar
