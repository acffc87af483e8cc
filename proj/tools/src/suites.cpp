// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include "suites.hpp"

#include <algorithm>
#include <functional>
#include <ostream>
#include <random>

#include "branchpar/errors.hpp"
#include "branchpar/grad_check.hpp"
#include "branchpar/ops.hpp"

namespace branchpar::cli {

namespace {

bool same_layout(const ParallelLayout& a, const ParallelLayout& b) {
  return a.dp == b.dp && a.bp == b.bp && a.dap == b.dap;
}

std::vector<ParallelLayout> verify_layouts(const RunConfig& cfg) {
  const std::vector<ParallelLayout> candidates = {{1, 2, 1}, {1, 1, 2}, {2, 1, 1}, {2, 2, 1}, {1, 2, 2}, cfg.layout};
  std::vector<ParallelLayout> out;
  for (const auto& l : candidates) {
    if (l.world_size() == 1) continue;
    if (std::any_of(out.begin(), out.end(), [&](const auto& o) { return same_layout(o, l); })) continue;
    out.push_back(l);
  }
  return out;
}

// Single-rank runs of every sample; the oracle keeps sample 0's outputs and
// input gradients and averages parameter gradients across samples the way
// the DP schedule does: left fold in replica order, then one division.
RunResult replica_oracle(std::span<const Sample> batch, const ParamStore& params, const EvoConfig& cfg,
                         const RunOptions& opts) {
  std::vector<RunResult> singles;
  for (const auto& s : batch) singles.push_back(run_single(s, params, cfg, opts));
  RunResult oracle = std::move(singles.front());
  if (batch.size() == 1) return oracle;
  const double n = static_cast<double>(batch.size());
  oracle.grads = oracle.grads.map([&](const ParamEntry& e) {
    std::vector<double> acc(e.value.data().begin(), e.value.data().end());
    for (std::size_t k = 1; k < singles.size(); ++k) {
      const auto other = singles[k].grads.at(e.name).data();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += other[i];
    }
    for (auto& v : acc) v /= n;
    return Tensor(e.value.shape(), std::move(acc));
  });
  return oracle;
}

// Random weights turn a sub-op output into a scalar without the symmetric
// cancellations of a plain sum.
Tensor projection_weights(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = normal(rng);
  return Tensor(shape, std::move(v));
}

struct GradCase {
  std::string name;
  bool uses_m = false;
  bool uses_z = false;
  std::string param_prefix;  // parameters that become inputs
  std::function<Tensor(const Tensor& m, const Tensor& z, const ParamStore& p, const EvoConfig& cfg)> apply;
};

std::vector<GradCase> grad_cases() {
  auto ctx = [](const ParamStore& p, const EvoConfig& cfg, const char* op) { return op_context(p, cfg, 0, op); };
  std::vector<GradCase> c;
  c.push_back({"row_attn", true, true, "blk0.row_attn.", [=](auto& m, auto& z, auto& p, auto& cfg) {
                 return row_attn_pair_bias(m, z, ctx(p, cfg, "row_attn"));
               }});
  c.push_back({"col_attn", true, false, "blk0.col_attn.",
               [=](auto& m, auto&, auto& p, auto& cfg) { return col_attn(m, ctx(p, cfg, "col_attn")); }});
  c.push_back({"msa_transition", true, false, "blk0.msa_transition.", [=](auto& m, auto&, auto& p, auto& cfg) {
                 return msa_transition(m, ctx(p, cfg, "msa_transition"));
               }});
  c.push_back({"opm", true, false, "blk0.opm.",
               [=](auto& m, auto&, auto& p, auto& cfg) { return outer_product_mean(m, ctx(p, cfg, "opm")); }});
  c.push_back({"tri_mult_out", false, true, "blk0.tri_mult_out.", [=](auto&, auto& z, auto& p, auto& cfg) {
                 return tri_mult(z, TriMode::outgoing, ctx(p, cfg, "tri_mult_out"));
               }});
  c.push_back({"tri_mult_in", false, true, "blk0.tri_mult_in.", [=](auto&, auto& z, auto& p, auto& cfg) {
                 return tri_mult(z, TriMode::incoming, ctx(p, cfg, "tri_mult_in"));
               }});
  c.push_back({"tri_attn_start", false, true, "blk0.tri_attn_start.", [=](auto&, auto& z, auto& p, auto& cfg) {
                 return tri_attn(z, AttnMode::start, ctx(p, cfg, "tri_attn_start"));
               }});
  c.push_back({"tri_attn_end", false, true, "blk0.tri_attn_end.", [=](auto&, auto& z, auto& p, auto& cfg) {
                 return tri_attn(z, AttnMode::end, ctx(p, cfg, "tri_attn_end"));
               }});
  c.push_back({"pair_transition", false, true, "blk0.pair_transition.", [=](auto&, auto& z, auto& p, auto& cfg) {
                 return pair_transition(z, ctx(p, cfg, "pair_transition"));
               }});
  // The block is checked through the synthetic training loss itself.
  c.push_back({"block", true, true, "blk0.", [](auto& m, auto& z, auto& p, auto& cfg) {
                 const BlockOutput out = evoformer_block(m, z, p, cfg, 0);
                 return synthetic_loss(out.m, out.z);
               }});
  return c;
}

}  // namespace

std::vector<CheckRow> verify_suite(const RunConfig& cfg) {
  const ParamStore params = init_params(cfg.model, cfg.run.seed);
  const RunOptions opts{cfg.run.precision, cfg.run.grad_sync};
  const bool f32 = cfg.run.precision == Precision::f32;

  std::vector<CheckRow> rows;
  for (const auto& layout : verify_layouts(cfg)) {
    try {
      layout.validate(cfg.model);
    } catch (const ConfigError& e) {
      rows.push_back({"oracle", layout.name(), 0.0, 0.0, true, true, std::string("skipped: ") + e.what()});
      continue;
    }
    std::vector<Sample> batch;
    for (int i = 0; i < layout.dp; ++i) batch.push_back(random_sample(cfg.model, cfg.run.seed + 1 + i));

    const RunResult run = run_hybrid(batch, params, cfg.model, layout, opts);
    const RunResult oracle = replica_oracle(batch, params, cfg.model, opts);

    // Without DAP every schedule reproduces the oracle's reduction order.
    const bool exact = layout.dap == 1 && !(f32 && layout.dp > 1);
    const double eps = f32 ? 1e-4 : 1e-12;
    const auto report = compare_runs(run, oracle, exact ? CompareMode::exact() : CompareMode::tol(eps));
    rows.push_back({"oracle", layout.name(), report.max_rel, exact ? 0.0 : eps, report.passed, false,
                    exact ? "bit-exact" : "worst " + report.worst});

    const auto expected = expected_comm_volume(cfg.model, layout, cfg.run.grad_sync);
    const auto observed = observed_comm_volume(run.trace, layout);
    const auto diff = std::abs(static_cast<double>(total_elements(expected) - total_elements(observed)));
    rows.push_back({"comm_volume", layout.name(), diff, 0.0, expected == observed, false,
                    expected == observed ? "trace matches formula" : "trace differs from formula"});

    if (layout.bp == 2 && run.forward_seconds.size() >= 2) {
      const auto [lo, hi] = std::minmax_element(run.forward_seconds.begin(), run.forward_seconds.end());
      const double ratio = *lo > 0.0 ? *hi / *lo : 0.0;
      rows.push_back({"branch_balance", layout.name(), ratio, 0.0, true, true, "slowest / fastest rank forward"});
    }
  }
  return rows;
}

std::vector<CheckRow> gradcheck_suite(const RunConfig& cfg) {
  const bool f32 = cfg.run.precision == Precision::f32;
  EvoConfig model = cfg.model;
  model.n_blocks = 1;
  const ParamStore base = init_params(model, cfg.run.seed);
  const Sample sample = random_sample(model, cfg.run.seed + 1);

  std::vector<CheckRow> rows;
  for (const auto& gc : grad_cases()) {
    std::vector<std::string> names;
    for (const auto& e : base.entries()) {
      if (e.name.rfind(gc.param_prefix, 0) == 0) names.push_back(e.name);
    }
    std::vector<Tensor> inputs;
    if (gc.uses_m) inputs.push_back(sample.m);
    if (gc.uses_z) inputs.push_back(sample.z);
    const std::size_t n_tracks = inputs.size();
    for (const auto& n : names) inputs.push_back(base.at(n));

    const Shape out_shape = gc.apply(sample.m, sample.z, base, model).shape();
    const Tensor weights = projection_weights(out_shape, cfg.run.seed + 7);
    auto f = [&](std::span<const Tensor> in) {
      ParamStore p = base;
      for (std::size_t i = 0; i < names.size(); ++i) p.set(names[i], in[n_tracks + i]);
      const Tensor& m = gc.uses_m ? in[0] : sample.m;
      const Tensor& z = gc.uses_z ? in[gc.uses_m ? 1 : 0] : sample.z;
      Tensor out = gc.apply(m, z, p, model);
      return out.numel() == 1 ? out : sum_all(mul(out, weights));
    };

    const bool is_block = gc.name == "block";
    GradCheckOptions opts;
    opts.seed = cfg.run.seed;
    opts.tol = f32 ? 1e-2 : (is_block ? 1e-5 : 1e-6);
    ScopedExecMode mode({cfg.run.precision, true});
    const auto rep = grad_check(f, inputs, opts);
    rows.push_back({"gradcheck", gc.name, rep.max_rel_err, opts.tol, rep.passed, f32,
                    std::to_string(rep.checked) + " coordinates"});
  }
  return rows;
}

bool suite_passed(const std::vector<CheckRow>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const CheckRow& r) { return r.passed || r.informational; });
}

void write_rows_csv(std::ostream& os, const std::vector<CheckRow>& rows) {
  os << "check,subject,value,threshold,result,note\n";
  for (const auto& r : rows) {
    const char* result = r.informational ? "info" : (r.passed ? "PASS" : "FAIL");
    os << r.check << ',' << r.subject << ',' << r.value << ',' << r.threshold << ',' << result << ",\"" << r.note
       << "\"\n";
  }
}

}  // namespace branchpar::cli
