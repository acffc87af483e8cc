// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <chrono>
#include <ostream>

#include "branchpar/comm.hpp"
#include "branchpar/errors.hpp"
#include "suites.hpp"

namespace branchpar::cli {

namespace {

// Verify mode runs one rank at a time; bench mode leaves the cap to the
// environment so ranks can overlap.
class ModeThreadCap {
 public:
  explicit ModeThreadCap(Mode mode) { set_thread_cap(mode == Mode::verify ? 1 : 0); }
  ~ModeThreadCap() { set_thread_cap(0); }
  ModeThreadCap(const ModeThreadCap&) = delete;
  ModeThreadCap& operator=(const ModeThreadCap&) = delete;
};

int report(const std::vector<CheckRow>& rows, std::ostream& out, std::ostream& err) {
  write_rows_csv(out, rows);
  int failures = 0;
  for (const auto& r : rows) {
    if (!r.passed && !r.informational) ++failures;
  }
  if (failures > 0) {
    err << failures << " check(s) failed\n";
    return kExitSuiteFailed;
  }
  return kExitOk;
}

double time_step(const std::vector<Sample>& batch, const ParamStore& params, const RunConfig& cfg,
                 const ParallelLayout& layout) {
  const RunOptions opts{cfg.run.precision, cfg.run.grad_sync};
  const auto start = std::chrono::steady_clock::now();
  if (layout.world_size() == 1) {
    run_single(batch.front(), params, cfg.model, opts);
  } else {
    run_hybrid(batch, params, cfg.model, layout, opts);
  }
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.run.seed = *o.seed;
  if (o.precision) cfg.run.precision = *o.precision;
  if (o.repeat && *o.repeat < 1) throw ConfigError("--repeat must be at least 1");
}

int cmd_verify(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  cfg.validate();
  if (cfg.run.precision == Precision::f32) {
    err << "note: f32 run; layouts with DAP or DP compare at 1e-4 instead of 1e-12\n";
  }
  ModeThreadCap cap(cfg.run.mode);
  return report(verify_suite(cfg), out, err);
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  cfg.validate();
  if (cfg.run.precision == Precision::f32) {
    err << "warning: f32 run; tolerances relaxed to 1e-2 and results are informational\n";
  }
  return report(gradcheck_suite(cfg), out, err);
}

int cmd_bench(const RunConfig& cfg, int repeat, std::ostream& out, std::ostream& err) {
  cfg.validate();
  if (cfg.run.steps <= cfg.run.warmup) {
    throw ConfigError("run.steps (" + std::to_string(cfg.run.steps) + ") must exceed run.warmup (" +
                      std::to_string(cfg.run.warmup) + ")");
  }
  if (repeat < 1) throw ConfigError("--repeat must be at least 1");
  if (cfg.run.mode == Mode::verify) err << "note: config mode is verify; ranks will not overlap\n";
  ModeThreadCap cap(cfg.run.mode);

  std::vector<ParallelLayout> layouts = {{cfg.layout.dp, 1, 1}};
  if (cfg.model.variant == Variant::parallel) layouts.push_back({cfg.layout.dp, 2, 1});
  const ParallelLayout& mine = cfg.layout;
  bool listed = false;
  for (const auto& l : layouts) listed = listed || (l.dp == mine.dp && l.bp == mine.bp && l.dap == mine.dap);
  if (!listed) layouts.push_back(mine);

  const ParamStore params = init_params(cfg.model, cfg.run.seed);
  out << "layout,s/step,speedup%\n";
  double baseline = 0.0;
  for (const auto& layout : layouts) {
    layout.validate(cfg.model);
    std::vector<Sample> batch;
    for (int i = 0; i < layout.dp; ++i) batch.push_back(random_sample(cfg.model, cfg.run.seed + 1 + i));
    double total = 0.0;
    for (int rep = 0; rep < repeat; ++rep) {
      double measured = 0.0;
      for (int step = 0; step < cfg.run.steps; ++step) {
        const double t = time_step(batch, params, cfg, layout);
        if (step >= cfg.run.warmup) measured += t;
      }
      total += measured / (cfg.run.steps - cfg.run.warmup);
    }
    const double per_step = total / repeat;
    if (baseline == 0.0) baseline = per_step;
    out << layout.name() << ',' << per_step << ',' << (baseline / per_step - 1.0) * 100.0 << '\n';
  }
  return kExitOk;
}

int cmd_cost(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  cfg.validate();
  const CostPreset preset{"config", cfg.model, cfg.device};
  std::vector<ParallelLayout> layouts = {{1, 1, 1}};
  const std::vector<ParallelLayout> candidates = {{1, 2, 1}, {1, 1, 2}, {1, 2, 2}, {1, 1, 4},
                                                  {1, 2, 4}, {1, 1, 8}, cfg.layout};
  for (const auto& l : candidates) {
    bool dup = false;
    for (const auto& o : layouts) dup = dup || (o.dp == l.dp && o.bp == l.bp && o.dap == l.dap);
    if (dup) continue;
    if (l.bp == 2 && cfg.model.variant != Variant::parallel) continue;
    if (cfg.model.s % l.dap != 0 || cfg.model.r % l.dap != 0) continue;
    layouts.push_back(l);
  }
  const double f = evoformer_fraction(cfg.model, cfg.device, cfg.run.recycle_factor);
  err << "evoformer_fraction " << f << ", ideal BP speedup " << bp_ideal_speedup(f) << '\n';
  const auto rows = speedup_report(std::span<const CostPreset>(&preset, 1), layouts, cfg.run.recycle_factor,
                                   cfg.run.global_batch);

  out << "layout,dp,bp,dap,s/step,protein/s,speedup%,evoformer_fraction,bp_bytes,dap_bytes,dp_bytes\n";
  for (const auto& r : rows) {
    std::int64_t by_kind[3] = {0, 0, 0};
    for (const auto& b : schedule_bytes(cfg.model, r.layout, cfg.device.bytes_per_element)) {
      if (b.schedule == GroupKind::bp) by_kind[0] += b.bytes;
      if (b.schedule == GroupKind::dap) by_kind[1] += b.bytes;
      if (b.schedule == GroupKind::dp) by_kind[2] += b.bytes;
    }
    out << r.layout.name() << ',' << r.layout.dp << ',' << r.layout.bp << ',' << r.layout.dap << ',' << r.step_time
        << ',' << r.proteins_per_second << ',' << r.gain_percent << ',' << r.evoformer_fraction << ',' << by_kind[0]
        << ',' << by_kind[1] << ',' << by_kind[2] << '\n';
  }
  return kExitOk;
}

}  // namespace branchpar::cli
