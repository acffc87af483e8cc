// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "branchpar/evoformer.hpp"
#include "branchpar/run.hpp"

namespace {

using namespace branchpar;

EvoConfig bench_config(std::int64_t r) {
  EvoConfig cfg;
  cfg.s = 16;
  cfg.r = r;
  cfg.c_m = 16;
  cfg.c_z = 16;
  cfg.h = 4;
  cfg.c_head = 8;
  cfg.c_opm = 8;
  cfg.n_blocks = 1;
  return cfg;
}

void BM_BlockForward(benchmark::State& state) {
  EvoConfig cfg = bench_config(state.range(0));
  cfg.variant = static_cast<Variant>(state.range(1));
  const ParamStore params = init_params(cfg, 32);
  const Sample x = random_sample(cfg, 33);
  for (auto _ : state) benchmark::DoNotOptimize(evoformer_block(x.m, x.z, params, cfg, 0).z);
}
BENCHMARK(BM_BlockForward)
    ->ArgsProduct({{16, 32}, {static_cast<int>(Variant::af2), static_cast<int>(Variant::parallel)}})
    ->Unit(benchmark::kMillisecond);

void BM_TrainingStepSingle(benchmark::State& state) {
  const EvoConfig cfg = bench_config(state.range(0));
  const ParamStore params = init_params(cfg, 32);
  const Sample x = random_sample(cfg, 33);
  for (auto _ : state) benchmark::DoNotOptimize(run_single(x, params, cfg).loss);
}
BENCHMARK(BM_TrainingStepSingle)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
