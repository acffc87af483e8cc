// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

// The packaged benchmark_main archive carries LTO bytecode from another
// compiler release, so the entry point is defined here instead.
BENCHMARK_MAIN();
