// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "run_config.hpp"

namespace branchpar::cli {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitSuiteFailed = 1;
inline constexpr int kExitUsage = 2;

/// Command-line overrides applied on top of the config file.
struct Overrides {
  std::optional<int> repeat;
  std::optional<std::uint64_t> seed;
  std::optional<Precision> precision;
};

void apply_overrides(RunConfig& cfg, const Overrides& o);

// Each command writes CSV to `out` and diagnostics to `err`, and returns an
// exit code. ConfigError escapes to the caller, which maps it to kExitUsage.
int cmd_verify(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const RunConfig& cfg, std::ostream& out, std::ostream& err);
/// `repeat` measurements of every layout; each measurement runs run.steps
/// steps and averages those after run.warmup.
int cmd_bench(const RunConfig& cfg, int repeat, std::ostream& out, std::ostream& err);
int cmd_cost(const RunConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace branchpar::cli
