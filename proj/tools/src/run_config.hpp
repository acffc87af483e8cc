// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment files: flat `section.key = value` lines, `#` starts a comment.
//
//   model.s = 8
//   layout.bp = 2
//   run.precision = f64   # f64 | f32
//
// Every key has a default, so an empty file is a valid config. Unknown keys,
// repeated keys and malformed values are rejected with file:line diagnostics.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "branchpar/cost_model.hpp"
#include "branchpar/evoformer.hpp"
#include "branchpar/layout.hpp"
#include "branchpar/run.hpp"
#include "branchpar/tensor.hpp"

namespace branchpar::cli {

enum class Mode { verify, bench };

struct RunSection {
  std::uint64_t seed = 32;
  Precision precision = Precision::f64;
  Mode mode = Mode::verify;
  int steps = 10;  // bench: total steps per layout, warmup included
  int warmup = 2;  // bench: leading steps discarded
  double recycle_factor = 2.5;
  std::int64_t global_batch = 128;
  GradSync grad_sync = GradSync::per_tensor;
};

struct RunConfig {
  EvoConfig model;
  ParallelLayout layout;
  DeviceModel device;
  RunSection run;

  /// Cross-field checks: model extents, layout limits against the model,
  /// positive device parameters and run counters.
  void validate() const;
};

/// Parses a config; `source` names the input in diagnostics. Throws
/// ConfigError ("source:line: message") and validates the result.
RunConfig parse_config(std::istream& in, std::string_view source = "<config>");
RunConfig load_config(const std::string& path);

/// Writes every key with its current value; parse_config reads it back to an
/// equal config.
void write_config(std::ostream& out, const RunConfig& cfg);

struct KeyDoc {
  std::string key;
  std::string default_value;
  std::string help;
};
/// Every accepted key with its default, in file order.
std::vector<KeyDoc> config_keys();

bool operator==(const RunConfig& a, const RunConfig& b);

std::string_view to_string(Mode m);

}  // namespace branchpar::cli
