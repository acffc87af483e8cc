// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace branchpar::cli {

struct CheckRow {
  std::string check;      // e.g. "oracle", "comm_volume", "gradcheck"
  std::string subject;    // layout name or sub-op
  double value = 0.0;     // measured deviation / error
  double threshold = 0.0;
  bool passed = true;
  bool informational = false;  // reported but never fails the suite
  std::string note;
};

/// Oracle equivalence and trace checks over the layouts the config admits:
/// bp=2, dap=2, dp=2, the hybrids (2,2,1) and (1,2,2), and the configured
/// layout. BP rows demand bit-exact equality; rows involving DAP allow 1e-12.
std::vector<CheckRow> verify_suite(const RunConfig& cfg);

/// Finite-difference checks of every sub-op and one full block. f32 runs use
/// a 1e-2 tolerance and are informational.
std::vector<CheckRow> gradcheck_suite(const RunConfig& cfg);

bool suite_passed(const std::vector<CheckRow>& rows);

void write_rows_csv(std::ostream& os, const std::vector<CheckRow>& rows);

}  // namespace branchpar::cli
