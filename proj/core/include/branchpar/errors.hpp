// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace branchpar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or axes that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API precondition (non-scalar loss, mixed graphs, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, layout, device or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced while finite checking is enabled.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Group members disagreed on a collective call.
class CollectiveError : public Error {
 public:
  using Error::Error;
};

/// A rank of a simulated world failed.
class WorldError : public Error {
 public:
  WorldError(int rank, const std::string& what)
      : Error("rank " + std::to_string(rank) + " failed: " + what), rank_(rank) {}

  int rank() const noexcept { return rank_; }

 private:
  int rank_;
};

/// Two run results could not be compared.
class ComparisonError : public Error {
 public:
  using Error::Error;
};

}  // namespace branchpar
