// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "branchpar/evoformer.hpp"
#include "branchpar/tensor.hpp"

namespace branchpar::testing_util {

/// Standard-normal tensor drawn from a fixed seed.
inline Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = normal(rng);
  return Tensor(shape, std::move(v));
}

/// The small configuration used throughout the tests.
inline EvoConfig toy_config(Variant variant = Variant::parallel) {
  EvoConfig cfg;
  cfg.s = 8;
  cfg.r = 16;
  cfg.c_m = 8;
  cfg.c_z = 8;
  cfg.h = 2;
  cfg.c_head = 4;
  cfg.c_opm = 4;
  cfg.t_factor = 4;
  cfg.n_blocks = 2;
  cfg.variant = variant;
  return cfg;
}

/// A smaller configuration for tests that run many forward passes.
inline EvoConfig tiny_config(Variant variant = Variant::parallel) {
  EvoConfig cfg = toy_config(variant);
  cfg.s = 4;
  cfg.r = 6;
  cfg.c_m = 4;
  cfg.c_z = 4;
  cfg.c_head = 3;
  cfg.c_opm = 3;
  cfg.t_factor = 2;
  cfg.n_blocks = 1;
  return cfg;
}

/// Copy of `params` with every entry whose name contains `needle` zeroed.
inline ParamStore zero_params(const ParamStore& params, const std::string& needle) {
  return params.map([&](const ParamEntry& e) {
    return e.name.find(needle) != std::string::npos ? Tensor::zeros(e.value.shape()) : e.value;
  });
}

/// x permuted along `axis` by `perm` (out[i] = x[perm[i]]).
inline Tensor take(const Tensor& x, std::int64_t axis, const std::vector<std::int64_t>& perm) {
  const Shape& shape = x.shape();
  std::int64_t outer = 1;
  std::int64_t inner = 1;
  for (std::int64_t a = 0; a < axis; ++a) outer *= shape[static_cast<std::size_t>(a)];
  for (std::size_t a = static_cast<std::size_t>(axis) + 1; a < shape.size(); ++a) inner *= shape[a];
  const std::int64_t n = shape[static_cast<std::size_t>(axis)];
  const auto src = x.data();
  std::vector<double> out(src.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t from = (o * n + perm[static_cast<std::size_t>(i)]) * inner;
      const std::int64_t to = (o * n + i) * inner;
      for (std::int64_t k = 0; k < inner; ++k) out[static_cast<std::size_t>(to + k)] = src[static_cast<std::size_t>(from + k)];
    }
  }
  return Tensor(shape, std::move(out));
}

}  // namespace branchpar::testing_util
