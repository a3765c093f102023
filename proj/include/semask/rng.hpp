// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>

#include "semask/tensor.hpp"

namespace semask {

/// Counter-based generator: every draw is a keyed SplitMix64 hash of an
/// incrementing counter, so streams can be split by name or id without
/// sharing state, and the full state is two integers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0);

  Rng split(std::uint64_t id) const;
  Rng split(std::string_view name) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n).
  Index below(Index n);
  bool bernoulli(double p);
  double normal();
  /// Normal(0, stddev) resampled until within +-bound standard deviations.
  double truncated_normal(double stddev, double bound = 2.0);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_name(std::string_view name);

}  // namespace semask
