// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoints: "SMSK", u32 version, u64 header length, JSON header,
// then little-endian float32 payload. All integers are little-endian.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "semask/model.hpp"
#include "semask/training.hpp"

namespace semask {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kVersion, kHeader, kTruncated, kShapeMismatch };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<NamedTensor<float>> tensors;  // sorted by name
  Index iteration = 0;
  std::uint64_t seed = 0;                   // with `iteration`, the full sampling state
  std::optional<AdamWState<float>> optimizer;

  /// Builds a model from `config` and copies every tensor in. Throws
  /// CheckpointError(kShapeMismatch) naming the first tensor that is
  /// missing, unexpected or of the wrong shape.
  SeMaskModel<float> model() const;
};

void save_checkpoint(const std::string& path, const SeMaskModel<float>& model, Index iteration,
                     std::uint64_t seed, const AdamWState<float>* optimizer = nullptr);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace semask
