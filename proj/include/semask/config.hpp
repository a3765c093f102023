// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: a strict JSON document whose omitted fields come from
// the "toy" or "paper" profile.

#pragma once

#include <cstdint>
#include <string>

#include "semask/model_config.hpp"
#include "semask/training.hpp"

namespace semask {

struct SynthSpec {
  Index count = 16;
  Index height = 64;
  Index width = 64;
  std::uint64_t seed = 7;
  bool operator==(const SynthSpec&) const = default;
};

struct DataConfig {
  std::string root;       // folder dataset; empty selects the synthetic corpus
  SynthSpec synth;        // training corpus
  SynthSpec heldout{16, 64, 64, 1007};
  bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
  std::string profile = "toy";
  std::string preset = "toy";  // "custom" when the encoder was spelled out
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::string out_dir = "runs/toy";

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// "toy": toy preset with K = 4, desk-scale training, 16 synthetic 64x64 images.
/// "paper": tiny preset with K = 150 and the full-length schedule.
RunConfig default_run_config(const std::string& profile);

/// Unknown keys, wrong types and malformed JSON throw ConfigError; syntax
/// errors carry line and column.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

/// Every field written out, so parsing the result reproduces the config.
std::string serialize_config(const RunConfig& cfg);

}  // namespace semask
