// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "semask/tensor.hpp"

namespace semask {

/// Hierarchical encoder layout. Presets use four stages; custom configs may
/// use one to four, each doubling the embedding width of the previous one.
struct EncoderConfig {
  std::string name = "custom";
  Index patch_size = 4;
  Index in_channels = 3;
  Index window = 7;
  std::vector<Index> embed_dims;
  std::vector<Index> depths;           // transformer blocks per stage
  std::vector<Index> heads;
  std::vector<Index> semantic_depths;  // semantic blocks per stage; 0 removes the layer
  Index num_classes = 150;
  Index mlp_ratio = 4;
  bool chain_semantic_query = true;
  double lambda_init = 0.1;

  int num_stages() const { return static_cast<int>(embed_dims.size()); }
  bool has_semantic_layers() const;
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

struct DecoderConfig {
  Index width = 128;
  bool operator==(const DecoderConfig&) const = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  bool operator==(const ModelConfig&) const = default;
};

/// tiny, small, base, large: the Swin variants (window 7, 7, 12, 12).
/// toy: C = [16, 32, 64, 128], depths [1, 1, 2, 1], heads [1, 2, 4, 8],
/// window 4; a small synthetic layout for tests and desk-scale runs.
EncoderConfig encoder_preset(std::string_view name, Index num_classes);
ModelConfig model_preset(std::string_view name, Index num_classes);
const std::vector<std::string>& preset_names();

/// Same layout with every semantic layer removed.
ModelConfig without_semantic_layers(ModelConfig cfg);

struct Extent {
  Index height = 0;
  Index width = 0;
  bool operator==(const Extent&) const = default;
};

/// Feature extents per stage for an input image: ceil(H / 4), then halved
/// (rounding up) at each later stage.
std::vector<Extent> stage_extents(const EncoderConfig& cfg, Index height, Index width);

}  // namespace semask
