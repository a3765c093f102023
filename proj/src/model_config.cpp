// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/model_config.hpp"

#include <algorithm>
#include <stdexcept>

namespace semask {

namespace {

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
  throw std::invalid_argument("encoder." + field + ": " + why);
}

EncoderConfig swin(std::string name, Index window, Index c, std::vector<Index> depths,
                   Index h0) {
  EncoderConfig cfg;
  cfg.name = std::move(name);
  cfg.window = window;
  cfg.embed_dims = {c, 2 * c, 4 * c, 8 * c};
  cfg.depths = std::move(depths);
  cfg.heads = {h0, 2 * h0, 4 * h0, 8 * h0};
  cfg.semantic_depths = {1, 1, 1, 1};
  return cfg;
}

}  // namespace

bool EncoderConfig::has_semantic_layers() const {
  return std::any_of(semantic_depths.begin(), semantic_depths.end(),
                     [](Index d) { return d > 0; });
}

void EncoderConfig::validate() const {
  const std::size_t n = embed_dims.size();
  if (n < 1 || n > 4) invalid("embed_dims", "expected 1 to 4 stages, got " + std::to_string(n));
  if (depths.size() != n) invalid("depths", "length must match embed_dims");
  if (heads.size() != n) invalid("heads", "length must match embed_dims");
  if (semantic_depths.size() != n) invalid("semantic_depths", "length must match embed_dims");
  if (patch_size < 1) invalid("patch_size", "must be positive");
  if (in_channels < 1) invalid("in_channels", "must be positive");
  if (window < 1) invalid("window", "must be positive");
  if (num_classes < 2) invalid("num_classes", "must be at least 2");
  if (mlp_ratio < 1) invalid("mlp_ratio", "must be positive");
  for (std::size_t i = 0; i < n; ++i) {
    const std::string at = "[" + std::to_string(i) + "]";
    if (embed_dims[i] < 1) invalid("embed_dims" + at, "must be positive");
    if (i > 0 && embed_dims[i] != 2 * embed_dims[i - 1]) {
      invalid("embed_dims" + at, "must double the previous stage");
    }
    if (depths[i] < 0) invalid("depths" + at, "must be non-negative");
    if (semantic_depths[i] < 0) invalid("semantic_depths" + at, "must be non-negative");
    if (heads[i] < 1 || embed_dims[i] % heads[i] != 0) {
      invalid("heads" + at, "must be positive and divide embed_dims" + at);
    }
    if ((semantic_depths[i] > 0) != (semantic_depths[0] > 0)) {
      invalid("semantic_depths" + at, "semantic layers must be present at every stage or at none");
    }
  }
}

EncoderConfig encoder_preset(std::string_view name, Index num_classes) {
  EncoderConfig cfg;
  if (name == "tiny") {
    cfg = swin("tiny", 7, 96, {2, 2, 6, 2}, 3);
  } else if (name == "small") {
    cfg = swin("small", 7, 96, {2, 2, 18, 2}, 3);
  } else if (name == "base") {
    cfg = swin("base", 12, 128, {2, 2, 18, 2}, 4);
  } else if (name == "large") {
    cfg = swin("large", 12, 192, {2, 2, 18, 2}, 6);
  } else if (name == "toy") {
    cfg = swin("toy", 4, 16, {1, 1, 2, 1}, 1);
  } else {
    throw std::invalid_argument("unknown preset '" + std::string(name) +
                                "' (expected tiny, small, base, large or toy)");
  }
  cfg.num_classes = num_classes;
  cfg.validate();
  return cfg;
}

ModelConfig model_preset(std::string_view name, Index num_classes) {
  ModelConfig cfg;
  cfg.encoder = encoder_preset(name, num_classes);
  cfg.decoder.width = name == "toy" ? 32 : 128;
  return cfg;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"tiny", "small", "base", "large", "toy"};
  return names;
}

ModelConfig without_semantic_layers(ModelConfig cfg) {
  std::fill(cfg.encoder.semantic_depths.begin(), cfg.encoder.semantic_depths.end(), Index{0});
  return cfg;
}

std::vector<Extent> stage_extents(const EncoderConfig& cfg, Index height, Index width) {
  std::vector<Extent> out;
  Extent e{(height + cfg.patch_size - 1) / cfg.patch_size,
           (width + cfg.patch_size - 1) / cfg.patch_size};
  for (int i = 0; i < cfg.num_stages(); ++i) {
    if (i > 0) e = {(e.height + 1) / 2, (e.width + 1) / 2};
    out.push_back(e);
  }
  return out;
}

}  // namespace semask
