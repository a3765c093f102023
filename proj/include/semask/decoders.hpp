// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Feature-pyramid decoder for the main prediction, the parameter-free
// upsample-and-sum decoder for the semantic priors, and the final x4 upscale.

#pragma once

#include <string>
#include <vector>

#include "semask/layers.hpp"
#include "semask/model_config.hpp"

namespace semask {

template <typename T>
struct FpnParams {
  std::vector<ConvParams<T>> lateral;             // 1x1, C_i -> D
  std::vector<std::vector<ConvParams<T>>> smooth; // stage i: i rounds of 3x3, D -> D
  ConvParams<T> classifier;                       // 1x1, D -> K

  static FpnParams zeros(const EncoderConfig& encoder, const DecoderConfig& decoder);
};

template <typename T, typename F>
void visit(FpnParams<T>& p, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < p.lateral.size(); ++i) {
    visit(p.lateral[i], prefix + ".lateral." + std::to_string(i), f);
  }
  for (std::size_t i = 0; i < p.smooth.size(); ++i)
    for (std::size_t r = 0; r < p.smooth[i].size(); ++r) {
      visit(p.smooth[i][r], prefix + ".smooth." + std::to_string(i) + "." + std::to_string(r), f);
    }
  visit(p.classifier, prefix + ".classifier", f);
}

/// Stage i's lateral map goes through i rounds of (3x3 conv, bilinear resize
/// to the next finer stage's extents); the results are summed at the first
/// stage's resolution and classified. Throws ShapeError unless every stage is
/// the ceil-half of the previous one.
template <typename T>
Tensor<T> fpn_decode(const std::vector<Tensor<T>>& features, const FpnParams<T>& params);

/// Bilinearly resizes every prior to the first prior's extents and sums.
template <typename T>
Tensor<T> semantic_decode(const std::vector<Tensor<T>>& priors);

/// Bilinear x4 to [B, 4h, 4w, K], then cropped to [B, height, width, K].
template <typename T>
Tensor<T> upscale_to_input(const Tensor<T>& logits, Index height, Index width);

}  // namespace semask
