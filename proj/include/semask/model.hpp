// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// The full segmentation network: encoder, both decoders and the x4 upscale,
// with named parameter access for the optimizer, checkpoints and tests.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "semask/decoders.hpp"
#include "semask/encoder.hpp"
#include "semask/rng.hpp"

namespace semask {

template <typename T>
using NamedTensor = std::pair<std::string, Tensor<T>>;

template <typename T>
struct ModelOutput {
  Tensor<T> logits;        // main prediction F, [B, H, W, K]
  Tensor<T> prior_logits;  // aggregated priors S, [B, H, W, K]; undefined without semantic layers
  std::vector<StageOutput<T>> stages;
};

template <typename T>
class SeMaskModel {
 public:
  /// All weights zero, norms identity, lambda at its initial value.
  explicit SeMaskModel(ModelConfig config);

  /// Encoder weights ~ N(0, 0.02) truncated at two deviations, decoder
  /// kernels He-normal, biases and relative-position tables zero, norm gains
  /// one. Each tensor draws from a stream keyed by its name, so the result
  /// does not depend on parameter order.
  void init(std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// Handles aliasing the live parameters, sorted by name.
  std::vector<NamedTensor<T>> parameters() const;
  Index num_parameters() const;

  /// image [B, H, W, Cin]. H and W are zero-padded to a multiple of the
  /// patch size; outputs are cropped back to H x W.
  ModelOutput<T> forward(const Tensor<T>& image) const;

  /// Deep copy with every value converted to U.
  template <typename U>
  SeMaskModel<U> cast() const;

  EncoderParams<T> encoder;
  FpnParams<T> fpn;

 private:
  ModelConfig config_;
};

template <typename T>
template <typename U>
SeMaskModel<U> SeMaskModel<T>::cast() const {
  SeMaskModel<U> out(config_);
  const std::vector<NamedTensor<T>> src = parameters();
  const std::vector<NamedTensor<U>> dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto from = src[i].second.data();
    Tensor<U> to = dst[i].second;
    auto values = to.mutable_data();
    for (std::size_t k = 0; k < values.size(); ++k) values[k] = static_cast<U>(from[k]);
  }
  return out;
}

}  // namespace semask
