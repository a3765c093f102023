// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/decoders.hpp"

#include <stdexcept>

namespace semask {

namespace {

template <typename T>
void check_schedule(const std::vector<Tensor<T>>& maps, const char* op) {
  if (maps.empty()) throw std::invalid_argument(std::string(op) + ": no stage inputs");
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].rank() != 4) {
      throw ShapeError(std::string(op) + ": stage " + std::to_string(i) + " has shape " +
                       shape_str(maps[i].shape()) + ", expected [B,H,W,C]");
    }
    if (maps[i].dim(0) != maps[0].dim(0)) {
      throw ShapeError(std::string(op) + ": batch mismatch between stage 0 " +
                       shape_str(maps[0].shape()) + " and stage " + std::to_string(i) + " " +
                       shape_str(maps[i].shape()));
    }
    if (i == 0) continue;
    const Index eh = (maps[i - 1].dim(1) + 1) / 2, ew = (maps[i - 1].dim(2) + 1) / 2;
    if (maps[i].dim(1) != eh || maps[i].dim(2) != ew) {
      throw ShapeError(std::string(op) + ": stage " + std::to_string(i) + " extents " +
                       shape_str(maps[i].shape()) + " do not halve stage " +
                       std::to_string(i - 1) + " " + shape_str(maps[i - 1].shape()));
    }
  }
}

}  // namespace

template <typename T>
FpnParams<T> FpnParams<T>::zeros(const EncoderConfig& encoder, const DecoderConfig& decoder) {
  FpnParams p;
  const Index D = decoder.width;
  for (int i = 0; i < encoder.num_stages(); ++i) {
    p.lateral.push_back(ConvParams<T>::zeros(1, encoder.embed_dims[static_cast<std::size_t>(i)], D));
    std::vector<ConvParams<T>> chain;
    for (int r = 0; r < i; ++r) chain.push_back(ConvParams<T>::zeros(3, D, D));
    p.smooth.push_back(std::move(chain));
  }
  p.classifier = ConvParams<T>::zeros(1, D, encoder.num_classes);
  return p;
}

template <typename T>
Tensor<T> fpn_decode(const std::vector<Tensor<T>>& features, const FpnParams<T>& params) {
  check_schedule(features, "fpn_decode");
  if (features.size() != params.lateral.size()) {
    throw std::invalid_argument("fpn_decode: " + std::to_string(features.size()) +
                                " stage inputs for " + std::to_string(params.lateral.size()) +
                                " lateral convolutions");
  }
  Tensor<T> fused;
  for (std::size_t i = 0; i < features.size(); ++i) {
    Tensor<T> x = params.lateral[i](features[i]);
    for (std::size_t r = 0; r < params.smooth[i].size(); ++r) {
      const Tensor<T>& target = features[i - r - 1];
      x = resize_bilinear(params.smooth[i][r](x), target.dim(1), target.dim(2));
    }
    fused = fused.defined() ? add(fused, x) : x;
  }
  return params.classifier(fused);
}

template <typename T>
Tensor<T> semantic_decode(const std::vector<Tensor<T>>& priors) {
  check_schedule(priors, "semantic_decode");
  const Index H = priors[0].dim(1), W = priors[0].dim(2), K = priors[0].dim(3);
  Tensor<T> out = priors[0];
  for (std::size_t i = 1; i < priors.size(); ++i) {
    if (priors[i].dim(3) != K) {
      throw ShapeError("semantic_decode: prior " + std::to_string(i) + " has " +
                       std::to_string(priors[i].dim(3)) + " channels, expected " +
                       std::to_string(K));
    }
    out = add(out, resize_bilinear(priors[i], H, W));
  }
  return out;
}

template <typename T>
Tensor<T> upscale_to_input(const Tensor<T>& logits, Index height, Index width) {
  if (logits.rank() != 4) {
    throw ShapeError("upscale_to_input: expected [B,h,w,K], got " + shape_str(logits.shape()));
  }
  const Index uh = 4 * logits.dim(1), uw = 4 * logits.dim(2);
  if (height > uh || width > uw || height < 1 || width < 1) {
    throw ShapeError("upscale_to_input: cannot crop " + shape_str(logits.shape()) + " x4 to " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  const Tensor<T> up = resize_bilinear(logits, uh, uw);
  return (uh == height && uw == width) ? up : crop(up, height, width);
}

#define SEMASK_INSTANTIATE_DECODERS(T)                                                         \
  template struct FpnParams<T>;                                                                \
  template Tensor<T> fpn_decode(const std::vector<Tensor<T>>&, const FpnParams<T>&);           \
  template Tensor<T> semantic_decode(const std::vector<Tensor<T>>&);                           \
  template Tensor<T> upscale_to_input(const Tensor<T>&, Index, Index);

SEMASK_INSTANTIATE_DECODERS(float)
SEMASK_INSTANTIATE_DECODERS(double)

#undef SEMASK_INSTANTIATE_DECODERS

}  // namespace semask
