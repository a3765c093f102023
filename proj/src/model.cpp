// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/model.hpp"

#include <algorithm>
#include <cmath>

namespace semask {

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename T>
SeMaskModel<T>::SeMaskModel(ModelConfig config) : config_(std::move(config)) {
  config_.encoder.validate();
  if (config_.decoder.width < 1) throw std::invalid_argument("decoder.width: must be positive");
  encoder = EncoderParams<T>::zeros(config_.encoder);
  fpn = FpnParams<T>::zeros(config_.encoder, config_.decoder);
}

template <typename T>
std::vector<NamedTensor<T>> SeMaskModel<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  auto collect = [&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); };
  auto* self = const_cast<SeMaskModel*>(this);
  visit(self->encoder, "encoder", collect);
  visit(self->fpn, "decoder.fpn", collect);
  std::sort(out.begin(), out.end(),
            [](const NamedTensor<T>& a, const NamedTensor<T>& b) { return a.first < b.first; });
  return out;
}

template <typename T>
Index SeMaskModel<T>::num_parameters() const {
  Index n = 0;
  for (const auto& [name, t] : parameters()) n += t.size();
  return n;
}

template <typename T>
void SeMaskModel<T>::init(std::uint64_t seed) {
  const Rng root(seed);
  for (auto& [name, t] : parameters()) {
    Rng rng = root.split(name);
    auto v = t.mutable_data();
    if (ends_with(name, ".gain")) {
      std::fill(v.begin(), v.end(), T(1));
    } else if (ends_with(name, ".bias") || ends_with(name, ".rpe_table")) {
      std::fill(v.begin(), v.end(), T(0));
    } else if (ends_with(name, ".lambda")) {
      std::fill(v.begin(), v.end(), static_cast<T>(config_.encoder.lambda_init));
    } else if (name.starts_with("decoder.")) {
      const Index fan_in = t.size() / t.dim(-1);
      const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (T& x : v) x = static_cast<T>(std * rng.normal());
    } else {
      for (T& x : v) x = static_cast<T>(rng.truncated_normal(0.02));
    }
  }
}

template <typename T>
ModelOutput<T> SeMaskModel<T>::forward(const Tensor<T>& image) const {
  if (image.rank() != 4 || image.dim(3) != config_.encoder.in_channels) {
    throw ShapeError("forward: expected [B,H,W," + std::to_string(config_.encoder.in_channels) +
                     "] image, got " + shape_str(image.shape()));
  }
  const Index H = image.dim(1), W = image.dim(2), p = config_.encoder.patch_size;
  const Index ph = (H + p - 1) / p * p, pw = (W + p - 1) / p * p;
  const Tensor<T> input = (ph == H && pw == W) ? image : pad_spatial(image, ph, pw);

  ModelOutput<T> out;
  out.stages = encoder_forward(input, encoder, config_.encoder);
  std::vector<Tensor<T>> features, priors;
  for (const StageOutput<T>& s : out.stages) {
    features.push_back(s.post);
    if (s.prior.defined()) priors.push_back(s.prior);
  }
  const Tensor<T> main = fpn_decode(features, fpn);
  out.logits = upscale_to_input(main, H, W);
  if (priors.size() == features.size()) {
    out.prior_logits = upscale_to_input(semantic_decode(priors), H, W);
  }
  return out;
}

template class SeMaskModel<float>;
template class SeMaskModel<double>;

}  // namespace semask
