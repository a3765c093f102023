// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Losses, AdamW, the warmup + poly schedule, augmentation and the loop.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "semask/data_eval.hpp"
#include "semask/model.hpp"
#include "semask/rng.hpp"

namespace semask {

struct TrainConfig {
  double base_lr = 1e-3;
  double weight_decay = 1e-4;
  double alpha = 0.4;
  Index total_iters = 500;
  Index warmup_iters = 50;
  Index batch_size = 4;
  Index crop_size = 64;
  std::vector<double> scales = {0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
  double jitter = 0.2;
  std::uint64_t seed = 0;
  std::int32_t ignore_label = kIgnoreLabel;

  /// Desk-scale defaults.
  static TrainConfig toy();
  /// 80k iterations, 1500 warmup, 512 crops, batch 16, lr 1e-4, wd 1e-4.
  static TrainConfig paper();

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Warmup: base_lr * (iter + 1) / warmup_iters. Afterwards:
/// base_lr * (1 - iter / total_iters)^0.9.
double lr_at(Index iter, const TrainConfig& cfg);

/// logits [B, H, W, K] against labels [B * H * W].
template <typename T>
Tensor<T> pixel_ce_loss(const Tensor<T>& logits, std::span<const std::int32_t> labels,
                        std::int32_t ignore_label);

template <typename T>
struct LossTerms {
  Tensor<T> total;
  Tensor<T> main;   // L1
  Tensor<T> prior;  // L2; undefined when there are no prior logits
};

/// L1 + alpha * L2. Without prior logits the total is L1.
template <typename T>
LossTerms<T> total_loss(const Tensor<T>& main_logits, const Tensor<T>& prior_logits,
                        std::span<const std::int32_t> labels, double alpha,
                        std::int32_t ignore_label);

/// Parameters that are never decayed: norm gains, biases and lambda.
bool decay_exempt(const std::string& name);

template <typename T>
struct AdamWState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Index step = 0;
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
};

/// theta <- theta * (1 - lr * wd) for decayed parameters, then the bias-
/// corrected Adam update from each parameter's accumulated gradient. A
/// parameter without a gradient is treated as having a zero gradient.
template <typename T>
void adamw_step(std::span<const NamedTensor<T>> params, AdamWState<T>& state, double lr,
                double weight_decay);

struct AugmentChoices {
  double scale = 1.0;
  bool flip = false;
  double contrast = 1.0;    // x' = contrast * x + brightness
  double brightness = 0.0;
  Index offset_h = 0;       // crop origin; unused along an axis that is padded
  Index offset_w = 0;
};

/// Draws the random choices for a sample whose extents are height x width.
AugmentChoices draw_augment(Rng& rng, const TrainConfig& cfg, Index height, Index width);

/// Applies the choices to an already normalized sample: scale, flip, jitter,
/// then crop or pad (image 0, mask ignore) to crop_size x crop_size.
Sample apply_augment(const Sample& normalized, const AugmentChoices& choices, Index crop_size,
                     std::int32_t ignore_label);

/// normalize, draw, apply.
Sample augment(const Sample& sample, Rng& rng, const TrainConfig& cfg);

struct TrainLogRow {
  Index iter = 0;
  double lr = 0;
  double l1 = 0;
  double l2 = 0;
  double lt = 0;
  bool operator==(const TrainLogRow&) const = default;
};

struct TrainStatus {
  Index iteration = 0;  // iterations completed
  AdamWState<float> optimizer;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs iterations [status.iteration, cfg.total_iters). Batches are drawn with
/// replacement from streams keyed by (seed, iteration), so a resumed run sees
/// the same batches as an uninterrupted one. Rows go to `csv` (if given) as
/// iter,lr,L1,L2,LT. `on_iter` is called after every step.
std::vector<TrainLogRow> train_loop(SeMaskModel<float>& model, const Dataset& data,
                                    const TrainConfig& cfg, TrainStatus& status,
                                    std::ostream* csv = nullptr,
                                    const std::function<void(const TrainLogRow&)>& on_iter = {});

void write_log_header(std::ostream& csv);

}  // namespace semask
