// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/training.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace semask {

namespace {

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
  throw std::invalid_argument("train." + field + ": " + why);
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

TrainConfig TrainConfig::toy() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig cfg;
  cfg.base_lr = 1e-4;
  cfg.weight_decay = 1e-4;
  cfg.total_iters = 80000;
  cfg.warmup_iters = 1500;
  cfg.batch_size = 16;
  cfg.crop_size = 512;
  return cfg;
}

void TrainConfig::validate() const {
  if (!(base_lr >= 0) || !std::isfinite(base_lr)) invalid("base_lr", "must be finite and non-negative");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) invalid("weight_decay", "must be finite and non-negative");
  if (!(alpha > 0) || !std::isfinite(alpha)) invalid("alpha", "must be positive");
  if (total_iters < 1) invalid("total_iters", "must be positive");
  if (warmup_iters < 0 || warmup_iters >= total_iters) {
    invalid("warmup_iters", "must be non-negative and below total_iters");
  }
  if (batch_size < 1) invalid("batch_size", "must be positive");
  if (crop_size < 1) invalid("crop_size", "must be positive");
  if (scales.empty()) invalid("scales", "must not be empty");
  for (const double s : scales) {
    if (!(s > 0) || !std::isfinite(s)) invalid("scales", "every ratio must be positive");
  }
  if (!(jitter >= 0) || jitter >= 1) invalid("jitter", "must lie in [0, 1)");
}

double lr_at(Index iter, const TrainConfig& cfg) {
  if (iter < cfg.warmup_iters) {
    return cfg.base_lr * static_cast<double>(iter + 1) / static_cast<double>(cfg.warmup_iters);
  }
  const double progress = static_cast<double>(iter) / static_cast<double>(cfg.total_iters);
  return cfg.base_lr * std::pow(1.0 - progress, 0.9);
}

template <typename T>
Tensor<T> pixel_ce_loss(const Tensor<T>& logits, std::span<const std::int32_t> labels,
                        std::int32_t ignore_label) {
  if (logits.rank() != 4) {
    throw ShapeError("pixel_ce_loss: expected [B,H,W,K] logits, got " + shape_str(logits.shape()));
  }
  return cross_entropy(logits, labels, ignore_label);
}

template <typename T>
LossTerms<T> total_loss(const Tensor<T>& main_logits, const Tensor<T>& prior_logits,
                        std::span<const std::int32_t> labels, double alpha,
                        std::int32_t ignore_label) {
  LossTerms<T> out;
  out.main = pixel_ce_loss(main_logits, labels, ignore_label);
  if (!prior_logits.defined()) {
    out.total = out.main;
    return out;
  }
  if (prior_logits.shape() != main_logits.shape()) {
    throw ShapeError("total_loss: main " + shape_str(main_logits.shape()) + " vs prior " +
                     shape_str(prior_logits.shape()));
  }
  out.prior = pixel_ce_loss(prior_logits, labels, ignore_label);
  out.total = add(out.main, scale(out.prior, static_cast<T>(alpha)));
  return out;
}

bool decay_exempt(const std::string& name) {
  return ends_with(name, ".bias") || ends_with(name, ".gain") || ends_with(name, ".lambda");
}

template <typename T>
void adamw_step(std::span<const NamedTensor<T>> params, AdamWState<T>& state, double lr,
                double weight_decay) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(state.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(state.beta2, t));
  const T eps = static_cast<T>(state.eps), step = static_cast<T>(lr);
  const T shrink = static_cast<T>(1.0 - lr * weight_decay);
  for (const auto& [name, tensor] : params) {
    Tensor<T> p = tensor;
    const std::size_t n = static_cast<std::size_t>(p.size());
    std::vector<T>& m = state.m[name];
    std::vector<T>& v = state.v[name];
    if (m.empty()) m.assign(n, T(0));
    if (v.empty()) v.assign(n, T(0));
    if (m.size() != n || v.size() != n) {
      throw ShapeError("adamw_step: moments for '" + name + "' hold " + std::to_string(m.size()) +
                       " values, parameter has " + std::to_string(n));
    }
    const bool decay = !decay_exempt(name);
    const bool has_grad = p.has_grad();
    const std::span<const T> g = has_grad ? p.grad() : std::span<const T>{};
    auto x = p.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      if (decay) x[i] *= shrink;
      const T gi = has_grad ? g[i] : T(0);
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      x[i] -= step * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

Extent scaled_extent(Index height, Index width, double s) {
  return {std::max<Index>(1, std::llround(static_cast<double>(height) * s)),
          std::max<Index>(1, std::llround(static_cast<double>(width) * s))};
}

}  // namespace

AugmentChoices draw_augment(Rng& rng, const TrainConfig& cfg, Index height, Index width) {
  AugmentChoices c;
  c.scale = cfg.scales[static_cast<std::size_t>(rng.below(static_cast<Index>(cfg.scales.size())))];
  c.flip = rng.bernoulli(0.5);
  c.contrast = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
  c.brightness = rng.uniform(-cfg.jitter, cfg.jitter);
  const Extent e = scaled_extent(height, width, c.scale);
  c.offset_h = e.height > cfg.crop_size ? rng.below(e.height - cfg.crop_size + 1) : 0;
  c.offset_w = e.width > cfg.crop_size ? rng.below(e.width - cfg.crop_size + 1) : 0;
  return c;
}

Sample apply_augment(const Sample& normalized, const AugmentChoices& choices, Index crop_size,
                     std::int32_t ignore_label) {
  const Extent e = scaled_extent(normalized.image.height, normalized.image.width, choices.scale);
  Image image = resize_image(normalized.image, e.height, e.width);
  LabelMap mask = resize_labels(normalized.mask, e.height, e.width);
  if (choices.flip) {
    image = flip_horizontal(image);
    mask = flip_horizontal(mask);
  }
  if (choices.contrast != 1.0 || choices.brightness != 0.0) {
    const float c = static_cast<float>(choices.contrast), b = static_cast<float>(choices.brightness);
    for (float& v : image.pixels) v = c * v + b;
  }
  if (e.height == crop_size && e.width == crop_size) {
    return {normalized.name, std::move(image), std::move(mask)};
  }
  Sample out{normalized.name, Image::zeros(crop_size, crop_size, image.channels),
             LabelMap::filled(crop_size, crop_size, ignore_label)};
  for (Index h = 0; h < crop_size; ++h) {
    const Index sh = h + (e.height > crop_size ? choices.offset_h : 0);
    if (sh >= e.height) break;
    for (Index w = 0; w < crop_size; ++w) {
      const Index sw = w + (e.width > crop_size ? choices.offset_w : 0);
      if (sw >= e.width) break;
      out.mask.at(h, w) = mask.at(sh, sw);
      for (Index c = 0; c < image.channels; ++c) out.image.at(h, w, c) = image.at(sh, sw, c);
    }
  }
  return out;
}

Sample augment(const Sample& sample, Rng& rng, const TrainConfig& cfg) {
  Sample normalized{sample.name, normalize(sample.image), sample.mask};
  const AugmentChoices choices = draw_augment(rng, cfg, sample.image.height, sample.image.width);
  return apply_augment(normalized, choices, cfg.crop_size, cfg.ignore_label);
}

// ---------------------------------------------------------------------------
// Loop

void write_log_header(std::ostream& csv) { csv << "iter,lr,L1,L2,LT\n"; }

std::vector<TrainLogRow> train_loop(SeMaskModel<float>& model, const Dataset& data,
                                    const TrainConfig& cfg, TrainStatus& status, std::ostream* csv,
                                    const std::function<void(const TrainLogRow&)>& on_iter) {
  cfg.validate();
  if (data.size() == 0) throw TrainingError("train_loop: empty dataset");
  if (data.num_classes() != model.config().encoder.num_classes) {
    throw TrainingError("train_loop: dataset has " + std::to_string(data.num_classes()) +
                        " classes, model predicts " +
                        std::to_string(model.config().encoder.num_classes));
  }
  const std::vector<NamedTensor<float>> params = model.parameters();
  const Rng batches = Rng(cfg.seed).split("batches");
  std::vector<TrainLogRow> log;
  for (Index iter = status.iteration; iter < cfg.total_iters; ++iter) {
    Tape<float>::current().clear();
    Rng rng = batches.split(static_cast<std::uint64_t>(iter));
    std::vector<Image> images;
    std::vector<std::int32_t> labels;
    for (Index b = 0; b < cfg.batch_size; ++b) {
      const Sample s = augment(data.get(rng.below(data.size())), rng, cfg);
      labels.insert(labels.end(), s.mask.labels.begin(), s.mask.labels.end());
      images.push_back(std::move(s.image));
    }
    for (const auto& [name, p] : params) Tensor<float>(p).zero_grad();

    LossTerms<float> loss;
    try {
      const ModelOutput<float> out = model.forward(to_tensor<float>(images));
      loss = total_loss(out.logits, out.prior_logits, labels, cfg.alpha, cfg.ignore_label);
    } catch (const NumericError& e) {
      Tape<float>::current().clear();
      throw TrainingError("non-finite value at iteration " + std::to_string(iter) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      Tape<float>::current().clear();
      throw TrainingError("iteration " + std::to_string(iter) + ": " + e.what());
    }
    TrainLogRow row;
    row.iter = iter;
    row.lr = lr_at(iter, cfg);
    row.l1 = loss.main.item();
    row.l2 = loss.prior.defined() ? loss.prior.item() : 0.0;
    row.lt = loss.total.item();
    if (!std::isfinite(row.lt)) {
      Tape<float>::current().clear();
      throw TrainingError("non-finite loss " + std::to_string(row.lt) + " at iteration " +
                          std::to_string(iter));
    }
    backward(loss.total);
    adamw_step(std::span<const NamedTensor<float>>(params), status.optimizer, row.lr,
               cfg.weight_decay);
    status.iteration = iter + 1;
    if (csv) {
      char line[160];
      std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.9g,%.9g\n",
                    static_cast<long long>(row.iter), row.lr, row.l1, row.l2, row.lt);
      *csv << line;
    }
    log.push_back(row);
    if (on_iter) on_iter(row);
  }
  return log;
}

#define SEMASK_INSTANTIATE_TRAINING(T)                                                          \
  template Tensor<T> pixel_ce_loss(const Tensor<T>&, std::span<const std::int32_t>,             \
                                   std::int32_t);                                               \
  template LossTerms<T> total_loss(const Tensor<T>&, const Tensor<T>&,                          \
                                   std::span<const std::int32_t>, double, std::int32_t);        \
  template void adamw_step(std::span<const NamedTensor<T>>, AdamWState<T>&, double, double);

SEMASK_INSTANTIATE_TRAINING(float)
SEMASK_INSTANTIATE_TRAINING(double)

#undef SEMASK_INSTANTIATE_TRAINING

}  // namespace semask
