// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Datasets, the synthetic shapes corpus, confusion-matrix evaluation,
// single- and multi-scale inference, and feature-similarity analysis.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semask/image_io.hpp"
#include "semask/model.hpp"

namespace semask {

inline constexpr std::int32_t kIgnoreLabel = 255;

struct Sample {
  std::string name;
  Image image;     // [0, 1], before normalization
  LabelMap mask;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Image/mask pairs, either held in memory or read from
/// `root/images/<name>.png` and `root/masks/<name>.png` on demand.
class Dataset {
 public:
  static Dataset in_memory(std::vector<Sample> samples, Index num_classes);
  /// Indexes the pairs and validates every mask against `num_classes`.
  static Dataset load(const std::string& root, Index num_classes);

  Index size() const { return static_cast<Index>(names_.size()); }
  Index num_classes() const { return num_classes_; }
  const std::string& name(Index i) const { return names_.at(static_cast<std::size_t>(i)); }
  Sample get(Index i) const;

 private:
  Index num_classes_ = 0;
  std::string root_;
  std::vector<std::string> names_;
  std::vector<Sample> samples_;  // empty for folder-backed datasets
};

/// Throws DatasetError naming `where` on a label outside [0, K) that is not
/// the ignore label, or on an image/mask extent mismatch.
void validate_sample(const Sample& sample, Index num_classes, const std::string& where);

/// Rectangles, disks and stripes on a textured background. Class 0 is the
/// background; class c > 0 has its own base colour and shape kind.
std::vector<Sample> synth_shapes(Index count, Index height, Index width, Index num_classes,
                                 std::uint64_t seed);

void write_dataset(const std::string& root, const std::vector<Sample>& samples);

// ---------------------------------------------------------------------------
// Pixel-level helpers

/// Per-channel (x - mean) / std with the usual ImageNet statistics.
Image normalize(const Image& image);
Image resize_image(const Image& image, Index height, Index width);
/// Nearest-neighbour with half-pixel centres.
LabelMap resize_labels(const LabelMap& labels, Index height, Index width);
Image flip_horizontal(const Image& image);
LabelMap flip_horizontal(const LabelMap& labels);

template <typename T>
Tensor<T> to_tensor(std::span<const Image> images);

/// Per-pixel argmax over the last axis of [1, H, W, K]; ties go to the
/// lowest class index.
template <typename T>
LabelMap argmax_labels(const Tensor<T>& scores);

// ---------------------------------------------------------------------------
// Evaluation

struct ConfusionMatrix {
  Index num_classes = 0;
  std::vector<std::int64_t> counts;  // row = ground truth, column = prediction

  explicit ConfusionMatrix(Index k = 0)
      : num_classes(k), counts(static_cast<std::size_t>(k * k), 0) {}
  std::int64_t at(Index gt, Index pred) const {
    return counts[static_cast<std::size_t>(gt * num_classes + pred)];
  }
  std::int64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

void accumulate_confusion(ConfusionMatrix& cm, std::span<const std::int32_t> pred,
                          std::span<const std::int32_t> gt, std::int32_t ignore_label);

struct IouReport {
  std::vector<double> per_class;  // NaN where the class has zero union
  double mean = 0;
};

/// Throws std::domain_error if every class has zero union.
IouReport miou(const ConfusionMatrix& cm);
double pixel_accuracy(const ConfusionMatrix& cm);

/// Output extents for a short-edge resize to `short_edge`, aspect preserved.
Extent short_edge_extent(Index height, Index width, double short_edge);

/// Resizes so the short edge equals train_res, predicts, resamples the class
/// probabilities back to the input extents and takes the argmax.
template <typename T>
LabelMap infer_single(const SeMaskModel<T>& model, const Image& image, Index train_res);

/// Scale s resizes the short edge to s * train_res. Probabilities of every
/// view (and its mirrored twin when `flip`) are resampled to the input
/// extents and averaged.
template <typename T>
LabelMap infer_multiscale(const SeMaskModel<T>& model, const Image& image, Index train_res,
                          std::span<const double> scales, bool flip);

struct EvalOptions {
  Index train_res = 64;
  std::vector<double> scales;  // empty: single-scale
  bool flip = false;
};

template <typename T>
ConfusionMatrix evaluate(const SeMaskModel<T>& model, const Dataset& data,
                         const EvalOptions& options);

// ---------------------------------------------------------------------------
// Feature similarity

enum class FeatureSide { kPre, kPost };

struct SimilarityMap {
  Index height = 0;
  Index width = 0;
  std::vector<double> values;  // row-major cosine similarities in [-1, 1]
};

/// Cosine similarity between the feature at `pixel` and every position of a
/// [H, W, C] map.
SimilarityMap cosine_similarity_map(std::span<const float> features, Index height, Index width,
                                    Index channels, Index h, Index w);

/// stage is 1-based.
template <typename T>
SimilarityMap similarity_map(const SeMaskModel<T>& model, const Image& image, int stage,
                             Index h, Index w, FeatureSide which);

/// Mean cosine similarity over all distinct same-class pixel pairs of a
/// [H, W, C] map, averaged over the classes present. Ignored labels are skipped.
double within_class_similarity(std::span<const float> features, const LabelMap& labels,
                               Index channels);

}  // namespace semask
