// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/data_eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <set>
#include <stdexcept>

#include "semask/rng.hpp"

namespace fs = std::filesystem;

namespace semask {

namespace {

constexpr float kMean[3] = {0.485f, 0.456f, 0.406f};
constexpr float kStd[3] = {0.229f, 0.224f, 0.225f};

Tensor<float> image_tensor(const Image& image) {
  return Tensor<float>({1, image.height, image.width, image.channels}, image.pixels);
}

Image from_tensor(const Tensor<float>& t) {
  Image out;
  out.height = t.dim(1);
  out.width = t.dim(2);
  out.channels = t.dim(3);
  out.pixels.assign(t.data().begin(), t.data().end());
  return out;
}

// HSV with full value range to RGB.
void hsv_to_rgb(double h, double s, double v, float rgb[3]) {
  const double c = v * s;
  const double hp = std::fmod(h, 1.0) * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  rgb[0] = static_cast<float>(r + m);
  rgb[1] = static_cast<float>(g + m);
  rgb[2] = static_cast<float>(b + m);
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset

void validate_sample(const Sample& sample, Index num_classes, const std::string& where) {
  const LabelMap& m = sample.mask;
  if (static_cast<Index>(m.labels.size()) != m.height * m.width) {
    throw DatasetError(where + ": mask storage does not match its extents");
  }
  if (!sample.image.pixels.empty() &&
      (sample.image.height != m.height || sample.image.width != m.width)) {
    throw DatasetError(where + ": image is " + std::to_string(sample.image.height) + "x" +
                       std::to_string(sample.image.width) + " but mask is " +
                       std::to_string(m.height) + "x" + std::to_string(m.width));
  }
  for (const std::int32_t v : m.labels) {
    if (v != kIgnoreLabel && (v < 0 || v >= num_classes)) {
      throw DatasetError(where + ": label " + std::to_string(v) + " outside [0, " +
                         std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::in_memory(std::vector<Sample> samples, Index num_classes) {
  if (samples.empty()) throw DatasetError("dataset: no samples");
  Dataset d;
  d.num_classes_ = num_classes;
  for (const Sample& s : samples) {
    validate_sample(s, num_classes, "sample '" + s.name + "'");
    d.names_.push_back(s.name);
  }
  d.samples_ = std::move(samples);
  return d;
}

Dataset Dataset::load(const std::string& root, Index num_classes) {
  const fs::path images = fs::path(root) / "images", masks = fs::path(root) / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks)) {
    throw DatasetError("dataset '" + root + "': expected images/ and masks/ subdirectories");
  }
  auto stems = [](const fs::path& dir) {
    std::set<std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".png") {
        out.insert(entry.path().stem().string());
      }
    }
    return out;
  };
  const std::set<std::string> image_names = stems(images), mask_names = stems(masks);
  for (const std::string& n : image_names) {
    if (!mask_names.count(n)) throw DatasetError("dataset '" + root + "': missing mask for '" + n + "'");
  }
  for (const std::string& n : mask_names) {
    if (!image_names.count(n)) throw DatasetError("dataset '" + root + "': missing image for '" + n + "'");
  }
  if (image_names.empty()) throw DatasetError("dataset '" + root + "': no samples");
  Dataset d;
  d.num_classes_ = num_classes;
  d.root_ = root;
  d.names_.assign(image_names.begin(), image_names.end());
  for (const std::string& n : d.names_) {
    Sample s;
    const std::string path = (masks / (n + ".png")).string();
    s.mask = read_png_labels(path);
    validate_sample(s, num_classes, path);
  }
  return d;
}

Sample Dataset::get(Index i) const {
  if (i < 0 || i >= size()) throw std::out_of_range("dataset index " + std::to_string(i));
  if (!samples_.empty()) return samples_[static_cast<std::size_t>(i)];
  const std::string& n = name(i);
  Sample s;
  s.name = n;
  s.image = read_png_rgb((fs::path(root_) / "images" / (n + ".png")).string());
  s.mask = read_png_labels((fs::path(root_) / "masks" / (n + ".png")).string());
  validate_sample(s, num_classes_, (fs::path(root_) / "masks" / (n + ".png")).string());
  return s;
}

std::vector<Sample> synth_shapes(Index count, Index height, Index width, Index num_classes,
                                 std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("synth_shapes: num_classes must be at least 2");
  if (count < 1 || height < 8 || width < 8) {
    throw std::invalid_argument("synth_shapes: need at least one image of 8x8 or larger");
  }
  const Rng root(seed);
  const Index shapes_k = num_classes - 1;
  std::vector<std::array<float, 3>> palette(static_cast<std::size_t>(num_classes));
  for (Index c = 1; c < num_classes; ++c) {
    hsv_to_rgb(static_cast<double>(c - 1) / static_cast<double>(shapes_k), 0.85, 0.95,
               palette[static_cast<std::size_t>(c)].data());
  }
  const double H = static_cast<double>(height), W = static_cast<double>(width);
  std::vector<Sample> out;
  for (Index i = 0; i < count; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    Sample s;
    char name[32];
    std::snprintf(name, sizeof name, "synth_%04lld", static_cast<long long>(i));
    s.name = name;
    s.image = Image::zeros(height, width, 3);
    s.mask = LabelMap::filled(height, width, 0);

    const double grey = rng.uniform(0.3, 0.5);
    const double fy = rng.uniform(0.2, 0.6), fx = rng.uniform(0.2, 0.6), phase = rng.uniform(0, 6.3);
    for (Index h = 0; h < height; ++h)
      for (Index w = 0; w < width; ++w) {
        const double t = grey + 0.08 * std::sin(fy * static_cast<double>(h) +
                                                fx * static_cast<double>(w) + phase);
        for (Index c = 0; c < 3; ++c) {
          s.image.at(h, w, c) = static_cast<float>(t + 0.03 * rng.normal());
        }
      }

    const Index shapes = 1 + rng.below(2);
    for (Index k = 0; k < shapes; ++k) {
      const Index cls = k == 0 ? 1 + i % shapes_k : 1 + rng.below(shapes_k);
      const Index kind = (cls - 1) % 3;
      float tint[3];
      for (int c = 0; c < 3; ++c) {
        tint[c] = palette[static_cast<std::size_t>(cls)][static_cast<std::size_t>(c)] +
                  static_cast<float>(rng.uniform(-0.05, 0.05));
      }
      auto inside = [&]() -> std::function<bool(double, double)> {
        if (kind == 0) {
          const double rh = rng.uniform(0.25, 0.4) * H, rw = rng.uniform(0.25, 0.4) * W;
          const double y0 = rng.uniform(0, H - rh), x0 = rng.uniform(0, W - rw);
          return [=](double y, double x) { return y >= y0 && y < y0 + rh && x >= x0 && x < x0 + rw; };
        }
        if (kind == 1) {
          const double r = rng.uniform(0.14, 0.22) * std::min(H, W);
          const double cy = rng.uniform(r, H - r), cx = rng.uniform(r, W - r);
          return [=](double y, double x) { return (y - cy) * (y - cy) + (x - cx) * (x - cx) < r * r; };
        }
        const bool horizontal = rng.bernoulli(0.5);
        const double extent = horizontal ? H : W;
        const double thick = rng.uniform(0.14, 0.2) * extent;
        const double start = rng.uniform(0, extent - thick);
        return [=](double y, double x) {
          const double v = horizontal ? y : x;
          return v >= start && v < start + thick;
        };
      }();
      for (Index h = 0; h < height; ++h)
        for (Index w = 0; w < width; ++w) {
          if (!inside(static_cast<double>(h) + 0.5, static_cast<double>(w) + 0.5)) continue;
          s.mask.at(h, w) = static_cast<std::int32_t>(cls);
          for (Index c = 0; c < 3; ++c) {
            s.image.at(h, w, c) = tint[c] + static_cast<float>(0.04 * rng.normal());
          }
        }
    }
    for (float& v : s.image.pixels) v = std::clamp(v, 0.0f, 1.0f);
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const std::string& root, const std::vector<Sample>& samples) {
  const fs::path images = fs::path(root) / "images", masks = fs::path(root) / "masks";
  fs::create_directories(images);
  fs::create_directories(masks);
  for (const Sample& s : samples) {
    write_png_rgb((images / (s.name + ".png")).string(), s.image);
    write_png_labels((masks / (s.name + ".png")).string(), s.mask);
  }
}

// ---------------------------------------------------------------------------
// Pixel-level helpers

Image normalize(const Image& image) {
  if (image.channels != 3) throw std::invalid_argument("normalize: expected 3 channels");
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const std::size_t c = i % 3;
    out.pixels[i] = (out.pixels[i] - kMean[c]) / kStd[c];
  }
  return out;
}

Image resize_image(const Image& image, Index height, Index width) {
  if (height == image.height && width == image.width) return image;
  NoGradGuard guard;
  return from_tensor(resize_bilinear(image_tensor(image), height, width));
}

LabelMap resize_labels(const LabelMap& labels, Index height, Index width) {
  if (height == labels.height && width == labels.width) return labels;
  LabelMap out = LabelMap::filled(height, width, 0);
  auto src = [](Index dst, Index in, Index out_n) {
    const Index s = static_cast<Index>(std::floor((static_cast<double>(dst) + 0.5) *
                                                  static_cast<double>(in) /
                                                  static_cast<double>(out_n)));
    return std::clamp<Index>(s, 0, in - 1);
  };
  for (Index h = 0; h < height; ++h) {
    const Index sh = src(h, labels.height, height);
    for (Index w = 0; w < width; ++w) out.at(h, w) = labels.at(sh, src(w, labels.width, width));
  }
  return out;
}

Image flip_horizontal(const Image& image) {
  Image out = image;
  for (Index h = 0; h < image.height; ++h)
    for (Index w = 0; w < image.width; ++w)
      for (Index c = 0; c < image.channels; ++c) {
        out.at(h, w, c) = image.at(h, image.width - 1 - w, c);
      }
  return out;
}

LabelMap flip_horizontal(const LabelMap& labels) {
  LabelMap out = labels;
  for (Index h = 0; h < labels.height; ++h)
    for (Index w = 0; w < labels.width; ++w) out.at(h, w) = labels.at(h, labels.width - 1 - w);
  return out;
}

template <typename T>
Tensor<T> to_tensor(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("to_tensor: no images");
  const Image& first = images[0];
  std::vector<T> data;
  data.reserve(images.size() * first.pixels.size());
  for (const Image& im : images) {
    if (im.height != first.height || im.width != first.width || im.channels != first.channels) {
      throw ShapeError("to_tensor: images of different extents in one batch");
    }
    for (const float v : im.pixels) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>({static_cast<Index>(images.size()), first.height, first.width, first.channels},
                   std::move(data));
}

template <typename T>
LabelMap argmax_labels(const Tensor<T>& scores) {
  if (scores.rank() != 4 || scores.dim(0) != 1) {
    throw ShapeError("argmax_labels: expected [1,H,W,K], got " + shape_str(scores.shape()));
  }
  const Index H = scores.dim(1), W = scores.dim(2), K = scores.dim(3);
  LabelMap out = LabelMap::filled(H, W, 0);
  const auto v = scores.data();
  for (Index p = 0; p < H * W; ++p) {
    Index best = 0;
    for (Index k = 1; k < K; ++k) {
      if (v[static_cast<std::size_t>(p * K + k)] > v[static_cast<std::size_t>(p * K + best)]) best = k;
    }
    out.labels[static_cast<std::size_t>(p)] = static_cast<std::int32_t>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (const std::int64_t c : counts) n += c;
  return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) {
    throw std::invalid_argument("confusion matrices over " + std::to_string(num_classes) +
                                " and " + std::to_string(other.num_classes) + " classes");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

void accumulate_confusion(ConfusionMatrix& cm, std::span<const std::int32_t> pred,
                          std::span<const std::int32_t> gt, std::int32_t ignore_label) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("accumulate_confusion: " + std::to_string(pred.size()) +
                                " predictions for " + std::to_string(gt.size()) + " labels");
  }
  const Index K = cm.num_classes;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore_label) continue;
    if (gt[i] < 0 || gt[i] >= K || pred[i] < 0 || pred[i] >= K) {
      throw std::out_of_range("accumulate_confusion: pair (" + std::to_string(gt[i]) + ", " +
                              std::to_string(pred[i]) + ") outside [0, " + std::to_string(K) + ")");
    }
    ++cm.counts[static_cast<std::size_t>(gt[i] * K + pred[i])];
  }
}

IouReport miou(const ConfusionMatrix& cm) {
  const Index K = cm.num_classes;
  IouReport out;
  out.per_class.assign(static_cast<std::size_t>(K), std::numeric_limits<double>::quiet_NaN());
  double sum = 0;
  Index present = 0;
  for (Index c = 0; c < K; ++c) {
    std::int64_t row = 0, col = 0;
    for (Index j = 0; j < K; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::int64_t inter = cm.at(c, c);
    const std::int64_t uni = row + col - inter;
    if (uni == 0) continue;
    const double iou = static_cast<double>(inter) / static_cast<double>(uni);
    out.per_class[static_cast<std::size_t>(c)] = iou;
    sum += iou;
    ++present;
  }
  if (present == 0) throw std::domain_error("miou: every class has an empty union");
  out.mean = sum / static_cast<double>(present);
  return out;
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  std::int64_t diag = 0;
  for (Index c = 0; c < cm.num_classes; ++c) diag += cm.at(c, c);
  const std::int64_t total = cm.total();
  if (total == 0) throw std::domain_error("pixel_accuracy: no evaluated pixels");
  return static_cast<double>(diag) / static_cast<double>(total);
}

Extent short_edge_extent(Index height, Index width, double short_edge) {
  const double s = short_edge / static_cast<double>(std::min(height, width));
  return {std::max<Index>(1, std::llround(static_cast<double>(height) * s)),
          std::max<Index>(1, std::llround(static_cast<double>(width) * s))};
}

namespace {

template <typename T>
Tensor<T> flip_tensor_w(const Tensor<T>& x) {
  const Index B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(x.size()));
  Index o = 0;
  for (Index b = 0; b < B; ++b)
    for (Index h = 0; h < H; ++h)
      for (Index w = 0; w < W; ++w)
        for (Index c = 0; c < C; ++c, ++o) {
          (*index)[static_cast<std::size_t>(o)] = ((b * H + h) * W + (W - 1 - w)) * C + c;
        }
  return gather(x, IndexMap(index), x.shape());
}

// Class probabilities of one resized (and optionally mirrored) view,
// resampled to the input extents.
template <typename T>
Tensor<T> view_probabilities(const SeMaskModel<T>& model, const Image& normalized, Extent size,
                             bool mirrored) {
  Image view = resize_image(normalized, size.height, size.width);
  if (mirrored) view = flip_horizontal(view);
  const Tensor<T> logits = model.forward(to_tensor<T>(std::span<const Image>(&view, 1))).logits;
  Tensor<T> probs = softmax(logits, -1);
  if (mirrored) probs = flip_tensor_w(probs);
  if (size.height != normalized.height || size.width != normalized.width) {
    probs = resize_bilinear(probs, normalized.height, normalized.width);
  }
  return probs;
}

}  // namespace

template <typename T>
LabelMap infer_multiscale(const SeMaskModel<T>& model, const Image& image, Index train_res,
                          std::span<const double> scales, bool flip) {
  if (scales.empty()) throw std::invalid_argument("infer_multiscale: no scales");
  NoGradGuard guard;
  const Image normalized = normalize(image);
  Tensor<T> total;
  for (const double s : scales) {
    if (!(s > 0)) throw std::invalid_argument("infer_multiscale: scale must be positive");
    const Extent size = short_edge_extent(image.height, image.width, s * static_cast<double>(train_res));
    for (int m = 0; m < (flip ? 2 : 1); ++m) {
      const Tensor<T> p = view_probabilities(model, normalized, size, m == 1);
      total = total.defined() ? add(total, p) : p;
    }
  }
  // The argmax of the sum equals the argmax of the mean.
  return argmax_labels(total);
}

template <typename T>
LabelMap infer_single(const SeMaskModel<T>& model, const Image& image, Index train_res) {
  const double one = 1.0;
  return infer_multiscale(model, image, train_res, std::span<const double>(&one, 1), false);
}

template <typename T>
ConfusionMatrix evaluate(const SeMaskModel<T>& model, const Dataset& data,
                         const EvalOptions& options) {
  ConfusionMatrix cm(model.config().encoder.num_classes);
  for (Index i = 0; i < data.size(); ++i) {
    const Sample s = data.get(i);
    const LabelMap pred =
        options.scales.empty()
            ? infer_single(model, s.image, options.train_res)
            : infer_multiscale(model, s.image, options.train_res, options.scales, options.flip);
    accumulate_confusion(cm, pred.labels, s.mask.labels, kIgnoreLabel);
  }
  return cm;
}

// ---------------------------------------------------------------------------
// Feature similarity

namespace {

double cosine(const float* a, const float* b, Index n, double na2, double nb2) {
  if (na2 == 0.0 || nb2 == 0.0) return na2 == nb2 ? 1.0 : 0.0;
  double dot = 0;
  for (Index c = 0; c < n; ++c) dot += static_cast<double>(a[c]) * static_cast<double>(b[c]);
  return dot / std::sqrt(na2 * nb2);
}

std::vector<double> squared_norms(std::span<const float> f, Index positions, Index channels) {
  std::vector<double> out(static_cast<std::size_t>(positions));
  for (Index p = 0; p < positions; ++p) {
    double s = 0;
    for (Index c = 0; c < channels; ++c) {
      const double v = f[static_cast<std::size_t>(p * channels + c)];
      s += v * v;
    }
    out[static_cast<std::size_t>(p)] = s;
  }
  return out;
}

}  // namespace

SimilarityMap cosine_similarity_map(std::span<const float> features, Index height, Index width,
                                    Index channels, Index h, Index w) {
  if (static_cast<Index>(features.size()) != height * width * channels) {
    throw ShapeError("cosine_similarity_map: feature storage does not match extents");
  }
  if (h < 0 || h >= height || w < 0 || w >= width) {
    throw std::out_of_range("similarity pixel (" + std::to_string(h) + "," + std::to_string(w) +
                            ") outside " + std::to_string(height) + "x" + std::to_string(width));
  }
  const std::vector<double> norms = squared_norms(features, height * width, channels);
  SimilarityMap out{height, width, std::vector<double>(static_cast<std::size_t>(height * width))};
  const Index target = h * width + w;
  const float* t = features.data() + target * channels;
  for (Index p = 0; p < height * width; ++p) {
    out.values[static_cast<std::size_t>(p)] =
        p == target ? cosine(t, t, channels, norms[static_cast<std::size_t>(p)],
                             norms[static_cast<std::size_t>(p)])
                    : cosine(t, features.data() + p * channels, channels,
                             norms[static_cast<std::size_t>(target)],
                             norms[static_cast<std::size_t>(p)]);
  }
  return out;
}

template <typename T>
SimilarityMap similarity_map(const SeMaskModel<T>& model, const Image& image, int stage, Index h,
                             Index w, FeatureSide which) {
  const int stages = model.config().encoder.num_stages();
  if (stage < 1 || stage > stages) {
    throw std::out_of_range("similarity stage " + std::to_string(stage) + " outside [1, " +
                            std::to_string(stages) + "]");
  }
  NoGradGuard guard;
  const Image normalized = normalize(image);
  const ModelOutput<T> out = model.forward(to_tensor<T>(std::span<const Image>(&normalized, 1)));
  const StageOutput<T>& s = out.stages[static_cast<std::size_t>(stage - 1)];
  const Tensor<T>& f = which == FeatureSide::kPre ? s.pre : s.post;
  std::vector<float> values(f.data().begin(), f.data().end());
  return cosine_similarity_map(values, f.dim(1), f.dim(2), f.dim(3), h, w);
}

double within_class_similarity(std::span<const float> features, const LabelMap& labels,
                               Index channels) {
  const Index n = labels.height * labels.width;
  if (static_cast<Index>(features.size()) != n * channels) {
    throw ShapeError("within_class_similarity: feature storage does not match the label map");
  }
  const std::vector<double> norms = squared_norms(features, n, channels);
  std::vector<std::vector<Index>> members;
  for (Index p = 0; p < n; ++p) {
    const std::int32_t l = labels.labels[static_cast<std::size_t>(p)];
    if (l == kIgnoreLabel || l < 0) continue;
    if (static_cast<std::size_t>(l) >= members.size()) members.resize(static_cast<std::size_t>(l) + 1);
    members[static_cast<std::size_t>(l)].push_back(p);
  }
  double sum = 0;
  Index classes = 0;
  for (const std::vector<Index>& m : members) {
    if (m.size() < 2) continue;
    double s = 0;
    Index pairs = 0;
    for (std::size_t i = 0; i < m.size(); ++i)
      for (std::size_t j = i + 1; j < m.size(); ++j, ++pairs) {
        s += cosine(features.data() + m[i] * channels, features.data() + m[j] * channels, channels,
                    norms[static_cast<std::size_t>(m[i])], norms[static_cast<std::size_t>(m[j])]);
      }
    sum += s / static_cast<double>(pairs);
    ++classes;
  }
  if (classes == 0) throw std::domain_error("within_class_similarity: no class has two pixels");
  return sum / static_cast<double>(classes);
}

#define SEMASK_INSTANTIATE_EVAL(T)                                                              \
  template Tensor<T> to_tensor(std::span<const Image>);                                         \
  template LabelMap argmax_labels(const Tensor<T>&);                                            \
  template LabelMap infer_single(const SeMaskModel<T>&, const Image&, Index);                   \
  template LabelMap infer_multiscale(const SeMaskModel<T>&, const Image&, Index,                \
                                     std::span<const double>, bool);                            \
  template ConfusionMatrix evaluate(const SeMaskModel<T>&, const Dataset&, const EvalOptions&); \
  template SimilarityMap similarity_map(const SeMaskModel<T>&, const Image&, int, Index, Index, \
                                        FeatureSide);

SEMASK_INSTANTIATE_EVAL(float)
SEMASK_INSTANTIATE_EVAL(double)

#undef SEMASK_INSTANTIATE_EVAL

}  // namespace semask
