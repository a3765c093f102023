// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include <unistd.h>

#include "doctest.h"
#include "semask/data_eval.hpp"
#include "semask/image_io.hpp"
#include "test_util.hpp"

using namespace semask;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("semask_test_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::int32_t> random_labels(Rng& rng, Index n, Index K, double ignore_rate) {
  std::vector<std::int32_t> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.bernoulli(ignore_rate) ? kIgnoreLabel : static_cast<std::int32_t>(rng.below(K));
  return v;
}

SeMaskModel<float> toy_model(std::uint64_t seed, bool semantic = true) {
  ModelConfig cfg = model_preset("toy", 4);
  if (!semantic) cfg = without_semantic_layers(cfg);
  SeMaskModel<float> m(cfg);
  m.init(seed);
  return m;
}

}  // namespace

TEST_CASE("confusion matrix and mIoU match a brute-force tally") {
  Rng rng(100);
  const Index K = 5;
  ConfusionMatrix running(K);
  std::vector<std::int64_t> inter(K, 0), uni(K, 0);
  std::vector<std::vector<std::int32_t>> all_p, all_g;
  for (int m = 0; m < 100; ++m) {
    const auto gt = random_labels(rng, 256, K, 0.1);
    const auto pred = random_labels(rng, 256, K, 0.0);
    ConfusionMatrix cm(K);
    accumulate_confusion(cm, pred, gt, kIgnoreLabel);
    for (Index a = 0; a < K; ++a)
      for (Index b = 0; b < K; ++b) {
        std::int64_t n = 0;
        for (std::size_t i = 0; i < gt.size(); ++i) n += gt[i] == a && pred[i] == b;
        CHECK(cm.at(a, b) == n);
      }
    running += cm;
    all_p.push_back(pred);
    all_g.push_back(gt);
  }
  for (Index c = 0; c < K; ++c) {
    for (std::size_t m = 0; m < all_g.size(); ++m)
      for (std::size_t i = 0; i < 256; ++i) {
        const auto g = all_g[m][i], p = all_p[m][i];
        if (g == kIgnoreLabel) continue;
        inter[static_cast<std::size_t>(c)] += g == c && p == c;
        uni[static_cast<std::size_t>(c)] += g == c || p == c;
      }
  }
  const IouReport r = miou(running);
  double mean = 0;
  for (Index c = 0; c < K; ++c) {
    const double iou = static_cast<double>(inter[static_cast<std::size_t>(c)]) / static_cast<double>(uni[static_cast<std::size_t>(c)]);
    CHECK(r.per_class[static_cast<std::size_t>(c)] == iou);
    mean += iou;
  }
  CHECK(r.mean == mean / K);
  std::int64_t correct = 0, counted = 0;
  for (std::size_t m = 0; m < all_g.size(); ++m)
    for (std::size_t i = 0; i < 256; ++i) {
      if (all_g[m][i] == kIgnoreLabel) continue;
      ++counted;
      correct += all_g[m][i] == all_p[m][i];
    }
  CHECK(running.total() == counted);
  CHECK(pixel_accuracy(running) == static_cast<double>(correct) / static_cast<double>(counted));
}

TEST_CASE("mIoU hand cases") {
  ConfusionMatrix cm(2);
  const std::vector<std::int32_t> gt = {0, 0}, pred = {0, 1};
  accumulate_confusion(cm, pred, gt, kIgnoreLabel);
  const IouReport r = miou(cm);
  CHECK(r.per_class == std::vector<double>{0.5, 0.0});
  CHECK(r.mean == 0.25);
  // A class absent from both masks is left out of the mean.
  ConfusionMatrix three(3);
  const std::vector<std::int32_t> g3 = {0, 1, 1}, p3 = {0, 1, 1};
  accumulate_confusion(three, p3, g3, kIgnoreLabel);
  const IouReport r3 = miou(three);
  CHECK(std::isnan(r3.per_class[2]));
  CHECK(r3.mean == 1.0);
  CHECK_THROWS_AS(miou(ConfusionMatrix(3)), std::domain_error);
  ConfusionMatrix bad(2);
  const std::vector<std::int32_t> g4 = {0, 2}, p4 = {0, 0};
  CHECK_THROWS_AS(accumulate_confusion(bad, p4, g4, kIgnoreLabel), std::out_of_range);
}

TEST_CASE("confusion counts are additive and order-free") {
  Rng rng(3);
  const auto g = random_labels(rng, 200, 4, 0.2), p = random_labels(rng, 200, 4, 0.0);
  ConfusionMatrix whole(4), halves(4), first(4), second(4), shuffled(4);
  accumulate_confusion(whole, p, g, kIgnoreLabel);
  accumulate_confusion(first, std::span(p).first(80), std::span(g).first(80), kIgnoreLabel);
  accumulate_confusion(second, std::span(p).subspan(80), std::span(g).subspan(80), kIgnoreLabel);
  halves += first;
  halves += second;
  CHECK(halves == whole);
  std::vector<std::int32_t> pr(p.rbegin(), p.rend()), gr(g.rbegin(), g.rend());
  accumulate_confusion(shuffled, pr, gr, kIgnoreLabel);
  CHECK(shuffled == whole);
  CHECK(miou(shuffled).mean == miou(whole).mean);
}

TEST_CASE("synthetic shapes are deterministic and well formed") {
  const auto a = synth_shapes(6, 32, 40, 5, 7), b = synth_shapes(6, 32, 40, 5, 7);
  const auto c = synth_shapes(6, 32, 40, 5, 8);
  REQUIRE(a.size() == 6);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].mask == b[i].mask);
    if (!(a[i].image == c[i].image)) differs = true;
    CHECK(a[i].image.height == 32);
    CHECK(a[i].image.width == 40);
    std::set<std::int32_t> seen(a[i].mask.labels.begin(), a[i].mask.labels.end());
    CHECK(seen.count(0) == 1);
    CHECK(seen.size() >= 2);
    for (const auto y : seen) CHECK((y >= 0 && y < 5));
    for (const float v : a[i].image.pixels) CHECK((v >= 0.0f && v <= 1.0f));
    CHECK_NOTHROW(validate_sample(a[i], 5, "x"));
  }
  CHECK(differs);
  CHECK(a[0].name == "synth_0000");
  CHECK(a[5].name == "synth_0005");
  // Over a 16-image corpus every foreground class appears.
  std::set<std::int32_t> all;
  for (const Sample& s : synth_shapes(16, 64, 64, 4, 7)) all.insert(s.mask.labels.begin(), s.mask.labels.end());
  CHECK(all == std::set<std::int32_t>{0, 1, 2, 3});
  CHECK_THROWS_AS(synth_shapes(2, 32, 32, 1, 0), std::invalid_argument);
}

TEST_CASE("png round trips") {
  TempDir dir("png");
  const Sample s = synth_shapes(1, 20, 24, 6, 1)[0];
  write_png_rgb((dir.path / "img.png").string(), s.image);
  write_png_labels((dir.path / "mask.png").string(), s.mask);
  const Image img = read_png_rgb((dir.path / "img.png").string());
  CHECK(img.height == 20);
  CHECK(img.width == 24);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(img.pixels[i] - s.image.pixels[i]) <= 0.5f / 255.0f + 1e-6f);
  CHECK(read_png_labels((dir.path / "mask.png").string()) == s.mask);
  CHECK_THROWS_AS(read_png_labels((dir.path / "img.png").string()), ImageIoError);
  CHECK_THROWS_AS(read_png_rgb((dir.path / "missing.png").string()), ImageIoError);
}

TEST_CASE("folder datasets load lazily and report bad inputs") {
  TempDir dir("data");
  const auto samples = synth_shapes(3, 16, 16, 4, 2);
  write_dataset(dir.path.string(), samples);
  const Dataset d = Dataset::load(dir.path.string(), 4);
  CHECK(d.size() == 3);
  CHECK(d.name(1) == "synth_0001");
  CHECK(d.get(2).mask == samples[2].mask);
  CHECK_THROWS_AS(d.get(3), std::out_of_range);

  CHECK_THROWS_WITH_AS(Dataset::load(dir.path.string(), 2), doctest::Contains("synth_"), DatasetError);
  LabelMap bad = samples[0].mask;
  bad.at(0, 0) = 9;
  write_png_labels((dir.path / "masks" / "synth_0000.png").string(), bad);
  CHECK_THROWS_WITH_AS(Dataset::load(dir.path.string(), 4), doctest::Contains("synth_0000"), DatasetError);
  fs::remove(dir.path / "masks" / "synth_0000.png");
  CHECK_THROWS_WITH_AS(Dataset::load(dir.path.string(), 4), doctest::Contains("missing mask"), DatasetError);
  CHECK_THROWS_AS(Dataset::load((dir.path / "nowhere").string(), 4), DatasetError);
  TempDir empty("empty");
  fs::create_directories(empty.path / "images");
  fs::create_directories(empty.path / "masks");
  CHECK_THROWS_WITH_AS(Dataset::load(empty.path.string(), 4), doctest::Contains("no samples"), DatasetError);
  CHECK_THROWS_AS(Dataset::in_memory({}, 4), DatasetError);
}

TEST_CASE("pixel helpers") {
  Image img = Image::zeros(2, 3);
  img.at(1, 2, 0) = 1.0f;
  img.at(0, 0, 2) = 0.5f;
  const Image n = normalize(img);
  CHECK(n.at(1, 2, 0) == doctest::Approx((1.0 - 0.485) / 0.229).epsilon(1e-6));
  CHECK(n.at(0, 0, 2) == doctest::Approx((0.5 - 0.406) / 0.225).epsilon(1e-6));
  CHECK(n.at(0, 1, 1) == doctest::Approx(-0.456 / 0.224).epsilon(1e-6));
  CHECK(flip_horizontal(flip_horizontal(img)) == img);
  CHECK(flip_horizontal(img).at(1, 0, 0) == 1.0f);

  LabelMap l = LabelMap::filled(2, 2, 0);
  l.at(0, 1) = 1;
  l.at(1, 0) = 2;
  l.at(1, 1) = 3;
  const LabelMap up = resize_labels(l, 4, 4);
  for (Index h = 0; h < 4; ++h)
    for (Index w = 0; w < 4; ++w) CHECK(up.at(h, w) == l.at(h / 2, w / 2));
  CHECK(resize_labels(up, 2, 2) == l);
  const LabelMap odd = resize_labels(l, 3, 5);
  for (const auto y : odd.labels) CHECK((y >= 0 && y <= 3));

  const Tensor<float> scores({1, 1, 3, 3}, {0.2f, 0.2f, 0.1f, 0.0f, 0.5f, 0.5f, 1.0f, 1.0f, 1.0f});
  CHECK(argmax_labels(scores).labels == std::vector<std::int32_t>{0, 1, 0});

  CHECK(short_edge_extent(64, 96, 32) == Extent{32, 48});
  CHECK(short_edge_extent(100, 50, 64) == Extent{128, 64});
  CHECK(short_edge_extent(64, 64, 96) == Extent{96, 96});
}

TEST_CASE("single-scale inference equals multi-scale at scale one") {
  const SeMaskModel<float> model = toy_model(5);
  for (const Sample& s : synth_shapes(3, 48, 40, 4, 11)) {
    const std::vector<double> one = {1.0};
    const LabelMap a = infer_single(model, s.image, 48);
    const LabelMap b = infer_multiscale(model, s.image, 48, one, false);
    CHECK(a == b);
    CHECK(a.height == 48);
    CHECK(a.width == 40);
    const std::vector<double> many = {0.5, 1.0, 1.75};
    const LabelMap c = infer_multiscale(model, s.image, 32, many, true);
    CHECK(c.height == 48);
    CHECK(c.width == 40);
    for (const auto y : c.labels) CHECK((y >= 0 && y < 4));
  }
  const std::vector<double> none;
  CHECK_THROWS_AS(infer_multiscale(model, Image::zeros(16, 16), 16, none, false), std::invalid_argument);
}

TEST_CASE("evaluation accumulates per-sample predictions") {
  const SeMaskModel<float> model = toy_model(6);
  const Dataset data = Dataset::in_memory(synth_shapes(3, 32, 32, 4, 12), 4);
  const ConfusionMatrix cm = evaluate(model, data, EvalOptions{32, {}, false});
  ConfusionMatrix manual(4);
  for (Index i = 0; i < data.size(); ++i) {
    const Sample s = data.get(i);
    accumulate_confusion(manual, infer_single(model, s.image, 32).labels, s.mask.labels, kIgnoreLabel);
  }
  CHECK(cm == manual);
  CHECK(cm.total() == 3 * 32 * 32);
  CHECK(evaluate(model, data, EvalOptions{32, {1.0}, false}) == cm);
}

TEST_CASE("similarity maps") {
  const SeMaskModel<float> model = toy_model(7);
  const Sample s = synth_shapes(1, 64, 64, 4, 13)[0];
  for (int stage = 1; stage <= 4; ++stage) {
    const SimilarityMap m = similarity_map(model, s.image, stage, 1, 1, FeatureSide::kPost);
    CHECK(m.height == 64 >> (stage + 1));
    CHECK(m.values[static_cast<std::size_t>(m.width + 1)] == 1.0);
    for (const double v : m.values) CHECK((v >= -1.0 - 1e-12 && v <= 1.0 + 1e-12));
  }
  CHECK_THROWS_AS(similarity_map(model, s.image, 5, 0, 0, FeatureSide::kPre), std::out_of_range);
  CHECK_THROWS_AS(similarity_map(model, s.image, 1, 16, 0, FeatureSide::kPre), std::out_of_range);

  SeMaskModel<float> zero = toy_model(7);
  for (auto& [name, t] : zero.parameters()) {
    if (name.ends_with(".lambda")) Tensor<float>(t).mutable_data()[0] = 0.0f;
  }
  for (int stage = 1; stage <= 4; ++stage) {
    const SimilarityMap pre = similarity_map(zero, s.image, stage, 1, 0, FeatureSide::kPre);
    const SimilarityMap post = similarity_map(zero, s.image, stage, 1, 0, FeatureSide::kPost);
    CHECK(pre.values == post.values);
  }
}

TEST_CASE("cosine similarity conventions") {
  // Three positions: a vector, its double, and zero.
  const std::vector<float> f = {1, 2, 2, 4, 0, 0, -1, -2};
  const SimilarityMap m = cosine_similarity_map(f, 1, 4, 2, 0, 0);
  CHECK(m.values[0] == 1.0);
  CHECK(m.values[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(m.values[2] == 0.0);
  CHECK(m.values[3] == doctest::Approx(-1.0).epsilon(1e-15));
  const SimilarityMap z = cosine_similarity_map(f, 1, 4, 2, 0, 2);
  CHECK(z.values[2] == 1.0);
  CHECK(z.values[0] == 0.0);

  LabelMap labels = LabelMap::filled(1, 4, 0);
  labels.at(0, 1) = 1;
  labels.at(0, 2) = kIgnoreLabel;
  labels.at(0, 3) = 2;
  CHECK_THROWS_AS(within_class_similarity(f, labels, 2), std::domain_error);
  labels.at(0, 1) = 0;
  labels.at(0, 3) = 0;
  // Pairs among positions 0, 1, 3: (1), (-1), (-1).
  CHECK(within_class_similarity(f, labels, 2) == doctest::Approx(-1.0 / 3.0).epsilon(1e-14));
}
