// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance report: one line per criterion check. Exits nonzero if any gated
// check fails; soft checks are printed but never change the status.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "semask/checkpoint.hpp"
#include "semask/cli.hpp"
#include "semask/data_eval.hpp"
#include "semask/encoder.hpp"
#include "semask/gradcheck.hpp"
#include "semask/kernels.hpp"
#include "semask/semask_block.hpp"
#include "semask/training.hpp"
#include "semask/window_attention.hpp"
#include "test_util.hpp"

using namespace semask;
using namespace semask::testing;
using D = Tensor<double>;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int g_failed = 0;

template <typename... A>
std::string fmt(const char* format, A... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

void report(const std::string& id, bool pass, const std::string& detail) {
  std::printf("[%s] %-4s %s\n", pass ? "PASS" : "FAIL", id.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failed;
}

void report_soft(const std::string& id, bool pass, const std::string& detail) {
  std::printf("[%s] %-4s %s (soft, not gated)\n", pass ? "PASS" : "MISS", id.c_str(), detail.c_str());
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
void zero_lambdas(const SeMaskModel<T>& model) {
  for (auto& [name, t] : model.parameters()) {
    if (ends_with(name, ".lambda")) Tensor<T>(t).mutable_data()[0] = T(0);
  }
}

template <typename T>
void copy_shared(const SeMaskModel<T>& from, const SeMaskModel<T>& to) {
  const auto src = from.parameters();
  for (auto& [name, t] : to.parameters()) {
    const auto it = std::find_if(src.begin(), src.end(), [&](const auto& p) { return p.first == name; });
    std::copy(it->second.data().begin(), it->second.data().end(), Tensor<T>(t).mutable_data().begin());
  }
}

Tensor<float> image_batch(const std::vector<Sample>& samples) {
  std::vector<Image> normalized;
  for (const Sample& s : samples) normalized.push_back(normalize(s.image));
  return to_tensor<float>(std::span<const Image>(normalized));
}

std::vector<double> slice(const D& t, Index offset, Index count) {
  const auto d = t.data();
  return {d.begin() + offset, d.begin() + offset + count};
}

std::vector<double> vec_linear(const std::vector<double>& x, const LinearParams<double>& p) {
  const Index in = p.weight.dim(0), out = p.weight.dim(1);
  std::vector<double> y(static_cast<std::size_t>(out));
  for (Index o = 0; o < out; ++o) {
    double acc = p.bias.defined() ? p.bias.data()[static_cast<std::size_t>(o)] : 0.0;
    for (Index i = 0; i < in; ++i) acc += x[static_cast<std::size_t>(i)] * p.weight.at({i, o});
    y[static_cast<std::size_t>(o)] = acc;
  }
  return y;
}

// Finite differences on a few random coordinates of every tensor.
GradCheckResult sampled_gradcheck(const std::function<D()>& f, const std::vector<NamedTensor<double>>& params,
                                  Index per_tensor, double h, std::uint64_t seed) {
  for (const auto& [name, p] : params) {
    D(p).set_tracked(true);
    D(p).zero_grad();
  }
  Tape<double>::current().clear();
  backward(f());
  GradCheckResult r;
  NoGradGuard guard;
  const Rng root(seed);
  for (const auto& [name, p] : params) {
    Rng rng = root.split(name);
    const std::vector<double> grad = p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                                  : std::vector<double>(static_cast<std::size_t>(p.size()), 0.0);
    for (Index s = 0; s < std::min(per_tensor, p.size()); ++s) {
      const auto i = static_cast<std::size_t>(rng.below(p.size()));
      double& x = D(p).mutable_data()[i];
      const double orig = x;
      x = orig + h;
      const double fp = f().item();
      x = orig - h;
      const double fm = f().item();
      x = orig;
      const double a = grad[i], n = (fp - fm) / (2 * h);
      const double err = std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n));
      ++r.coordinates;
      if (err >= r.max_rel_error) {
        r.max_rel_error = err;
        r.analytic = a;
        r.numeric = n;
        r.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

void parameter_counts() {
  const std::pair<const char*, double> targets[] = {
      {"tiny", 28e6}, {"small", 50e6}, {"base", 88e6}, {"large", 197e6}};
  for (const auto& [name, target] : targets) {
    const ModelConfig cfg = model_preset(name, 150);
    const double n = static_cast<double>(count_params(cfg.encoder, cfg.decoder).backbone());
    std::ostringstream out, err;
    run_cli({"count", "--preset", name}, out, err);
    const bool printed = out.str().find(fmt("%.3f", n / 1e6)) != std::string::npos;
    const double rel = n / target - 1.0;
    report("1", std::abs(rel) <= 0.05 && printed,
           fmt("%s backbone %.3fM vs %.0fM (%+.2f%%, tolerance 5%%)%s", name, n / 1e6, target / 1e6,
               100 * rel, printed ? "" : ", missing from count output"));
  }
}

void semantic_overhead() {
  const ModelConfig cfg = model_preset("tiny", 150);
  const ParamBreakdown p = count_params(cfg.encoder, cfg.decoder);
  const double added = static_cast<double>(p.semantic_total());
  report("2", added >= 1.0e6 && added <= 3.0e6,
         fmt("tiny K=150 semantic layers add %.3fM parameters (range 1.0M to 3.0M)", added / 1e6));
  const FlopBreakdown f = count_flops(cfg.encoder, cfg.decoder, 512, 512);
  const double share = f.semantic_total() / f.backbone();
  report("2", share < 0.10,
         fmt("semantic FLOPs at 512x512 are %.2f%% of backbone FLOPs (%.2f of %.2f GFLOPs, limit 10%%)",
             100 * share, 2 * f.semantic_total() / 1e9, 2 * f.backbone() / 1e9));
}

void gradient_suite() {
  const auto t0 = Clock::now();
  const double h = 1e-5;
  struct Prim {
    std::string name;
    std::function<GradCheckResult()> run;
  };
  auto unary = [](std::function<D(const D&)> op, Shape shape, std::uint64_t seed) {
    return [=] {
      return check_gradients([&](const D& x) { return weighted_sum(op(x), seed + 1); },
                             random_tensor<double>(shape, seed));
    };
  };
  auto binary = [h](std::function<D(const D&, const D&)> op, Shape sa, Shape sb, std::uint64_t seed) {
    return [=] {
      D a = random_tensor<double>(sa, seed), b = random_tensor<double>(sb, seed + 1);
      return check_gradients([&] { return weighted_sum(op(a, b), seed + 2); }, {{"a", a}, {"b", b}}, h);
    };
  };
  const std::vector<std::int32_t> ce_labels = {0, 3, 255, 1, 2, 2};
  auto gather_index = std::make_shared<const std::vector<Index>>(std::vector<Index>{5, -1, 0, 2, 2, 3});
  std::vector<Prim> prims = {
      {"add (broadcast)", binary([](const D& a, const D& b) { return add(a, b); }, {2, 3, 4}, {4}, 1)},
      {"sub (broadcast)", binary([](const D& a, const D& b) { return sub(a, b); }, {2, 3, 4}, {3, 1}, 4)},
      {"mul (broadcast)", binary([](const D& a, const D& b) { return mul(a, b); }, {2, 3, 4}, {2, 1, 4}, 7)},
      {"scale", unary([](const D& x) { return scale(x, 0.7); }, {3, 4}, 10)},
      {"sum", [] { return check_gradients([](const D& x) { return sum(x); }, random_tensor<double>({3, 4}, 13)); }},
      {"mean", [] { return check_gradients([](const D& x) { return mean(x); }, random_tensor<double>({3, 4}, 14)); }},
      {"matmul", binary([](const D& a, const D& b) { return matmul(a, b); }, {2, 3, 4}, {2, 4, 5}, 15)},
      {"matmul_nt", binary([](const D& a, const D& b) { return matmul_nt(a, b); }, {2, 3, 4}, {2, 5, 4}, 18)},
      {"softmax axis -1", unary([](const D& x) { return softmax(x, -1); }, {3, 4, 5}, 21)},
      {"softmax axis 0", unary([](const D& x) { return softmax(x, 0); }, {3, 4, 5}, 23)},
      {"softmax axis 1", unary([](const D& x) { return softmax(x, 1); }, {3, 4, 5}, 25)},
      {"gelu", unary([](const D& x) { return gelu(x); }, {3, 7}, 27)},
      {"layer_norm",
       [h] {
         D x = random_tensor<double>({2, 3, 6}, 29), g = random_tensor<double>({6}, 30, 0.5, 1.5),
           b = random_tensor<double>({6}, 31);
         return check_gradients([&] { return weighted_sum(layer_norm(x, g, b), 32); },
                                {{"x", x}, {"gain", g}, {"bias", b}}, h);
       }},
      {"linear",
       [h] {
         D x = random_tensor<double>({2, 3, 4}, 33), w = random_tensor<double>({4, 5}, 34),
           b = random_tensor<double>({5}, 35);
         return check_gradients([&] { return weighted_sum(linear(x, w, b), 36); },
                                {{"x", x}, {"weight", w}, {"bias", b}}, h);
       }},
      {"conv2d 3x3 same",
       [h] {
         D x = random_tensor<double>({1, 5, 6, 3}, 37), k = random_tensor<double>({3, 3, 3, 2}, 38),
           b = random_tensor<double>({2}, 39);
         return check_gradients([&] { return weighted_sum(conv2d(x, k, b, Padding::kSame), 40); },
                                {{"x", x}, {"kernel", k}, {"bias", b}}, h);
       }},
      {"conv2d 3x5 valid",
       [h] {
         D x = random_tensor<double>({2, 5, 6, 2}, 41), k = random_tensor<double>({3, 5, 2, 3}, 42);
         return check_gradients([&] { return weighted_sum(conv2d(x, k, D{}, Padding::kValid), 43); },
                                {{"x", x}, {"kernel", k}}, h);
       }},
      {"conv2d 1x1",
       [h] {
         D x = random_tensor<double>({1, 4, 4, 3}, 44), k = random_tensor<double>({1, 1, 3, 4}, 45),
           b = random_tensor<double>({4}, 46);
         return check_gradients([&] { return weighted_sum(conv2d(x, k, b, Padding::kSame), 47); },
                                {{"x", x}, {"kernel", k}, {"bias", b}}, h);
       }},
      {"resize_bilinear up", unary([](const D& x) { return resize_bilinear(x, 7, 9); }, {1, 3, 4, 2}, 48)},
      {"resize_bilinear down", unary([](const D& x) { return resize_bilinear(x, 2, 3); }, {2, 5, 7, 2}, 50)},
      {"gather", unary([gather_index](const D& x) { return gather(x, gather_index, {2, 3}); }, {6}, 52)},
      {"reshape", unary([](const D& x) { return reshape(x, {4, 6}); }, {2, 3, 4}, 54)},
      {"permute", unary([](const D& x) { return permute(x, {2, 0, 1}); }, {2, 3, 4}, 56)},
      {"crop", unary([](const D& x) { return crop(x, 3, 3); }, {1, 4, 5, 2}, 58)},
      {"pad_spatial", unary([](const D& x) { return pad_spatial(x, 6, 7); }, {1, 4, 5, 2}, 60)},
      {"cross_entropy",
       [ce_labels] {
         return check_gradients([&](const D& x) { return cross_entropy(x, ce_labels, 255); },
                                random_tensor<double>({6, 4}, 62, -2, 2));
       }},
      {"total_loss (main + alpha * prior)",
       [h] {
         D m = random_tensor<double>({1, 2, 3, 3}, 63), p = random_tensor<double>({1, 2, 3, 3}, 64);
         const std::vector<std::int32_t> labels = {0, 1, 2, 255, 1, 0};
         return check_gradients([&] { return total_loss(m, p, labels, 0.4, 255).total; },
                                {{"main", m}, {"prior", p}}, h);
       }},
      {"window_partition/reverse",
       unary([](const D& x) {
         auto [w, grid] = window_partition(x, 3);
         return window_reverse(scale(w, 1.5), grid);
       }, {1, 5, 4, 2}, 65)},
      {"cyclic_shift", unary([](const D& x) { return cyclic_shift(x, 2); }, {1, 5, 4, 2}, 67)},
      {"scaled_dot_attention",
       [h] {
         D q = random_tensor<double>({2, 4, 3}, 69), k = random_tensor<double>({2, 4, 3}, 70),
           v = random_tensor<double>({2, 4, 5}, 71), bias = random_tensor<double>({1, 4, 4}, 72);
         return check_gradients([&] { return weighted_sum(scaled_dot_attention(q, k, v, bias, 0.6), 73); },
                                {{"q", q}, {"k", k}, {"v", v}, {"bias", bias}}, h);
       }},
      {"semask_attention",
       [h] {
         D sq = random_tensor<double>({3, 4, 5}, 74), sk = random_tensor<double>({3, 4, 5}, 75),
           yv = random_tensor<double>({3, 4, 6}, 76);
         return check_gradients([&] { return weighted_sum(semask_attention(sq, sk, yv), 77); },
                                {{"s_q", sq}, {"s_k", sk}, {"y_v", yv}}, h);
       }},
  };
  double worst = 0;
  std::string worst_name;
  for (const Prim& p : prims) {
    const GradCheckResult r = p.run();
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = p.name + " " + r.worst;
    }
    if (r.max_rel_error > kPrimitiveTol) {
      report("3", false, fmt("primitive %s: relative error %.2e at %s", p.name.c_str(), r.max_rel_error, r.worst.c_str()));
    }
  }
  report("3", worst <= kPrimitiveTol,
         fmt("%zu primitives, worst relative error %.2e (%s), tolerance 1e-6", prims.size(), worst,
             worst_name.c_str()));

  {
    const SeMaskModel<double> model(gradcheck_config());
    randomize(model, 81);
    D image = random_tensor<double>({1, 16, 16, 3}, 82);
    Rng rng(83);
    std::vector<std::int32_t> labels(256);
    for (auto& y : labels) y = rng.bernoulli(0.1) ? 255 : static_cast<std::int32_t>(rng.below(3));
    std::vector<NamedTensor<double>> params = model.parameters();
    params.emplace_back("image", image);
    const GradCheckResult r = check_gradients(
        [&] {
          const ModelOutput<double> out = model.forward(image);
          return total_loss(out.logits, out.prior_logits, labels, 0.4, 255).total;
        },
        params, kCompositeStep);
    report("3", r.max_rel_error <= kCompositeTol,
           fmt("full pipeline loss (two-stage model, %lld coordinates, all tensors): worst %.2e at %s, tolerance 1e-4",
               static_cast<long long>(r.coordinates), r.max_rel_error, r.worst.c_str()));
  }
  {
    const SeMaskModel<double> model = [] {
      SeMaskModel<float> f(model_preset("toy", 4));
      f.init(91);
      return f.cast<double>();
    }();
    // Lift biases and tables off zero so every path carries a generic gradient.
    const Rng root(92);
    for (auto& [name, t] : model.parameters()) {
      Rng rng = root.split(name);
      for (double& x : D(t).mutable_data()) x += rng.uniform(-0.05, 0.05);
    }
    D image = random_tensor<double>({1, 64, 64, 3}, 93);
    Rng rng(94);
    std::vector<std::int32_t> labels(64 * 64);
    for (auto& y : labels) y = rng.bernoulli(0.05) ? 255 : static_cast<std::int32_t>(rng.below(4));
    std::vector<NamedTensor<double>> params = model.parameters();
    params.emplace_back("image", image);
    const GradCheckResult r = sampled_gradcheck(
        [&] {
          const ModelOutput<double> out = model.forward(image);
          return total_loss(out.logits, out.prior_logits, labels, 0.4, 255).total;
        },
        params, 3, kCompositeStep, 95);
    report("3", r.max_rel_error <= kCompositeTol,
           fmt("toy preset loss at 64x64 (%lld sampled coordinates over %zu tensors): worst %.2e at %s, tolerance 1e-4",
               static_cast<long long>(r.coordinates), params.size(), r.max_rel_error, r.worst.c_str()));
  }
  const double elapsed = seconds_since(t0);
  report("3", elapsed < 120, fmt("gradient suite runtime %.1f s (limit 120 s)", elapsed));
}

void identities(const std::vector<Sample>& heldout) {
  {
    SeMaskModel<float> semask_model(model_preset("toy", 4));
    semask_model.init(101);
    randomize(semask_model, 102, 0.05);
    zero_lambdas(semask_model);
    const SeMaskModel<float> baseline(without_semantic_layers(semask_model.config()));
    copy_shared(semask_model, baseline);
    const Tensor<float> img = image_batch({heldout[0], heldout[1]});
    NoGradGuard guard;
    const auto a = semask_model.forward(img), b = baseline.forward(img);
    bool same = bit_equal(a.logits, b.logits);
    for (std::size_t s = 0; s < a.stages.size(); ++s) same = same && bit_equal(a.stages[s].post, b.stages[s].post);
    report("4", same, "lambda = 0: all four stage features and main logits bit-identical to the baseline");
  }
  {
    bool ok = true;
    for (const auto& [H, W, M] : {std::tuple<Index, Index, Index>{8, 8, 4}, {5, 7, 3}, {3, 3, 4}, {9, 6, 2}}) {
      const D x = random_tensor<double>({2, H, W, 3}, static_cast<std::uint64_t>(H * 31 + W));
      auto [windows, grid] = window_partition(x, M);
      ok = ok && bit_equal(window_reverse(windows, grid), x);
    }
    report("4", ok, "window partition then reverse reproduces the input bit for bit (4 extents, padded and exact)");
    ok = true;
    const D x = random_tensor<double>({2, 7, 5, 3}, 111);
    for (const Index s : {1, 2, 3, 6}) ok = ok && bit_equal(cyclic_shift(cyclic_shift(x, s), -s), x);
    report("4", ok, "cyclic shift by s then -s reproduces the input bit for bit (s = 1, 2, 3, 6)");
  }
  {
    SeMaskModel<float> model(model_preset("toy", 4));
    model.init(121);
    randomize(model, 122, 0.05);
    bool ok = true;
    const std::vector<double> one = {1.0};
    for (int i = 0; i < 4; ++i) {
      ok = ok && infer_multiscale(model, heldout[static_cast<std::size_t>(i)].image, 64, one, false) ==
                     infer_single(model, heldout[static_cast<std::size_t>(i)].image, 64);
    }
    report("4", ok, "multi-scale inference with scales = [1.0] equals single-scale on 4 images");

    const fs::path path = fs::temp_directory_path() / ("semask_accept_" + std::to_string(::getpid()) + ".smsk");
    save_checkpoint(path.string(), model, 0, 0);
    const SeMaskModel<float> restored = load_checkpoint(path.string()).model();
    fs::remove(path);
    const Tensor<float> img = image_batch({heldout[2]});
    NoGradGuard guard;
    const auto a = model.forward(img), b = restored.forward(img);
    report("4", bit_equal(a.logits, b.logits) && bit_equal(a.prior_logits, b.prior_logits),
           "checkpoint save/load: main and prior logits bit-identical");
  }
  {
    const Dataset data = Dataset::in_memory(synth_shapes(16, 64, 64, 4, 7), 4);
    TrainConfig cfg = TrainConfig::toy();
    cfg.total_iters = 20;
    cfg.warmup_iters = 5;
    std::vector<std::vector<TrainLogRow>> logs;
    for (int run = 0; run < 2; ++run) {
      SeMaskModel<float> model(model_preset("toy", 4));
      model.init(cfg.seed);
      TrainStatus status;
      logs.push_back(train_loop(model, data, cfg, status));
    }
    report("4", logs[0] == logs[1], "two same-seed training runs (20 iterations) log identical loss traces");
  }
}

void oracles() {
  {
    Rng rng(131);
    const Index K = 5;
    bool exact = true;
    ConfusionMatrix total(K);
    std::vector<std::int64_t> inter(K, 0), uni(K, 0);
    for (int m = 0; m < 100; ++m) {
      std::vector<std::int32_t> gt(256), pred(256);
      for (auto& y : gt) y = rng.bernoulli(0.1) ? kIgnoreLabel : static_cast<std::int32_t>(rng.below(K));
      for (auto& y : pred) y = static_cast<std::int32_t>(rng.below(K));
      ConfusionMatrix cm(K);
      accumulate_confusion(cm, pred, gt, kIgnoreLabel);
      for (Index a = 0; a < K; ++a)
        for (Index b = 0; b < K; ++b) {
          std::int64_t n = 0;
          for (std::size_t i = 0; i < 256; ++i) n += gt[i] == a && pred[i] == b;
          exact = exact && cm.at(a, b) == n;
        }
      for (std::size_t i = 0; i < 256; ++i) {
        if (gt[i] == kIgnoreLabel) continue;
        for (Index c = 0; c < K; ++c) {
          inter[static_cast<std::size_t>(c)] += gt[i] == c && pred[i] == c;
          uni[static_cast<std::size_t>(c)] += gt[i] == c || pred[i] == c;
        }
      }
      total += cm;
    }
    const IouReport r = miou(total);
    double mean = 0;
    for (Index c = 0; c < K; ++c) {
      const double iou = static_cast<double>(inter[static_cast<std::size_t>(c)]) /
                         static_cast<double>(uni[static_cast<std::size_t>(c)]);
      exact = exact && r.per_class[static_cast<std::size_t>(c)] == iou;
      mean += iou;
    }
    exact = exact && r.mean == mean / static_cast<double>(K);
    report("5", exact, fmt("confusion matrix and mIoU equal a per-pixel tally on 100 random 16x16 masks (mIoU %.6f)", r.mean));
  }
  {
    double worst = 0;
    for (const auto& [M, heads] : {std::pair<Index, Index>{1, 1}, {1, 2}, {2, 1}, {2, 2}}) {
      const Index C = 4, n = M * M, bw = 3, d = C / heads;
      auto p = SwinBlockParams<double>::zeros(C, heads, M, 2);
      fill_params(p, static_cast<std::uint64_t>(141 + M * 3 + heads));
      const D tokens = random_tensor<double>({bw, n, C}, 142);
      const D y = window_msa(tokens, p, D{}, heads, M);
      const IndexMap rel = relative_position_index(M);
      for (Index w = 0; w < bw; ++w) {
        std::vector<std::vector<double>> qkv;
        for (Index t = 0; t < n; ++t) qkv.push_back(vec_linear(slice(tokens, (w * n + t) * C, C), p.qkv));
        std::vector<double> merged(static_cast<std::size_t>(n * C));
        for (Index h = 0; h < heads; ++h) {
          std::vector<double> q, k, v, bias;
          for (Index t = 0; t < n; ++t)
            for (Index e = 0; e < d; ++e) {
              q.push_back(qkv[static_cast<std::size_t>(t)][static_cast<std::size_t>(h * d + e)]);
              k.push_back(qkv[static_cast<std::size_t>(t)][static_cast<std::size_t>(C + h * d + e)]);
              v.push_back(qkv[static_cast<std::size_t>(t)][static_cast<std::size_t>(2 * C + h * d + e)]);
            }
          for (Index ij = 0; ij < n * n; ++ij) bias.push_back(p.rpe_table.at({(*rel)[static_cast<std::size_t>(ij)], h}));
          const auto o = attention_oracle(q, k, v, n, d, d, 1.0 / std::sqrt(static_cast<double>(d)), bias);
          for (Index t = 0; t < n; ++t)
            for (Index e = 0; e < d; ++e) merged[static_cast<std::size_t>(t * C + h * d + e)] = o[static_cast<std::size_t>(t * d + e)];
        }
        for (Index t = 0; t < n; ++t) {
          const auto expect = vec_linear({merged.begin() + t * C, merged.begin() + (t + 1) * C}, p.proj);
          for (Index c = 0; c < C; ++c) worst = std::max(worst, std::abs(y.at({w, t, c}) - expect[static_cast<std::size_t>(c)]));
        }
      }
    }
    report("5", worst <= 1e-6, fmt("window_msa vs scalar attention, N in {1, 4}, 1 and 2 heads: max error %.2e (limit 1e-6)", worst));

    worst = 0;
    for (Index n = 1; n <= 4; ++n) {
      const D sq = random_tensor<double>({3, n, 5}, 151), sk = random_tensor<double>({3, n, 5}, 152);
      const D yv = random_tensor<double>({3, n, 4}, 153);
      const D y = semask_attention(sq, sk, yv);
      for (Index w = 0; w < 3; ++w) {
        const auto o = attention_oracle(slice(sq, w * n * 5, n * 5), slice(sk, w * n * 5, n * 5),
                                        slice(yv, w * n * 4, n * 4), n, 5, 4, 1.0, {});
        for (Index i = 0; i < n * 4; ++i) {
          worst = std::max(worst, std::abs(y.data()[static_cast<std::size_t>(w * n * 4 + i)] - o[static_cast<std::size_t>(i)]));
        }
      }
    }
    report("5", worst <= 1e-6, fmt("semask_attention vs scalar attention, N = 1..4: max error %.2e (limit 1e-6)", worst));
  }
  {
    D w = random_tensor<double>({3, 4}, 161, -1, 1, true), b = random_tensor<double>({4}, 162, -1, 1, true);
    Rng rng(163);
    std::vector<double> gw, gb;
    for (double& g : w.mutable_grad()) gw.push_back(g = rng.uniform(-2, 2));
    for (double& g : b.mutable_grad()) gb.push_back(g = rng.uniform(-2, 2));
    const std::vector<double> w0(w.data().begin(), w.data().end()), b0(b.data().begin(), b.data().end());
    const std::vector<NamedTensor<double>> params = {{"layer.weight", w}, {"layer.bias", b}};
    AdamWState<double> state;
    const double lr = 0.01, wd = 0.05;
    adamw_step(std::span<const NamedTensor<double>>(params), state, lr, wd);
    auto oracle = [&](double x, double g, bool decay) {
      if (decay) x -= lr * wd * x;
      const double m = 0.1 * g, v = 0.001 * g * g;
      return x - lr * (m / 0.1) / (std::sqrt(v / 0.001) + 1e-8);
    };
    double worst = 0;
    for (std::size_t i = 0; i < w0.size(); ++i) worst = std::max(worst, std::abs(w.data()[i] - oracle(w0[i], gw[i], true)));
    for (std::size_t i = 0; i < b0.size(); ++i) worst = std::max(worst, std::abs(b.data()[i] - oracle(b0[i], gb[i], false)));
    report("5", worst <= 1e-12, fmt("AdamW single step vs scalar oracle (decayed and exempt tensors): max error %.2e (limit 1e-12)", worst));
  }
  {
    TrainConfig cfg;
    cfg.base_lr = 1e-4;
    cfg.total_iters = 80000;
    cfg.warmup_iters = 1500;
    bool exact = true;
    std::string values;
    for (const Index it : {Index{0}, Index{777}, Index{1500}, Index{40000}, Index{79999}}) {
      const double expect = it < 1500 ? 1e-4 * static_cast<double>(it + 1) / 1500.0
                                      : 1e-4 * std::pow(1.0 - static_cast<double>(it) / 80000.0, 0.9);
      exact = exact && lr_at(it, cfg) == expect;
      values += fmt(" %lld:%.6g", static_cast<long long>(it), lr_at(it, cfg));
    }
    report("5", exact, "poly learning rate equals the closed form exactly at 5 iterations:" + values);
  }
}

struct RunResult {
  SeMaskModel<float> model;
  std::vector<TrainLogRow> log;
  double seconds = 0;
};

RunResult train_toy(const Dataset& data, std::uint64_t seed, bool semantic) {
  TrainConfig cfg = TrainConfig::toy();
  cfg.seed = seed;
  ModelConfig mc = model_preset("toy", 4);
  if (!semantic) mc = without_semantic_layers(mc);
  RunResult r{SeMaskModel<float>(mc), {}, 0};
  r.model.init(seed);
  const auto t0 = Clock::now();
  TrainStatus status;
  r.log = train_loop(r.model, data, cfg, status);
  r.seconds = seconds_since(t0);
  return r;
}

double heldout_miou(const SeMaskModel<float>& model, const Dataset& data) {
  return miou(evaluate(model, data, EvalOptions{64, {}, false})).mean;
}

double mean_within_class(const SeMaskModel<float>& model, const Dataset& data, int stage, bool post) {
  double total = 0;
  int used = 0;
  NoGradGuard guard;
  for (Index i = 0; i < data.size(); ++i) {
    const Sample s = data.get(i);
    const auto out = model.forward(image_batch({s}));
    const Tensor<float>& f = post ? out.stages[static_cast<std::size_t>(stage - 1)].post
                                  : out.stages[static_cast<std::size_t>(stage - 1)].pre;
    try {
      total += within_class_similarity(f.data(), resize_labels(s.mask, f.dim(1), f.dim(2)), f.dim(3));
      ++used;
    } catch (const std::domain_error&) {
    }
  }
  return used ? total / used : NAN;
}

}  // namespace

int main() {
  const auto start = Clock::now();
  std::printf("acceptance report (one line per check; soft checks are not gated)\n");
  const std::vector<Sample> heldout_samples = synth_shapes(16, 64, 64, 4, 1007);
  const Dataset heldout = Dataset::in_memory(heldout_samples, 4);

  parameter_counts();
  semantic_overhead();
  gradient_suite();
  identities(heldout_samples);
  oracles();

  // Convergence, single-threaded.
  kernels::set_max_threads(1);
  const Dataset train = Dataset::in_memory(synth_shapes(16, 64, 64, 4, 7), 4);
  const std::uint64_t seeds[] = {TrainConfig::toy().seed, TrainConfig::toy().seed + 1, TrainConfig::toy().seed + 2};
  std::vector<RunResult> semask_runs;
  semask_runs.push_back(train_toy(train, seeds[0], true));
  {
    const RunResult& r = semask_runs[0];
    const ConfusionMatrix cm = evaluate(r.model, train, EvalOptions{64, {}, false});
    const double acc = pixel_accuracy(cm), m = miou(cm).mean;
    double tail = 0;
    for (std::size_t i = r.log.size() - 20; i < r.log.size(); ++i) tail += r.log[i].lt / 20.0;
    report("6", acc >= 0.95, fmt("train pixel accuracy %.4f after %zu iterations (threshold 0.95)", acc, r.log.size()));
    report("6", m >= 0.85, fmt("train mIoU %.4f (threshold 0.85)", m));
    report("6", tail < 0.15,
           fmt("total loss, mean of the last 20 iterations, %.4f (threshold 0.15; first iteration %.4f, ln 4 = %.4f, last %.4f)",
               tail, r.log.front().lt, std::log(4.0), r.log.back().lt));
    report("6", r.seconds < 600, fmt("training runtime %.1f s on 1 thread (limit 600 s)", r.seconds));
  }

  // Direction check against the semantic-layer-free baseline.
  for (int s = 1; s < 3; ++s) semask_runs.push_back(train_toy(train, seeds[s], true));
  double semask_mean = 0, base_mean = 0;
  std::string per_seed;
  for (int s = 0; s < 3; ++s) {
    const RunResult base = train_toy(train, seeds[s], false);
    const double a = heldout_miou(semask_runs[static_cast<std::size_t>(s)].model, heldout);
    const double b = heldout_miou(base.model, heldout);
    semask_mean += a / 3;
    base_mean += b / 3;
    per_seed += fmt(" seed %llu: %.4f vs %.4f;", static_cast<unsigned long long>(seeds[s]), a, b);
  }
  report("7", semask_mean >= base_mean - 0.01,
         fmt("held-out mIoU over 3 seeds, SeMask %.4f vs baseline %.4f (margin -0.01)", semask_mean, base_mean));
  std::printf("       per seed (SeMask vs baseline):%s\n", per_seed.c_str());

  // Similarity analysis.
  {
    bool self_one = true, zero_identical = true;
    int improved = 0;
    std::string detail;
    for (int s = 0; s < 3; ++s) {
      const SeMaskModel<float>& model = semask_runs[static_cast<std::size_t>(s)].model;
      SeMaskModel<float> zero = model.cast<float>();
      zero_lambdas(zero);
      for (int stage = 1; stage <= 4; ++stage) {
        const Extent e = stage_extents(model.config().encoder, 64, 64)[static_cast<std::size_t>(stage - 1)];
        const Index h = e.height / 2, w = e.width / 2;
        for (const FeatureSide side : {FeatureSide::kPre, FeatureSide::kPost}) {
          const SimilarityMap m = similarity_map(model, heldout_samples[0].image, stage, h, w, side);
          self_one = self_one && m.values[static_cast<std::size_t>(h * m.width + w)] == 1.0;
        }
        zero_identical = zero_identical &&
                         similarity_map(zero, heldout_samples[0].image, stage, h, w, FeatureSide::kPre).values ==
                             similarity_map(zero, heldout_samples[0].image, stage, h, w, FeatureSide::kPost).values;
      }
      double pre = 0, post = 0;
      for (const int stage : {3, 4}) {
        pre += mean_within_class(model, heldout, stage, false) / 2;
        post += mean_within_class(model, heldout, stage, true) / 2;
      }
      improved += post >= pre;
      detail += fmt(" seed %llu: pre %.4f post %.4f;", static_cast<unsigned long long>(seeds[s]), pre, post);
    }
    report("8", self_one, "self-similarity at the target pixel is exactly 1.0 (3 models, 4 stages, pre and post)");
    report("8", zero_identical, "with lambda = 0 the pre and post similarity maps are identical (3 models, 4 stages)");

    const fs::path dir = fs::temp_directory_path() / ("semask_accept_analyze_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    save_checkpoint((dir / "model.smsk").string(), semask_runs[0].model, 0, 0);
    std::ostringstream out, err;
    const int status = run_cli({"analyze", "--checkpoint", (dir / "model.smsk").string(), "--stage", "3",
                                "--out", (dir / "maps").string()},
                               out, err);
    bool files = status == 0;
    for (const char* f : {"similarity_stage3_pre.png", "similarity_stage3_post.png", "similarity_stage3_pre.csv",
                          "similarity_stage3_post.csv"}) {
      files = files && fs::exists(dir / "maps" / f);
    }
    files = files && out.str().find("pre: self-similarity at (2,2) = 1\n") != std::string::npos &&
            out.str().find("post: self-similarity at (2,2) = 1\n") != std::string::npos;
    fs::remove_all(dir);
    report("8", files, "`analyze --stage 3` writes pre/post PNG and CSV maps and prints self-similarity 1");
    report_soft("8", improved >= 2,
                fmt("within-class similarity (stages 3 and 4) post >= pre on %d of 3 seeds:%s", improved, detail.c_str()));
  }

  std::printf("total runtime %.1f s; %d gated check(s) failed\n", seconds_since(start), g_failed);
  return g_failed == 0 ? 0 : 1;
}
