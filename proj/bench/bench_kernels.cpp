// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference kernels against their OpenMP counterparts, plus one toy
// forward pass. Thread count follows SEMASK_THREADS.

#include <benchmark/benchmark.h>

#include <vector>

#include "semask/kernels.hpp"
#include "semask/model.hpp"
#include "semask/rng.hpp"

namespace {

using namespace semask;

std::vector<float> random_values(Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(n));
  for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

template <bool kParallel>
void BM_Gemm(benchmark::State& state) {
  const Index n = state.range(0);
  const std::vector<float> a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<float> c(static_cast<std::size_t>(n * n));
  const kernels::GemmShape s{n, n, n, false, false};
  const kernels::BatchStrides bs{1, 0, 0, 0};
  for (auto _ : state) {
    if constexpr (kParallel) {
      kernels::parallel::gemm(s, bs, a.data(), b.data(), c.data(), false);
    } else {
      kernels::reference::gemm(s, bs, a.data(), b.data(), c.data(), false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}

template <bool kParallel>
void BM_Softmax(benchmark::State& state) {
  const Index rows = state.range(0), cols = 49;
  const std::vector<float> x = random_values(rows * cols, 3);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    if constexpr (kParallel) {
      kernels::parallel::softmax_rows(x.data(), y.data(), rows, cols);
    } else {
      kernels::reference::softmax_rows(x.data(), y.data(), rows, cols);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool kParallel>
void BM_LayerNorm(benchmark::State& state) {
  const Index rows = state.range(0), cols = 96;
  const std::vector<float> x = random_values(rows * cols, 4);
  const std::vector<float> gain(cols, 1.0f), bias(cols, 0.0f);
  std::vector<float> y(x.size()), xhat(x.size()), rstd(static_cast<std::size_t>(rows));
  for (auto _ : state) {
    if constexpr (kParallel) {
      kernels::parallel::layer_norm_rows(x.data(), gain.data(), bias.data(), y.data(), xhat.data(),
                                         rstd.data(), rows, cols, 1e-5f);
    } else {
      kernels::reference::layer_norm_rows(x.data(), gain.data(), bias.data(), y.data(),
                                          xhat.data(), rstd.data(), rows, cols, 1e-5f);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_ToyForward(benchmark::State& state) {
  SeMaskModel<float> model(model_preset("toy", 4));
  model.init(7);
  const Tensor<float> image({4, 64, 64, 3}, random_values(4 * 64 * 64 * 3, 5));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(image).logits.data().data());
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_Softmax<false>)->Name("softmax/serial")->Arg(4096)->Arg(65536);
BENCHMARK(BM_Softmax<true>)->Name("softmax/parallel")->Arg(4096)->Arg(65536);
BENCHMARK(BM_LayerNorm<false>)->Name("layernorm/serial")->Arg(4096)->Arg(65536);
BENCHMARK(BM_LayerNorm<true>)->Name("layernorm/parallel")->Arg(4096)->Arg(65536);
BENCHMARK(BM_ToyForward)->Name("forward/toy_b4_64")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
