// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "doctest.h"
#include "semask/kernels.hpp"
#include "semask/ops.hpp"
#include "semask/rng.hpp"
#include "test_util.hpp"

using namespace semask;
using semask::testing::random_tensor;

TEST_CASE("tensor construction and aliasing") {
  Tensor<float> t = Tensor<float>::zeros({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.dim(-1) == 3);
  Tensor<float> alias = t;
  alias.mutable_data()[4] = 5.0f;
  CHECK(t.at({1, 1}) == 5.0f);
  Tensor<float> copy = t.detach();
  copy.mutable_data()[4] = 1.0f;
  CHECK(t.at({1, 1}) == 5.0f);
  CHECK_FALSE(copy.tracked());
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
  CHECK(Tensor<double>::scalar(2.5).item() == 2.5);
}

TEST_CASE("tape replays backward rules in reverse order") {
  Tensor<double> x({3}, {1.0, 2.0, 3.0}, true);
  Tape<double>::current().clear();
  Tensor<double> y = mul(x, x);
  Tensor<double> z = sum(scale(y, 3.0));
  CHECK(Tape<double>::current().size() == 3);
  backward(z);
  CHECK(Tape<double>::current().size() == 0);
  const std::vector<double> expect = {6.0, 12.0, 18.0};
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[static_cast<std::size_t>(i)] == expect[static_cast<std::size_t>(i)]);
}

TEST_CASE("gradient recording can be disabled") {
  Tensor<double> x({2}, {1.0, 2.0}, true);
  Tape<double>::current().clear();
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    Tensor<double> y = sum(mul(x, x));
    CHECK(Tape<double>::current().size() == 0);
  }
  CHECK(grad_enabled());
}

TEST_CASE("non-finite results raise NumericError") {
  Tensor<double> x({2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(add(x, x), NumericError);
  Tensor<float> big({1}, {3e38f});
  CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("shape errors report operand shapes") {
  Tensor<float> a = Tensor<float>::zeros({2, 3});
  Tensor<float> b = Tensor<float>::zeros({4, 5});
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), ShapeError);
}

TEST_CASE("rng streams are reproducible and independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng s1 = Rng(42).split("x"), s2 = Rng(42).split("y");
  CHECK(s1.next_u64() != s2.next_u64());
  CHECK(Rng(42).split(3).next_u64() == Rng(42).split(3).next_u64());
  Rng u(1);
  double lo = 1, hi = 0, acc = 0;
  for (int i = 0; i < 20000; ++i) {
    const double x = u.uniform();
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    acc += x;
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  CHECK(acc / 20000 == doctest::Approx(0.5).epsilon(0.02));
  Rng t(2);
  for (int i = 0; i < 1000; ++i) CHECK(std::abs(t.truncated_normal(0.02)) <= 0.04);
  Rng k(3);
  std::set<Index> seen;
  for (int i = 0; i < 200; ++i) {
    const Index v = k.below(5);
    CHECK(v >= 0);
    CHECK(v < 5);
    seen.insert(v);
  }
  CHECK(seen.size() == 5);
}

namespace {

struct ThreadScope {
  explicit ThreadScope(int n) : previous(kernels::max_threads()) { kernels::set_max_threads(n); }
  ~ThreadScope() { kernels::set_max_threads(previous); }
  int previous;
};

std::vector<double> values(Index n, std::uint64_t seed) {
  const auto t = random_tensor<double>({n}, seed);
  return {t.data().begin(), t.data().end()};
}

}  // namespace

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
  ThreadScope threads(4);
  for (const bool ta : {false, true})
    for (const bool tb : {false, true}) {
      const Index m = 37, n = 29, k = 41, batch = 3;
      const kernels::GemmShape s{m, n, k, ta, tb};
      const kernels::BatchStrides bs{batch, m * k, 0, m * n};
      const auto a = values(batch * m * k, 1), b = values(k * n, 2);
      std::vector<double> c0 = values(batch * m * n, 3), c1 = c0;
      kernels::reference::gemm(s, bs, a.data(), b.data(), c0.data(), true);
      kernels::parallel::gemm(s, bs, a.data(), b.data(), c1.data(), true);
      CHECK(c0 == c1);
    }

  const Index rows = 5000, cols = 49;
  const auto x = values(rows * cols, 4), dy = values(rows * cols, 5);
  std::vector<double> y0(x.size()), y1(x.size());
  kernels::reference::softmax_rows(x.data(), y0.data(), rows, cols);
  kernels::parallel::softmax_rows(x.data(), y1.data(), rows, cols);
  CHECK(y0 == y1);
  std::vector<double> dx0(x.size(), 0.0), dx1(x.size(), 0.0);
  kernels::reference::softmax_rows_backward(y0.data(), dy.data(), dx0.data(), rows, cols);
  kernels::parallel::softmax_rows_backward(y0.data(), dy.data(), dx1.data(), rows, cols);
  CHECK(dx0 == dx1);

  const auto gain = values(cols, 6), bias = values(cols, 7);
  std::vector<double> ly0(x.size()), ly1(x.size()), xh0(x.size()), xh1(x.size());
  std::vector<double> rs0(static_cast<std::size_t>(rows)), rs1(static_cast<std::size_t>(rows));
  kernels::reference::layer_norm_rows(x.data(), gain.data(), bias.data(), ly0.data(), xh0.data(),
                                      rs0.data(), rows, cols, 1e-5);
  kernels::parallel::layer_norm_rows(x.data(), gain.data(), bias.data(), ly1.data(), xh1.data(),
                                     rs1.data(), rows, cols, 1e-5);
  CHECK(ly0 == ly1);
  CHECK(rs0 == rs1);
  std::vector<double> g0(x.size(), 0.0), g1(x.size(), 0.0);
  std::vector<double> dg0(static_cast<std::size_t>(cols), 0.0), dg1 = dg0, db0 = dg0, db1 = dg0;
  kernels::reference::layer_norm_rows_backward(dy.data(), xh0.data(), rs0.data(), gain.data(),
                                               g0.data(), dg0.data(), db0.data(), rows, cols);
  kernels::parallel::layer_norm_rows_backward(dy.data(), xh0.data(), rs0.data(), gain.data(),
                                              g1.data(), dg1.data(), db1.data(), rows, cols);
  CHECK(g0 == g1);
  CHECK(dg0 == dg1);
  CHECK(db0 == db1);
}

TEST_CASE("gemm matches a naive triple loop") {
  const Index m = 4, n = 3, k = 5;
  const auto a = values(m * k, 8), b = values(k * n, 9);
  std::vector<double> c(static_cast<std::size_t>(m * n));
  kernels::reference::gemm(kernels::GemmShape{m, n, k, false, false},
                           kernels::BatchStrides{1, 0, 0, 0}, a.data(), b.data(), c.data(), false);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      double acc = 0;
      for (Index p = 0; p < k; ++p) acc += a[static_cast<std::size_t>(i * k + p)] * b[static_cast<std::size_t>(p * n + j)];
      CHECK(c[static_cast<std::size_t>(i * n + j)] == doctest::Approx(acc).epsilon(1e-14));
    }
}

TEST_CASE("model forward does not depend on the thread count") {
  SeMaskModel<float> model(model_preset("toy", 4));
  model.init(3);
  const Tensor<float> x = random_tensor<float>({2, 32, 32, 3}, 11);
  NoGradGuard guard;
  Tensor<float> one, many;
  {
    ThreadScope t(1);
    one = model.forward(x).logits;
  }
  {
    ThreadScope t(4);
    many = model.forward(x).logits;
  }
  CHECK(semask::testing::bit_equal(one, many));
}
