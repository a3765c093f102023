// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace semask {

namespace {

void fold(GradCheckResult& r, double a, double n, const std::string& name, Index i) {
  const double err = std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n));
  ++r.coordinates;
  if (err > r.max_rel_error || r.worst.empty()) {
    r.max_rel_error = std::max(r.max_rel_error, err);
    r.analytic = a;
    r.numeric = n;
    r.worst = name + "[" + std::to_string(i) + "]";
  }
}

}  // namespace

GradCheckResult check_gradients(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                const Tensor<double>& x, double h) {
  Tensor<double> leaf(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  Tape<double>::current().clear();
  backward(f(leaf));
  const std::vector<double> analytic =
      leaf.has_grad() ? std::vector<double>(leaf.grad().begin(), leaf.grad().end())
                      : std::vector<double>(static_cast<std::size_t>(leaf.size()), 0.0);

  GradCheckResult result;
  NoGradGuard no_grad;
  std::vector<double> probe(x.data().begin(), x.data().end());
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = probe[static_cast<std::size_t>(i)];
    probe[static_cast<std::size_t>(i)] = orig + h;
    const double fp = f(Tensor<double>(x.shape(), probe)).item();
    probe[static_cast<std::size_t>(i)] = orig - h;
    const double fm = f(Tensor<double>(x.shape(), probe)).item();
    probe[static_cast<std::size_t>(i)] = orig;
    fold(result, analytic[static_cast<std::size_t>(i)], (fp - fm) / (2 * h), "x", i);
  }
  return result;
}

GradCheckResult check_gradients(const std::function<Tensor<double>()>& f,
                                std::vector<std::pair<std::string, Tensor<double>>> params,
                                double h) {
  std::vector<bool> was_tracked;
  for (auto& [name, p] : params) {
    was_tracked.push_back(p.tracked());
    p.set_tracked(true);
    p.zero_grad();
  }
  Tape<double>::current().clear();
  backward(f());

  GradCheckResult result;
  {
    NoGradGuard no_grad;
    for (auto& [name, p] : params) {
      std::vector<double> analytic = p.has_grad()
                                         ? std::vector<double>(p.grad().begin(), p.grad().end())
                                         : std::vector<double>(static_cast<std::size_t>(p.size()), 0.0);
      auto data = p.mutable_data();
      for (Index i = 0; i < p.size(); ++i) {
        const double orig = data[static_cast<std::size_t>(i)];
        data[static_cast<std::size_t>(i)] = orig + h;
        const double fp = f().item();
        data[static_cast<std::size_t>(i)] = orig - h;
        const double fm = f().item();
        data[static_cast<std::size_t>(i)] = orig;
        fold(result, analytic[static_cast<std::size_t>(i)], (fp - fm) / (2 * h), name, i);
      }
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k].second.zero_grad();
    params[k].second.set_tracked(was_tracked[k]);
  }
  return result;
}

}  // namespace semask
