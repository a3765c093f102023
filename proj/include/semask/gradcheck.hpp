// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "semask/tensor.hpp"

namespace semask {

struct GradCheckResult {
  /// max over coordinates of |a - n| / max(1e-8, |a| + |n|)
  double max_rel_error = 0;
  double analytic = 0;  // at the worst coordinate
  double numeric = 0;
  Index coordinates = 0;
  std::string worst;  // "<tensor>[<flat index>]"
};

/// Central differences (f(x+h) - f(x-h)) / 2h against backward() for every
/// coordinate of `x`. `f` must return a scalar.
GradCheckResult check_gradients(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                const Tensor<double>& x, double h = 1e-5);

/// Same check over tensors that `f` reads by reference (model parameters).
/// Parameters are perturbed in place and restored.
GradCheckResult check_gradients(const std::function<Tensor<double>()>& f,
                                std::vector<std::pair<std::string, Tensor<double>>> params,
                                double h = 1e-5);

}  // namespace semask
