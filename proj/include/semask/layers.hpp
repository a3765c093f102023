// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Parameter bundles shared by the model modules, and the visitor that gives
// every parameter its canonical dotted name.

#pragma once

#include <string>

#include "semask/ops.hpp"

namespace semask {

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out], may be undefined

  static LinearParams zeros(Index in, Index out, bool with_bias = true) {
    return {Tensor<T>::zeros({in, out}, true),
            with_bias ? Tensor<T>::zeros({out}, true) : Tensor<T>{}};
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct NormParams {
  Tensor<T> gain;
  Tensor<T> bias;

  static NormParams identity(Index dim) {
    return {Tensor<T>::full({dim}, T(1), true), Tensor<T>::zeros({dim}, true)};
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

/// Conv kernel [kh, kw, Cin, Cout] plus bias [Cout].
template <typename T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;

  static ConvParams zeros(Index k, Index in, Index out) {
    return {Tensor<T>::zeros({k, k, in, out}, true), Tensor<T>::zeros({out}, true)};
  }
  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv2d(x, weight, bias, Padding::kSame);
  }
};

template <typename T, typename F>
void visit(LinearParams<T>& p, const std::string& prefix, F&& f) {
  f(prefix + ".weight", p.weight);
  if (p.bias.defined()) f(prefix + ".bias", p.bias);
}

template <typename T, typename F>
void visit(NormParams<T>& p, const std::string& prefix, F&& f) {
  f(prefix + ".gain", p.gain);
  f(prefix + ".bias", p.bias);
}

template <typename T, typename F>
void visit(ConvParams<T>& p, const std::string& prefix, F&& f) {
  f(prefix + ".weight", p.weight);
  f(prefix + ".bias", p.bias);
}

}  // namespace semask
