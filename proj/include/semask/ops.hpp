// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable primitives. Every op checks its operands, computes a fresh
// output, verifies it is finite and, when any input is tracked and gradient
// recording is on, appends its backward rule to the thread's tape.
//
// Spatial tensors are channel-last: [B, H, W, C].

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "semask/tensor.hpp"

namespace semask {

/// Flat source offsets for `gather`; -1 produces a zero.
using IndexMap = std::shared_ptr<const std::vector<Index>>;

enum class Padding { kSame, kValid };

/// [.., n, k] x [.., k, m] -> [.., n, m]. Batch extents must be equal, or one
/// side must be a plain matrix that is broadcast across the other's batch.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// a x b^T over the last two axes: [.., n, k] x [.., m, k] -> [.., n, m].
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

// Numpy-style broadcasting.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1);

/// Normalizes over the last axis, then applies gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));

/// x * Phi(x) with the exact Gaussian CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

/// x [.., in] @ weight [in, out] + bias [out]. `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Stride-1 cross-correlation. kernel is [kh, kw, Cin, Cout]; odd kernel
/// extents only. `bias` may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 Padding padding);

/// Bilinear resampling with half-pixel centers (align_corners = false).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, Index out_h, Index out_w);

/// out[i] = x[index[i]] (0 where index[i] == -1). Backward scatters.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, const IndexMap& index, Shape out_shape);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes);

/// Keeps the top-left [h, w] of a [B, H, W, C] tensor.
template <typename T>
Tensor<T> crop(const Tensor<T>& x, Index h, Index w);

/// Zero-pads a [B, H, W, C] tensor at the bottom/right to [B, h, w, C].
template <typename T>
Tensor<T> pad_spatial(const Tensor<T>& x, Index h, Index w);

/// Mean over non-ignored positions of -log softmax(logits)[label].
/// logits are [.., K]; labels hold one entry per leading position.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels,
                        std::int32_t ignore_label);

/// Per-axis and flat index helpers shared with the model code.
Shape broadcast_shapes(const Shape& a, const Shape& b);

}  // namespace semask
