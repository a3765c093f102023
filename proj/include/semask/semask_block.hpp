// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Semantic layer: per-window projection of features onto K class scores,
// single-head semantic attention, and the lambda-gated residual update.

#pragma once

#include <span>
#include <utility>

#include "semask/layers.hpp"

namespace semask {

template <typename T>
struct SemanticBlockParams {
  LinearParams<T> query;  // C -> K; weight undefined when S_Q is chained in
  LinearParams<T> key;    // C -> K
  LinearParams<T> out;    // C -> C
  Tensor<T> lambda;       // [1]

  static SemanticBlockParams zeros(Index dim, Index num_classes, bool with_query,
                                   T lambda_init = T(0.1));
  bool has_query() const { return query.weight.defined(); }
};

template <typename T, typename F>
void visit(SemanticBlockParams<T>& p, const std::string& prefix, F&& f) {
  if (p.has_query()) visit(p.query, prefix + ".query", f);
  visit(p.key, prefix + ".key", f);
  visit(p.out, prefix + ".out", f);
  f(prefix + ".lambda", p.lambda);
}

template <typename T>
struct SemanticLayerOutput {
  Tensor<T> features;  // Y_post, [B, H, W, C]
  Tensor<T> prior;     // raw S_Q scores, [B, H, W, K]
};

/// (S_Q, S_K) for windowed features [.., N, C].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> project_semantic(const Tensor<T>& windows,
                                                 const SemanticBlockParams<T>& params);

/// softmax(S_Q S_K^T) Y_V, single head, no scaling. `mask` is an optional
/// additive term broadcast against the [.., N, N] scores.
template <typename T>
Tensor<T> semask_attention(const Tensor<T>& s_q, const Tensor<T>& s_k, const Tensor<T>& y_v,
                           const Tensor<T>& mask = Tensor<T>{});

/// One semantic attention block on a [B, H, W, C] map, unshifted M x M windows.
template <typename T>
SemanticLayerOutput<T> semask_block_forward(const Tensor<T>& y_pre,
                                            const SemanticBlockParams<T>& params, Index window);

/// N_S stacked blocks. With `chain_query`, blocks after the first reuse the
/// previous block's S_Q instead of projecting their own. The prior is the
/// final S_Q.
template <typename T>
SemanticLayerOutput<T> semantic_layer(const Tensor<T>& y,
                                      std::span<const SemanticBlockParams<T>> blocks,
                                      Index window, bool chain_query = true);

}  // namespace semask
