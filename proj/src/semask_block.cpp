// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/semask_block.hpp"

#include <algorithm>

#include "semask/window_attention.hpp"

namespace semask {

template <typename T>
SemanticBlockParams<T> SemanticBlockParams<T>::zeros(Index dim, Index num_classes,
                                                     bool with_query, T lambda_init) {
  SemanticBlockParams p;
  if (with_query) p.query = LinearParams<T>::zeros(dim, num_classes);
  p.key = LinearParams<T>::zeros(dim, num_classes);
  p.out = LinearParams<T>::zeros(dim, dim);
  p.lambda = Tensor<T>::full({1}, lambda_init, true);
  return p;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> project_semantic(const Tensor<T>& windows,
                                                 const SemanticBlockParams<T>& params) {
  if (!params.has_query()) {
    throw std::invalid_argument("project_semantic: block has no query projection");
  }
  return {params.query(windows), params.key(windows)};
}

template <typename T>
Tensor<T> semask_attention(const Tensor<T>& s_q, const Tensor<T>& s_k, const Tensor<T>& y_v,
                           const Tensor<T>& mask) {
  if (s_q.shape() != s_k.shape()) {
    throw ShapeError("semask_attention: S_Q" + shape_str(s_q.shape()) + " and S_K" +
                     shape_str(s_k.shape()) + " differ");
  }
  if (y_v.rank() != s_q.rank() || y_v.dim(-2) != s_q.dim(-2)) {
    throw ShapeError("semask_attention: Y_V" + shape_str(y_v.shape()) +
                     " rows do not match S_Q" + shape_str(s_q.shape()));
  }
  Tensor<T> scores = matmul_nt(s_q, s_k);
  if (mask.defined()) scores = add(scores, mask);
  return matmul(softmax(scores, -1), y_v);
}

namespace {

// Key-padding mask for the windows of a padded grid, tiled over the batch.
template <typename T>
Tensor<T> padding_mask(const WindowGrid& grid) {
  const Tensor<T> per_image = shift_attention_mask<T>(grid, 0);
  const Index nw = grid.windows_per_image(), n = grid.tokens();
  std::vector<T> tiled(static_cast<std::size_t>(grid.batch * nw * n * n));
  for (Index b = 0; b < grid.batch; ++b) {
    std::copy(per_image.data().begin(), per_image.data().end(), tiled.begin() + b * nw * n * n);
  }
  return Tensor<T>(Shape{grid.batch * nw, n, n}, std::move(tiled));
}

}  // namespace

template <typename T>
SemanticLayerOutput<T> semantic_layer(const Tensor<T>& y,
                                      std::span<const SemanticBlockParams<T>> blocks,
                                      Index window, bool chain_query) {
  if (blocks.empty()) throw std::invalid_argument("semantic_layer: no blocks");
  if (y.rank() != 4) throw ShapeError("semantic_layer: expected [B,H,W,C], got " + shape_str(y.shape()));
  Tensor<T> features = y;
  Tensor<T> s_q;
  WindowGrid grid;
  Tensor<T> mask;
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    const SemanticBlockParams<T>& p = blocks[j];
    auto [windows, g] = window_partition(features, window);
    if (j == 0) {
      grid = g;
      if (grid.padded()) mask = padding_mask<T>(grid);
    }
    const bool reuse = j > 0 && chain_query;
    if (!reuse) {
      if (!p.has_query()) throw std::invalid_argument("semantic_layer: block needs a query projection");
      s_q = p.query(windows);
    }
    const Tensor<T> s_k = p.key(windows);
    const Tensor<T> update = p.out(semask_attention(s_q, s_k, windows, mask));
    features = add(features, mul(window_reverse(update, grid), p.lambda));
  }
  return {features, window_reverse(s_q, grid)};
}

template <typename T>
SemanticLayerOutput<T> semask_block_forward(const Tensor<T>& y_pre,
                                            const SemanticBlockParams<T>& params, Index window) {
  return semantic_layer<T>(y_pre, std::span<const SemanticBlockParams<T>>(&params, 1), window);
}

#define SEMASK_INSTANTIATE_SEMANTIC(T)                                                          \
  template struct SemanticBlockParams<T>;                                                       \
  template std::pair<Tensor<T>, Tensor<T>> project_semantic(const Tensor<T>&,                   \
                                                            const SemanticBlockParams<T>&);     \
  template Tensor<T> semask_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                      const Tensor<T>&);                                        \
  template SemanticLayerOutput<T> semask_block_forward(const Tensor<T>&,                        \
                                                       const SemanticBlockParams<T>&, Index);   \
  template SemanticLayerOutput<T> semantic_layer(                                               \
      const Tensor<T>&, std::span<const SemanticBlockParams<T>>, Index, bool);

SEMASK_INSTANTIATE_SEMANTIC(float)
SEMASK_INSTANTIATE_SEMANTIC(double)

#undef SEMASK_INSTANTIATE_SEMANTIC

}  // namespace semask
