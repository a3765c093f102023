// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Shifted-window multi-head self-attention and the pre-norm transformer
// block built on it.

#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "semask/layers.hpp"

namespace semask {

/// Tiling of a [B, H, W, C] map into non-overlapping M x M windows. The map
/// is zero-padded at the bottom/right up to multiples of M.
struct WindowGrid {
  Index batch = 0;
  Index height = 0;
  Index width = 0;
  Index window = 0;
  Index padded_height = 0;
  Index padded_width = 0;
  Index windows_h = 0;
  Index windows_w = 0;
  /// Per image, for window-token k = window_index * M*M + token, the flat
  /// spatial index h * width + w it came from, or -1 for padding.
  std::vector<Index> origin;

  Index windows_per_image() const { return windows_h * windows_w; }
  Index tokens() const { return window * window; }
  Index pad_h() const { return padded_height - height; }
  Index pad_w() const { return padded_width - width; }
  bool padded() const { return pad_h() > 0 || pad_w() > 0; }
};

WindowGrid make_window_grid(Index batch, Index height, Index width, Index window);

/// [B, H, W, C] -> [B * nW, M*M, C], windows in row-major order per image,
/// tokens row-major within a window.
template <typename T>
std::pair<Tensor<T>, WindowGrid> window_partition(const Tensor<T>& x, Index window);

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, const WindowGrid& grid);

/// Torus roll by (-shift, -shift): out[h, w] = x[(h + shift) % H, (w + shift) % W].
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, Index shift);

/// Additive [nW, N, N] mask for attention over the windows of a map that was
/// padded to the grid and then rolled by `shift`: -1e9 where the two tokens
/// come from different pre-shift regions or either one is padding.
template <typename T>
Tensor<T> shift_attention_mask(const WindowGrid& grid, Index shift);

/// Row-major table offsets (dh + M - 1) * (2M - 1) + (dw + M - 1) for every
/// token pair of an M x M window.
IndexMap relative_position_index(Index window);

/// softmax(q k^T * scale + bias) v over the last two axes. `bias` may be
/// undefined and is broadcast against the logits.
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const Tensor<T>& bias, T scale);

template <typename T>
struct SwinBlockParams {
  NormParams<T> norm1;
  LinearParams<T> qkv;     // C -> 3C
  Tensor<T> rpe_table;     // [(2M-1)^2, heads]
  LinearParams<T> proj;    // C -> C
  NormParams<T> norm2;
  LinearParams<T> fc1;     // C -> ratio * C
  LinearParams<T> fc2;     // ratio * C -> C

  static SwinBlockParams zeros(Index dim, Index heads, Index window, Index mlp_ratio = 4);
};

template <typename T, typename F>
void visit(SwinBlockParams<T>& p, const std::string& prefix, F&& f) {
  visit(p.norm1, prefix + ".norm1", f);
  visit(p.qkv, prefix + ".attn.qkv", f);
  f(prefix + ".attn.rpe_table", p.rpe_table);
  visit(p.proj, prefix + ".attn.proj", f);
  visit(p.norm2, prefix + ".norm2", f);
  visit(p.fc1, prefix + ".mlp.fc1", f);
  visit(p.fc2, prefix + ".mlp.fc2", f);
}

/// Multi-head attention within each window, scaled by 1/sqrt(C / heads),
/// with the relative-position bias and an optional [nW, N, N] mask.
template <typename T>
Tensor<T> window_msa(const Tensor<T>& tokens, const SwinBlockParams<T>& params,
                     const Tensor<T>& mask, Index heads, Index window);

/// x + MSA(LN(x)), then + MLP(LN(.)). Shifted blocks roll by floor(M/2)
/// unless `shift_size` overrides it.
template <typename T>
Tensor<T> swin_block(const Tensor<T>& x, const SwinBlockParams<T>& params, Index window,
                     Index heads, bool shifted, std::optional<Index> shift_size = std::nullopt);

}  // namespace semask
