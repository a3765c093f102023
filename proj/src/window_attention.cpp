// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/window_attention.hpp"

#include <cmath>
#include <string>

namespace semask {

namespace {

constexpr double kMaskValue = -1e9;

Index round_up(Index v, Index m) { return (v + m - 1) / m * m; }

void require_spatial(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expected [B,H,W,C], got " + shape_str(s));
}

}  // namespace

WindowGrid make_window_grid(Index batch, Index height, Index width, Index window) {
  if (window < 1) throw std::invalid_argument("window size must be >= 1");
  WindowGrid g;
  g.batch = batch;
  g.height = height;
  g.width = width;
  g.window = window;
  g.padded_height = round_up(height, window);
  g.padded_width = round_up(width, window);
  g.windows_h = g.padded_height / window;
  g.windows_w = g.padded_width / window;
  const Index n = window * window;
  g.origin.resize(static_cast<std::size_t>(g.windows_per_image() * n));
  for (Index wh = 0; wh < g.windows_h; ++wh)
    for (Index ww = 0; ww < g.windows_w; ++ww)
      for (Index t = 0; t < n; ++t) {
        const Index h = wh * window + t / window;
        const Index w = ww * window + t % window;
        g.origin[static_cast<std::size_t>((wh * g.windows_w + ww) * n + t)] =
            (h < height && w < width) ? h * width + w : -1;
      }
  return g;
}

template <typename T>
std::pair<Tensor<T>, WindowGrid> window_partition(const Tensor<T>& x, Index window) {
  require_spatial(x.shape(), "window_partition");
  const Index B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  WindowGrid grid = make_window_grid(B, H, W, window);
  const Index per_image = static_cast<Index>(grid.origin.size());
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(B * per_image * C));
  Index o = 0;
  for (Index b = 0; b < B; ++b)
    for (Index k = 0; k < per_image; ++k) {
      const Index src = grid.origin[static_cast<std::size_t>(k)];
      for (Index c = 0; c < C; ++c, ++o) {
        (*index)[static_cast<std::size_t>(o)] = src >= 0 ? (b * H * W + src) * C + c : -1;
      }
    }
  Tensor<T> out =
      gather(x, IndexMap(index), Shape{B * grid.windows_per_image(), grid.tokens(), C});
  return {std::move(out), std::move(grid)};
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, const WindowGrid& grid) {
  const Index n = grid.tokens();
  if (windows.rank() != 3 || windows.dim(0) != grid.batch * grid.windows_per_image() ||
      windows.dim(1) != n) {
    throw ShapeError("window_reverse: windows" + shape_str(windows.shape()) +
                     " inconsistent with a grid of " + std::to_string(grid.batch) + "x" +
                     std::to_string(grid.windows_per_image()) + " windows of " +
                     std::to_string(n) + " tokens");
  }
  const Index C = windows.dim(2);
  const Index B = grid.batch, H = grid.height, W = grid.width, M = grid.window;
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(B * H * W * C));
  Index o = 0;
  for (Index b = 0; b < B; ++b)
    for (Index h = 0; h < H; ++h)
      for (Index w = 0; w < W; ++w) {
        const Index wi = (h / M) * grid.windows_w + (w / M);
        const Index t = (h % M) * M + (w % M);
        const Index base = ((b * grid.windows_per_image() + wi) * n + t) * C;
        for (Index c = 0; c < C; ++c, ++o) (*index)[static_cast<std::size_t>(o)] = base + c;
      }
  return gather(windows, IndexMap(index), Shape{B, H, W, C});
}

template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, Index shift) {
  require_spatial(x.shape(), "cyclic_shift");
  const Index B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (H == 0 || W == 0) return x;
  const Index sh = ((shift % H) + H) % H;
  const Index sw = ((shift % W) + W) % W;
  if (sh == 0 && sw == 0) return x;
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(x.size()));
  Index o = 0;
  for (Index b = 0; b < B; ++b)
    for (Index h = 0; h < H; ++h)
      for (Index w = 0; w < W; ++w) {
        const Index base = ((b * H + (h + sh) % H) * W + (w + sw) % W) * C;
        for (Index c = 0; c < C; ++c, ++o) (*index)[static_cast<std::size_t>(o)] = base + c;
      }
  return gather(x, IndexMap(index), x.shape());
}

template <typename T>
Tensor<T> shift_attention_mask(const WindowGrid& grid, Index shift) {
  if (shift < 0) throw std::invalid_argument("shift_attention_mask: shift must be >= 0");
  const Index M = grid.window, n = grid.tokens(), nw = grid.windows_per_image();
  const Index Hp = grid.padded_height, Wp = grid.padded_width;
  auto region = [&](Index pos, Index extent) -> Index {
    if (shift == 0) return 0;
    if (pos < extent - M) return 0;
    if (pos < extent - shift) return 1;
    return 2;
  };
  std::vector<Index> label(static_cast<std::size_t>(nw * n));
  for (Index wh = 0; wh < grid.windows_h; ++wh)
    for (Index ww = 0; ww < grid.windows_w; ++ww)
      for (Index t = 0; t < n; ++t) {
        const Index h = wh * M + t / M;
        const Index w = ww * M + t % M;
        const Index oh = (h + shift) % Hp;
        const Index ow = (w + shift) % Wp;
        const bool pad = oh >= grid.height || ow >= grid.width;
        label[static_cast<std::size_t>((wh * grid.windows_w + ww) * n + t)] =
            pad ? -1 : region(h, Hp) * 3 + region(w, Wp);
      }
  std::vector<T> mask(static_cast<std::size_t>(nw * n * n), T(0));
  for (Index wi = 0; wi < nw; ++wi)
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const Index li = label[static_cast<std::size_t>(wi * n + i)];
        const Index lj = label[static_cast<std::size_t>(wi * n + j)];
        if (li < 0 || lj < 0 || li != lj) {
          mask[static_cast<std::size_t>((wi * n + i) * n + j)] = static_cast<T>(kMaskValue);
        }
      }
  return Tensor<T>(Shape{nw, n, n}, std::move(mask));
}

IndexMap relative_position_index(Index window) {
  const Index M = window, n = M * M;
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n * n));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      const Index dh = i / M - j / M + M - 1;
      const Index dw = i % M - j % M + M - 1;
      (*index)[static_cast<std::size_t>(i * n + j)] = dh * (2 * M - 1) + dw;
    }
  return index;
}

template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const Tensor<T>& bias, T scale_factor) {
  Tensor<T> logits = scale(matmul_nt(q, k), scale_factor);
  if (bias.defined()) logits = add(logits, bias);
  return matmul(softmax(logits, -1), v);
}

template <typename T>
SwinBlockParams<T> SwinBlockParams<T>::zeros(Index dim, Index heads, Index window,
                                             Index mlp_ratio) {
  SwinBlockParams p;
  p.norm1 = NormParams<T>::identity(dim);
  p.qkv = LinearParams<T>::zeros(dim, 3 * dim);
  p.rpe_table = Tensor<T>::zeros({(2 * window - 1) * (2 * window - 1), heads}, true);
  p.proj = LinearParams<T>::zeros(dim, dim);
  p.norm2 = NormParams<T>::identity(dim);
  p.fc1 = LinearParams<T>::zeros(dim, mlp_ratio * dim);
  p.fc2 = LinearParams<T>::zeros(mlp_ratio * dim, dim);
  return p;
}

template <typename T>
Tensor<T> window_msa(const Tensor<T>& tokens, const SwinBlockParams<T>& params,
                     const Tensor<T>& mask, Index heads, Index window) {
  if (tokens.rank() != 3) {
    throw ShapeError("window_msa: expected [windows, N, C], got " + shape_str(tokens.shape()));
  }
  const Index bw = tokens.dim(0), n = tokens.dim(1), C = tokens.dim(2);
  if (heads < 1 || C % heads != 0) {
    throw ShapeError("window_msa: channels " + std::to_string(C) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (n != window * window) {
    throw ShapeError("window_msa: " + std::to_string(n) + " tokens per window, expected " +
                     std::to_string(window * window));
  }
  const Index d = C / heads;
  const Tensor<T> qkv = params.qkv(tokens);  // [bw, n, 3C]

  auto split = [&](Index part) {
    auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(bw * n * C));
    Index o = 0;
    for (Index b = 0; b < bw; ++b)
      for (Index h = 0; h < heads; ++h)
        for (Index t = 0; t < n; ++t)
          for (Index e = 0; e < d; ++e, ++o) {
            (*index)[static_cast<std::size_t>(o)] = (b * n + t) * 3 * C + part * C + h * d + e;
          }
    return gather(qkv, IndexMap(index), Shape{bw, heads, n, d});
  };
  const Tensor<T> q = split(0), k = split(1), v = split(2);

  const IndexMap rel = relative_position_index(window);
  auto rpe_index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(heads * n * n));
  for (Index h = 0; h < heads; ++h)
    for (Index ij = 0; ij < n * n; ++ij) {
      (*rpe_index)[static_cast<std::size_t>(h * n * n + ij)] =
          (*rel)[static_cast<std::size_t>(ij)] * heads + h;
    }
  Tensor<T> bias = gather(params.rpe_table, IndexMap(rpe_index), Shape{1, heads, n, n});

  if (mask.defined()) {
    const Index nw = mask.dim(0);
    if (mask.rank() != 3 || mask.dim(1) != n || mask.dim(2) != n || bw % nw != 0) {
      throw ShapeError("window_msa: mask" + shape_str(mask.shape()) + " incompatible with " +
                       std::to_string(bw) + " windows of " + std::to_string(n) + " tokens");
    }
    // Tile the per-image mask over the batch: window b*nW + w uses mask[w].
    std::vector<T> tiled(static_cast<std::size_t>(bw * n * n));
    const auto src = mask.data();
    for (Index b = 0; b < bw; ++b) {
      std::copy_n(src.begin() + (b % nw) * n * n, n * n, tiled.begin() + b * n * n);
    }
    bias = add(bias, Tensor<T>(Shape{bw, 1, n, n}, std::move(tiled)));
  }

  const Tensor<T> attended =
      scaled_dot_attention(q, k, v, bias, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));

  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(bw * n * C));
  Index o = 0;
  for (Index b = 0; b < bw; ++b)
    for (Index t = 0; t < n; ++t)
      for (Index h = 0; h < heads; ++h)
        for (Index e = 0; e < d; ++e, ++o) {
          (*index)[static_cast<std::size_t>(o)] = ((b * heads + h) * n + t) * d + e;
        }
  const Tensor<T> merged = gather(attended, IndexMap(index), Shape{bw, n, C});
  return params.proj(merged);
}

template <typename T>
Tensor<T> swin_block(const Tensor<T>& x, const SwinBlockParams<T>& params, Index window,
                     Index heads, bool shifted, std::optional<Index> shift_size) {
  require_spatial(x.shape(), "swin_block");
  const Index B = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Index shift = shifted ? shift_size.value_or(window / 2) : 0;
  const Tensor<T> normed = params.norm1(x);
  const WindowGrid grid = make_window_grid(B, H, W, window);

  Tensor<T> attn_out;
  if (shifted) {
    const Tensor<T> rolled =
        cyclic_shift(pad_spatial(normed, grid.padded_height, grid.padded_width), shift);
    auto [windows, padded_grid] = window_partition(rolled, window);
    const Tensor<T> mask = shift_attention_mask<T>(grid, shift);
    const Tensor<T> out = window_msa(windows, params, mask, heads, window);
    attn_out = crop(cyclic_shift(window_reverse(out, padded_grid), -shift), H, W);
  } else {
    auto [windows, g] = window_partition(normed, window);
    const Tensor<T> mask = g.padded() ? shift_attention_mask<T>(g, 0) : Tensor<T>{};
    attn_out = window_reverse(window_msa(windows, params, mask, heads, window), g);
  }
  const Tensor<T> h = add(x, attn_out);
  return add(h, params.fc2(gelu(params.fc1(params.norm2(h)))));
}

#define SEMASK_INSTANTIATE_WINDOW(T)                                                           \
  template std::pair<Tensor<T>, WindowGrid> window_partition(const Tensor<T>&, Index);         \
  template Tensor<T> window_reverse(const Tensor<T>&, const WindowGrid&);                      \
  template Tensor<T> cyclic_shift(const Tensor<T>&, Index);                                    \
  template Tensor<T> shift_attention_mask<T>(const WindowGrid&, Index);                        \
  template Tensor<T> scaled_dot_attention(const Tensor<T>&, const Tensor<T>&,                  \
                                          const Tensor<T>&, const Tensor<T>&, T);              \
  template struct SwinBlockParams<T>;                                                          \
  template Tensor<T> window_msa(const Tensor<T>&, const SwinBlockParams<T>&, const Tensor<T>&, \
                                Index, Index);                                                 \
  template Tensor<T> swin_block(const Tensor<T>&, const SwinBlockParams<T>&, Index, Index,     \
                                bool, std::optional<Index>);

SEMASK_INSTANTIATE_WINDOW(float)
SEMASK_INSTANTIATE_WINDOW(double)

#undef SEMASK_INSTANTIATE_WINDOW

}  // namespace semask
