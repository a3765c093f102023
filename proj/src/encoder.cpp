// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/encoder.hpp"

#include <numeric>
#include <stdexcept>

namespace semask {

namespace {

Index round_up(Index v, Index m) { return (v + m - 1) / m * m; }

// A shifted block on a map that fits in a single window only fragments the
// attention, so such maps keep every block unshifted.
bool fits_one_window(Index h, Index w, Index window) { return h <= window && w <= window; }

}  // namespace

template <typename T>
EncoderParams<T> EncoderParams<T>::zeros(const EncoderConfig& cfg) {
  cfg.validate();
  EncoderParams p;
  for (int i = 0; i < cfg.num_stages(); ++i) {
    StageParams<T> s;
    const Index c = cfg.embed_dims[static_cast<std::size_t>(i)];
    if (i == 0) {
      s.proj = LinearParams<T>::zeros(cfg.patch_size * cfg.patch_size * cfg.in_channels, c);
      s.norm = NormParams<T>::identity(c);
    } else {
      const Index prev = cfg.embed_dims[static_cast<std::size_t>(i - 1)];
      s.norm = NormParams<T>::identity(4 * prev);
      s.proj = LinearParams<T>::zeros(4 * prev, c, false);
    }
    for (Index j = 0; j < cfg.depths[static_cast<std::size_t>(i)]; ++j) {
      s.blocks.push_back(SwinBlockParams<T>::zeros(c, cfg.heads[static_cast<std::size_t>(i)],
                                                   cfg.window, cfg.mlp_ratio));
    }
    for (Index j = 0; j < cfg.semantic_depths[static_cast<std::size_t>(i)]; ++j) {
      const bool with_query = j == 0 || !cfg.chain_semantic_query;
      s.semantic.push_back(SemanticBlockParams<T>::zeros(c, cfg.num_classes, with_query,
                                                         static_cast<T>(cfg.lambda_init)));
    }
    p.stages.push_back(std::move(s));
  }
  return p;
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& image, const LinearParams<T>& proj,
                      const NormParams<T>& norm, Index patch_size) {
  if (image.rank() != 4) {
    throw ShapeError("patch_embed: expected [B,H,W,C], got " + shape_str(image.shape()));
  }
  const Index B = image.dim(0), H = image.dim(1), W = image.dim(2), C = image.dim(3);
  const Index p = patch_size;
  if (p < 1 || H % p != 0 || W % p != 0 || H == 0 || W == 0) {
    throw ShapeError("patch_embed: extents " + shape_str(image.shape()) +
                     " not divisible by patch size " + std::to_string(p));
  }
  const Index h = H / p, w = W / p, f = p * p * C;
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(B * h * w * f));
  Index o = 0;
  for (Index b = 0; b < B; ++b)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j)
        for (Index dy = 0; dy < p; ++dy)
          for (Index dx = 0; dx < p; ++dx)
            for (Index c = 0; c < C; ++c, ++o) {
              (*index)[static_cast<std::size_t>(o)] =
                  ((b * H + i * p + dy) * W + j * p + dx) * C + c;
            }
  const Tensor<T> patches = gather(image, IndexMap(index), Shape{B, h, w, f});
  return norm(proj(patches));
}

template <typename T>
Tensor<T> patch_merging(const Tensor<T>& x, const NormParams<T>& norm,
                        const LinearParams<T>& reduction) {
  if (x.rank() != 4) {
    throw ShapeError("patch_merging: expected [B,H,W,C], got " + shape_str(x.shape()));
  }
  const Index B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const Index h = (H + 1) / 2, w = (W + 1) / 2;
  // Neighbour order (0,0), (1,0), (0,1), (1,1) as (dy, dx).
  constexpr Index kDy[4] = {0, 1, 0, 1};
  constexpr Index kDx[4] = {0, 0, 1, 1};
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(B * h * w * 4 * C));
  Index o = 0;
  for (Index b = 0; b < B; ++b)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j)
        for (int q = 0; q < 4; ++q) {
          const Index y = 2 * i + kDy[q], xx = 2 * j + kDx[q];
          const bool inside = y < H && xx < W;
          for (Index c = 0; c < C; ++c, ++o) {
            (*index)[static_cast<std::size_t>(o)] = inside ? ((b * H + y) * W + xx) * C + c : -1;
          }
        }
  const Tensor<T> merged = gather(x, IndexMap(index), Shape{B, h, w, 4 * C});
  return reduction(norm(merged));
}

template <typename T>
std::vector<StageOutput<T>> encoder_forward(const Tensor<T>& image, const EncoderParams<T>& params,
                                            const EncoderConfig& cfg) {
  if (static_cast<int>(params.stages.size()) != cfg.num_stages()) {
    throw std::invalid_argument("encoder_forward: " + std::to_string(params.stages.size()) +
                                " parameter stages for a " + std::to_string(cfg.num_stages()) +
                                "-stage config");
  }
  if (image.rank() != 4 || image.dim(1) < cfg.patch_size || image.dim(2) < cfg.patch_size) {
    throw ShapeError("encoder_forward: image " + shape_str(image.shape()) +
                     " smaller than one patch");
  }
  std::vector<StageOutput<T>> out;
  Tensor<T> x;
  for (int i = 0; i < cfg.num_stages(); ++i) {
    const StageParams<T>& s = params.stages[static_cast<std::size_t>(i)];
    x = i == 0 ? patch_embed(image, s.proj, s.norm, cfg.patch_size)
               : patch_merging(x, s.norm, s.proj);
    const bool single = fits_one_window(x.dim(1), x.dim(2), cfg.window);
    const Index heads = cfg.heads[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < s.blocks.size(); ++j) {
      x = swin_block(x, s.blocks[j], cfg.window, heads, j % 2 == 1 && !single);
    }
    StageOutput<T> stage;
    stage.pre = x;
    if (!s.semantic.empty()) {
      SemanticLayerOutput<T> sem = semantic_layer<T>(
          x, std::span<const SemanticBlockParams<T>>(s.semantic), cfg.window,
          cfg.chain_semantic_query);
      stage.post = sem.features;
      stage.prior = sem.prior;
    } else {
      stage.post = x;
    }
    x = stage.post;
    out.push_back(std::move(stage));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Accounting

Index ParamBreakdown::backbone() const {
  return patch_embed + std::accumulate(merging.begin(), merging.end(), Index{0}) +
         std::accumulate(transformer.begin(), transformer.end(), Index{0});
}

Index ParamBreakdown::semantic_total() const {
  return std::accumulate(semantic.begin(), semantic.end(), Index{0});
}

ParamBreakdown count_params(const EncoderConfig& e, const DecoderConfig& d) {
  e.validate();
  ParamBreakdown out;
  const Index K = e.num_classes, D = d.width, M = e.window;
  for (int i = 0; i < e.num_stages(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    const Index C = e.embed_dims[u];
    if (i == 0) {
      out.patch_embed = e.patch_size * e.patch_size * e.in_channels * C + C + 2 * C;
      out.merging.push_back(0);
    } else {
      const Index prev = e.embed_dims[u - 1];
      out.merging.push_back(2 * 4 * prev + 4 * prev * C);
    }
    const Index hidden = e.mlp_ratio * C;
    const Index block = 2 * C + (3 * C * C + 3 * C) + (2 * M - 1) * (2 * M - 1) * e.heads[u] +
                        (C * C + C) + 2 * C + (C * hidden + hidden) + (hidden * C + C);
    out.transformer.push_back(e.depths[u] * block);
    Index sem = 0;
    for (Index j = 0; j < e.semantic_depths[u]; ++j) {
      const bool with_query = j == 0 || !e.chain_semantic_query;
      sem += (with_query ? 2 : 1) * (C * K + K) + (C * C + C) + 1;
    }
    out.semantic.push_back(sem);
    out.fpn_decoder += C * D + D;                  // lateral 1x1
    out.fpn_decoder += i * (9 * D * D + D);        // smoothing 3x3 chain
  }
  out.fpn_decoder += D * K + K;                    // classifier
  out.semantic_decoder = 0;
  return out;
}

double FlopBreakdown::transformer_total() const {
  return std::accumulate(window_attention.begin(), window_attention.end(), 0.0) +
         std::accumulate(mlp.begin(), mlp.end(), 0.0);
}

double FlopBreakdown::backbone() const {
  return patch_embed + std::accumulate(merging.begin(), merging.end(), 0.0) +
         transformer_total();
}

double FlopBreakdown::semantic_total() const {
  return std::accumulate(semantic.begin(), semantic.end(), 0.0);
}

FlopBreakdown count_flops(const EncoderConfig& e, const DecoderConfig& d, Index height,
                          Index width) {
  e.validate();
  FlopBreakdown out;
  const std::vector<Extent> ext = stage_extents(e, height, width);
  const double K = static_cast<double>(e.num_classes), D = static_cast<double>(d.width);
  const double M = static_cast<double>(e.window);
  const double N = M * M;
  for (int i = 0; i < e.num_stages(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    const double C = static_cast<double>(e.embed_dims[u]);
    const double hw = static_cast<double>(ext[u].height * ext[u].width);
    // Window operations run on the padded grid.
    const double padded = static_cast<double>(round_up(ext[u].height, e.window) *
                                              round_up(ext[u].width, e.window));
    const double windows = padded / N;
    if (i == 0) {
      out.patch_embed = hw * static_cast<double>(e.patch_size * e.patch_size * e.in_channels) * C;
      out.merging.push_back(0.0);
    } else {
      const double prev = static_cast<double>(e.embed_dims[u - 1]);
      out.merging.push_back(hw * 4.0 * prev * C);
    }
    const double depth = static_cast<double>(e.depths[u]);
    const double attn = padded * C * 3.0 * C     // qkv
                        + windows * N * N * C    // q k^T over all heads
                        + windows * N * N * C    // attention-weighted values
                        + padded * C * C;        // output projection
    out.window_attention.push_back(depth * attn);
    out.mlp.push_back(depth * 2.0 * hw * C * static_cast<double>(e.mlp_ratio) * C);
    double sem = 0.0;
    for (Index j = 0; j < e.semantic_depths[u]; ++j) {
      const bool with_query = j == 0 || !e.chain_semantic_query;
      sem += (with_query ? 2.0 : 1.0) * padded * C * K  // S_Q, S_K
             + windows * N * N * K                       // S_Q S_K^T
             + windows * N * N * C                       // scores x Y_V
             + padded * C * C;                           // W_O
    }
    out.semantic.push_back(sem);
    out.fpn_decoder += hw * C * D;
    for (int r = 0; r < i; ++r) {
      const Extent& at = ext[u - static_cast<std::size_t>(r)];
      out.fpn_decoder += static_cast<double>(at.height * at.width) * 9.0 * D * D;
    }
  }
  out.fpn_decoder += static_cast<double>(ext[0].height * ext[0].width) * D * K;
  return out;
}

#define SEMASK_INSTANTIATE_ENCODER(T)                                                          \
  template struct EncoderParams<T>;                                                            \
  template Tensor<T> patch_embed(const Tensor<T>&, const LinearParams<T>&,                     \
                                 const NormParams<T>&, Index);                                 \
  template Tensor<T> patch_merging(const Tensor<T>&, const NormParams<T>&,                     \
                                   const LinearParams<T>&);                                    \
  template std::vector<StageOutput<T>> encoder_forward(const Tensor<T>&,                       \
                                                       const EncoderParams<T>&,                \
                                                       const EncoderConfig&);

SEMASK_INSTANTIATE_ENCODER(float)
SEMASK_INSTANTIATE_ENCODER(double)

#undef SEMASK_INSTANTIATE_ENCODER

}  // namespace semask
