// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Four-stage hierarchical encoder: patch embedding, per-stage transformer
// layer followed by a semantic layer, patch merging between stages. Also the
// analytic parameter and multiply-accumulate counts for any layout.

#pragma once

#include <string>
#include <vector>

#include "semask/model_config.hpp"
#include "semask/semask_block.hpp"
#include "semask/window_attention.hpp"

namespace semask {

template <typename T>
struct StageParams {
  // Stage 0: patch embedding (linear 48 -> C, then norm).
  // Later stages: patch merging (norm over 4C, then linear 4C -> 2C, no bias).
  LinearParams<T> proj;
  NormParams<T> norm;
  std::vector<SwinBlockParams<T>> blocks;
  std::vector<SemanticBlockParams<T>> semantic;
};

template <typename T>
struct EncoderParams {
  std::vector<StageParams<T>> stages;

  static EncoderParams zeros(const EncoderConfig& cfg);
};

template <typename T, typename F>
void visit(EncoderParams<T>& p, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < p.stages.size(); ++i) {
    StageParams<T>& s = p.stages[i];
    const std::string sp = prefix + ".stages." + std::to_string(i);
    if (i == 0) {
      visit(s.proj, sp + ".patch_embed.proj", f);
      visit(s.norm, sp + ".patch_embed.norm", f);
    } else {
      visit(s.norm, sp + ".merge.norm", f);
      visit(s.proj, sp + ".merge.reduction", f);
    }
    for (std::size_t j = 0; j < s.blocks.size(); ++j) {
      visit(s.blocks[j], sp + ".blocks." + std::to_string(j), f);
    }
    for (std::size_t j = 0; j < s.semantic.size(); ++j) {
      visit(s.semantic[j], sp + ".semantic." + std::to_string(j), f);
    }
  }
}

template <typename T>
struct StageOutput {
  Tensor<T> pre;    // transformer-layer output, before the semantic layer
  Tensor<T> post;   // semantically masked features (== pre without a semantic layer)
  Tensor<T> prior;  // [B, H_i, W_i, K]; undefined without a semantic layer
};

/// [B, H, W, Cin] -> [B, H/p, W/p, C]: flatten each p x p patch in (dy, dx, c)
/// order, project, normalize. H and W must be multiples of p.
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& image, const LinearParams<T>& proj,
                      const NormParams<T>& norm, Index patch_size);

/// [B, h, w, C] -> [B, ceil(h/2), ceil(w/2), 2C]. Odd extents are zero-padded.
template <typename T>
Tensor<T> patch_merging(const Tensor<T>& x, const NormParams<T>& norm,
                        const LinearParams<T>& reduction);

template <typename T>
std::vector<StageOutput<T>> encoder_forward(const Tensor<T>& image, const EncoderParams<T>& params,
                                            const EncoderConfig& cfg);

// ---------------------------------------------------------------------------
// Accounting

struct ParamBreakdown {
  Index patch_embed = 0;
  std::vector<Index> merging;      // per stage (0 for stage 0)
  std::vector<Index> transformer;  // per stage
  std::vector<Index> semantic;     // per stage
  Index fpn_decoder = 0;
  Index semantic_decoder = 0;      // parameter-free by construction

  Index backbone() const;          // embed + merging + transformer layers
  Index semantic_total() const;
  Index encoder() const { return backbone() + semantic_total(); }
  Index total() const { return encoder() + fpn_decoder + semantic_decoder; }
};

/// Closed-form count of every tensor element the model would allocate.
ParamBreakdown count_params(const EncoderConfig& encoder, const DecoderConfig& decoder);

/// Multiply-accumulates of one forward pass. Only matmuls and convolutions
/// are counted; norms, activations, softmax and resampling are not.
struct FlopBreakdown {
  double patch_embed = 0;
  std::vector<double> merging;
  std::vector<double> window_attention;  // QKV, scores, mixing and output projection
  std::vector<double> mlp;
  std::vector<double> semantic;
  double fpn_decoder = 0;

  double transformer_total() const;
  double backbone() const;  // embed + merging + attention + mlp
  double semantic_total() const;
  double total() const { return backbone() + semantic_total() + fpn_decoder; }
};

FlopBreakdown count_flops(const EncoderConfig& encoder, const DecoderConfig& decoder,
                          Index height, Index width);

}  // namespace semask
