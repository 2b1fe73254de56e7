// SPDX-License-Identifier: Apache-2.0
//
// Feature enhancement: aligned character features are contextualised with
// sliding-window self-attention, written back into the feature map through the
// attention maps, and spread by a residual width-wise convolution block.
#pragma once

#include <random>
#include <vector>

#include "lister/autograd.hpp"
#include "lister/neighbor_decoder.hpp"

namespace lister::fem {

struct FEMConfig {
  int iterations = 2;    // decode passes; iterations - 1 enhancements
  int trans_layers = 1;
  int conv_blocks = 1;
  int window = 11;       // odd; position j sees |j - k| <= window / 2
  int heads = 8;
  int ffn_multiplier = 2;

  void validate(int channels) const;
};

struct TransformerLayerParams {
  ad::Parameter ln1_g, ln1_b;
  ad::Parameter wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Parameter ln2_g, ln2_b;
  ad::Parameter ff1_w, ff1_b, ff2_w, ff2_b;
};

struct ConvBlockParams {
  ad::Parameter conv1_w, conv1_b, conv2_w, conv2_b;  // (c, c*3) / (c, 1)
};

struct FEMParams {
  FEMConfig config;
  int channels = 0;
  std::vector<TransformerLayerParams> layers;
  ad::Parameter final_g, final_b;
  std::vector<ConvBlockParams> convs;

  std::vector<ad::Parameter*> parameters();
  /// Sets every FEM weight to 0: enhancement then leaves the feature map unchanged.
  void zero();
};

FEMParams init_fem(const FEMConfig& config, int channels, std::mt19937_64& rng);

/// Row-major entry mask of a banded (sliding-window) attention pattern.
Mask window_mask(Index length, int window);

/// g~ = T(g): pre-norm windowed multi-head self-attention layers, feed-forward,
/// and a closing layer norm. No positional encoding is added.
ad::Var contextualize(ad::Tape& tape, const FEMParams& params, ad::Var glyphs);

/// F' = C(drop_eos(H + A^T g~)) reshaped to the input map's shape.
encoder::FeatureMap enhance(ad::Tape& tape, const FEMParams& params, const encoder::FeatureMap& prev,
                            const nd::FeatureSequence& seq, ad::Var rollout, ad::Var context);

/// Decode, enhance, decode, ... for params.config.iterations passes.
std::vector<nd::DecodeResult> run_iterations(ad::Tape& tape, const encoder::FeatureMap& f0,
                                             const nd::DecoderParams& decoder, const FEMParams& fem,
                                             const nd::SharpenConfig& cfg, const nd::DecodeMode& mode);

}  // namespace lister::fem
