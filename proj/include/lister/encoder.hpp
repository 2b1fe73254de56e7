// SPDX-License-Identifier: Apache-2.0
//
// Position-encoding-free convolutional feature extractor: a 32-row image goes
// in, a c x 1 x ceil(W/4) feature map comes out.
#pragma once

#include <random>
#include <vector>

#include "lister/autograd.hpp"

namespace lister::encoder {

struct StageSpec {
  int out_channels = 64;
  int kernel_h = 3, kernel_w = 3;
  int stride_h = 1, stride_w = 1;
  int pad_h = 1, pad_w = 1;
};

struct EncoderConfig {
  int channels = 64;        // c, the feature width seen by the decoders
  int stem_channels = 32;   // first stage
  int mid_channels = 64;    // second and third stages
  int context_layers = 2;   // residual 1x3 convolutions at feature resolution, dilation 2^i

  /// The four downsampling stages: 32 -> 16 -> 8 -> 4 -> 1 rows, W -> W/2 -> W/4 columns.
  std::vector<StageSpec> stages() const;
};

struct ConvParams {
  ad::Parameter weight;  // (Cout, Cin*kh*kw)
  ad::Parameter bias;    // (Cout, 1)
  ad::Parameter norm_gain;  // (1, Cout)
  ad::Parameter norm_bias;  // (1, Cout)
};

struct EncoderParams {
  EncoderConfig config;
  std::vector<StageSpec> specs;
  std::vector<ConvParams> stages;
  std::vector<ConvParams> context;

  std::vector<ad::Parameter*> parameters();
};

/// Truncated-normal (std 0.02, cut at 2 std) weights, zero biases, unit norm gains.
EncoderParams init_encoder(const EncoderConfig& config, std::mt19937_64& rng);

/// c x (h*w) feature map plus its validity.
struct FeatureMap {
  ad::Var values;  // rows = channels, cols = height * width
  int channels = 0;
  int height = 1;
  int width = 0;
  int valid_cols = 0;  // columns >= valid_cols are padding and held at 0
  int iteration = 0;

  Mask column_mask() const;
};

/// Encodes one (possibly right-padded) image. Columns at or beyond `valid_width`
/// are padding: every stage zeroes them, so the valid part of the result does
/// not depend on how much padding follows.
FeatureMap encode(ad::Tape& tape, const EncoderParams& params, const Matrix& image, int valid_width);

/// Output width of the encoder for an input width.
int feature_width(int image_width);

// Shared helpers for truncated-normal initialisation.
Matrix truncated_normal(Index rows, Index cols, Real stddev, std::mt19937_64& rng);

}  // namespace lister::encoder
