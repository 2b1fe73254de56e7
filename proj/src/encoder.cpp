// SPDX-License-Identifier: Apache-2.0
#include "lister/encoder.hpp"

#include "lister/corpus.hpp"

namespace lister::encoder {

std::vector<StageSpec> EncoderConfig::stages() const {
  return {
      {stem_channels, 3, 3, 2, 2, 1, 1},  // 32 x W   -> 16 x W/2
      {mid_channels, 3, 3, 2, 2, 1, 1},   // 16 x W/2 -> 8 x W/4
      {mid_channels, 3, 3, 2, 1, 1, 1},   // 8        -> 4
      {channels, 4, 3, 1, 1, 0, 1},       // 4        -> 1, height collapsed
  };
}

Matrix truncated_normal(Index rows, Index cols, Real stddev, std::mt19937_64& rng) {
  std::normal_distribution<Real> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    Real v;
    do v = normal(rng);
    while (std::abs(v) > 2.0);
    m.data()[i] = v * stddev;
  }
  return m;
}

namespace {

ConvParams make_conv(const std::string& prefix, int in_channels, const StageSpec& s, std::mt19937_64& rng) {
  ConvParams p;
  p.weight = {prefix + ".weight", truncated_normal(s.out_channels, in_channels * s.kernel_h * s.kernel_w, 0.02, rng)};
  p.bias = {prefix + ".bias", Matrix::Zero(s.out_channels, 1), false};
  p.norm_gain = {prefix + ".norm_gain", Matrix::Ones(1, s.out_channels), false};
  p.norm_bias = {prefix + ".norm_bias", Matrix::Zero(1, s.out_channels), false};
  return p;
}

// Context layer i is a 1x3 conv with dilation 2^i, so a stack of k layers
// adds 2^(k+1) - 2 feature columns of receptive field.
StageSpec context_spec(int channels, int layer) { return {channels, 1, 3, 1, 1, 0, 1 << layer}; }

// conv -> channel layer norm -> GELU on a (C, H*W) map
ad::Var conv_block(ad::Tape& tape, const ConvParams& p, ad::Var x, const ad::ConvGeometry& g) {
  ad::Var y = ad::conv2d(x, tape.param(p.weight), tape.param(p.bias), g);
  y = ad::transpose(ad::layer_norm_rows(ad::transpose(y), tape.param(p.norm_gain), tape.param(p.norm_bias)));
  return ad::gelu(y);
}

ad::Var zero_padding(ad::Var x, Index height, Index width, Index valid) {
  if (valid >= width) return x;
  Matrix pattern = Matrix::Zero(x.rows(), height * width);
  for (Index r = 0; r < height; ++r) pattern.middleCols(r * width, valid).setOnes();
  return ad::mask_mul(x, pattern);
}

}  // namespace

std::vector<ad::Parameter*> EncoderParams::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto* group : {&stages, &context})
    for (auto& p : *group) out.insert(out.end(), {&p.weight, &p.bias, &p.norm_gain, &p.norm_bias});
  return out;
}

EncoderParams init_encoder(const EncoderConfig& config, std::mt19937_64& rng) {
  EncoderParams params;
  params.config = config;
  params.specs = config.stages();
  int in_channels = 1;
  for (std::size_t i = 0; i < params.specs.size(); ++i) {
    params.stages.push_back(make_conv("encoder." + std::to_string(i), in_channels, params.specs[i], rng));
    in_channels = params.specs[i].out_channels;
  }
  for (int i = 0; i < config.context_layers; ++i)
    params.context.push_back(
        make_conv("encoder.ctx" + std::to_string(i), config.channels, context_spec(config.channels, i), rng));
  return params;
}

int feature_width(int image_width) { return (image_width + 3) / 4; }

Mask FeatureMap::column_mask() const {
  Mask m(static_cast<std::size_t>(height * width), 0);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < valid_cols; ++c) m[static_cast<std::size_t>(r * width + c)] = 1;
  return m;
}

FeatureMap encode(ad::Tape& tape, const EncoderParams& params, const Matrix& image, int valid_width) {
  if (image.rows() != corpus::kImageHeight)
    throw Error("encoder expects images of height 32, got " + std::to_string(image.rows()));
  if (image.cols() < 1) throw Error("encoder got an empty image");
  if (valid_width < 1 || valid_width > image.cols()) throw Error("valid width out of range");

  Index height = image.rows(), width = image.cols(), valid = valid_width, channels = 1;
  Matrix flat = Eigen::Map<const Matrix>(image.data(), 1, image.size());
  ad::Var x = zero_padding(tape.constant(std::move(flat)), height, width, valid);

  for (std::size_t i = 0; i < params.stages.size(); ++i) {
    const StageSpec& s = params.specs[i];
    ad::ConvGeometry g{channels, height, width, s.kernel_h, s.kernel_w, s.stride_h, s.stride_w, s.pad_h, s.pad_w};
    x = conv_block(tape, params.stages[i], x, g);
    height = g.out_height();
    width = g.out_width();
    valid = (valid + s.stride_w - 1) / s.stride_w;
    channels = s.out_channels;
    x = zero_padding(x, height, width, valid);
  }
  for (std::size_t i = 0; i < params.context.size(); ++i) {
    const StageSpec s = context_spec(static_cast<int>(channels), static_cast<int>(i));
    ad::ConvGeometry g{channels, height, width, s.kernel_h, s.kernel_w, 1, 1, s.pad_h, s.pad_w, 1, s.pad_w};
    x = zero_padding(ad::add(x, conv_block(tape, params.context[i], x, g)), height, width, valid);
  }

  FeatureMap f;
  f.values = x;
  f.channels = static_cast<int>(channels);
  f.height = static_cast<int>(height);
  f.width = static_cast<int>(width);
  f.valid_cols = static_cast<int>(valid);
  return f;
}

}  // namespace lister::encoder
