// SPDX-License-Identifier: Apache-2.0
#include "lister/fem.hpp"

#include <cmath>

namespace lister::fem {

using encoder::truncated_normal;

void FEMConfig::validate(int channels) const {
  if (iterations < 1) throw Error("fem.iters must be >= 1");
  if (trans_layers < 0 || conv_blocks < 0) throw Error("fem layer counts must be >= 0");
  if (window < 1 || window % 2 == 0) throw Error("fem.window must be odd and positive");
  if (heads < 1 || channels % heads != 0) throw Error("fem.heads must divide the channel count");
  if (ffn_multiplier < 1) throw Error("fem feed-forward multiplier must be >= 1");
}

std::vector<ad::Parameter*> FEMParams::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& l : layers)
    out.insert(out.end(), {&l.ln1_g, &l.ln1_b, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln2_g,
                           &l.ln2_b, &l.ff1_w, &l.ff1_b, &l.ff2_w, &l.ff2_b});
  out.insert(out.end(), {&final_g, &final_b});
  for (auto& c : convs) out.insert(out.end(), {&c.conv1_w, &c.conv1_b, &c.conv2_w, &c.conv2_b});
  return out;
}

void FEMParams::zero() {
  for (ad::Parameter* p : parameters()) p->value.setZero();
}

FEMParams init_fem(const FEMConfig& config, int channels, std::mt19937_64& rng) {
  config.validate(channels);
  FEMParams p;
  p.config = config;
  p.channels = channels;
  const Index c = channels, hidden = static_cast<Index>(channels) * config.ffn_multiplier;
  auto w = [&](const std::string& name, Index r, Index cols) {
    return ad::Parameter{name, truncated_normal(r, cols, 0.02, rng)};
  };
  auto zeros = [](const std::string& name, Index r, Index cols) { return ad::Parameter{name, Matrix::Zero(r, cols), false}; };
  auto ones = [](const std::string& name, Index r, Index cols) { return ad::Parameter{name, Matrix::Ones(r, cols), false}; };

  for (int i = 0; i < config.trans_layers; ++i) {
    const std::string pre = "fem.attn." + std::to_string(i) + ".";
    TransformerLayerParams l;
    l.ln1_g = ones(pre + "ln1_g", 1, c);
    l.ln1_b = zeros(pre + "ln1_b", 1, c);
    l.wq = w(pre + "wq", c, c);
    l.bq = zeros(pre + "bq", 1, c);
    l.wk = w(pre + "wk", c, c);
    l.bk = zeros(pre + "bk", 1, c);
    l.wv = w(pre + "wv", c, c);
    l.bv = zeros(pre + "bv", 1, c);
    l.wo = w(pre + "wo", c, c);
    l.bo = zeros(pre + "bo", 1, c);
    l.ln2_g = ones(pre + "ln2_g", 1, c);
    l.ln2_b = zeros(pre + "ln2_b", 1, c);
    l.ff1_w = w(pre + "ff1_w", c, hidden);
    l.ff1_b = zeros(pre + "ff1_b", 1, hidden);
    l.ff2_w = w(pre + "ff2_w", hidden, c);
    l.ff2_b = zeros(pre + "ff2_b", 1, c);
    p.layers.push_back(std::move(l));
  }
  p.final_g = ones("fem.attn.final_g", 1, c);
  p.final_b = zeros("fem.attn.final_b", 1, c);
  for (int i = 0; i < config.conv_blocks; ++i) {
    const std::string pre = "fem.conv." + std::to_string(i) + ".";
    ConvBlockParams b;
    b.conv1_w = w(pre + "conv1_w", c, c * 3);
    b.conv1_b = zeros(pre + "conv1_b", c, 1);
    b.conv2_w = w(pre + "conv2_w", c, c * 3);
    b.conv2_b = zeros(pre + "conv2_b", c, 1);
    p.convs.push_back(std::move(b));
  }
  return p;
}

Mask window_mask(Index length, int window) {
  const Index half = window / 2;
  Mask m(static_cast<std::size_t>(length * length), 0);
  for (Index j = 0; j < length; ++j)
    for (Index k = std::max<Index>(0, j - half); k <= std::min(length - 1, j + half); ++k)
      m[static_cast<std::size_t>(j * length + k)] = 1;
  return m;
}

namespace {

ad::Var linear(ad::Tape& t, ad::Var x, const ad::Parameter& w, const ad::Parameter& b) {
  return ad::add_row(ad::matmul(x, t.param(w)), t.param(b));
}

ad::Var windowed_attention(ad::Tape& t, const TransformerLayerParams& l, ad::Var x, const FEMConfig& cfg) {
  const Index c = x.cols(), d = c / cfg.heads, len = x.rows();
  ad::Var q = linear(t, x, l.wq, l.bq);
  ad::Var k = linear(t, x, l.wk, l.bk);
  ad::Var v = linear(t, x, l.wv, l.bv);
  const Mask band = window_mask(len, cfg.window);
  const Real inv_sqrt_d = 1.0 / std::sqrt(static_cast<Real>(d));
  std::vector<ad::Var> heads;
  for (int h = 0; h < cfg.heads; ++h) {
    ad::Var qh = ad::slice_cols(q, h * d, d);
    ad::Var kh = ad::slice_cols(k, h * d, d);
    ad::Var vh = ad::slice_cols(v, h * d, d);
    ad::Var attn = ad::masked_softmax_entries(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt_d), band);
    heads.push_back(ad::matmul(attn, vh));
  }
  return linear(t, ad::concat_cols(heads), l.wo, l.bo);
}

ad::Var zero_padding(ad::Var x, int valid) {
  if (valid >= x.cols()) return x;
  Matrix pattern = Matrix::Zero(x.rows(), x.cols());
  pattern.leftCols(valid).setOnes();
  return ad::mask_mul(x, pattern);
}

}  // namespace

ad::Var contextualize(ad::Tape& tape, const FEMParams& params, ad::Var glyphs) {
  if (glyphs.rows() < 1) throw Error("contextualize needs at least one character feature");
  ad::Var x = glyphs;
  for (const auto& l : params.layers) {
    ad::Var h = ad::layer_norm_rows(x, tape.param(l.ln1_g), tape.param(l.ln1_b));
    x = ad::add(x, windowed_attention(tape, l, h, params.config));
    h = ad::layer_norm_rows(x, tape.param(l.ln2_g), tape.param(l.ln2_b));
    h = linear(tape, ad::gelu(linear(tape, h, l.ff1_w, l.ff1_b)), l.ff2_w, l.ff2_b);
    x = ad::add(x, h);
  }
  return ad::layer_norm_rows(x, tape.param(params.final_g), tape.param(params.final_b));
}

encoder::FeatureMap enhance(ad::Tape& tape, const FEMParams& params, const encoder::FeatureMap& prev,
                            const nd::FeatureSequence& seq, ad::Var rollout, ad::Var context) {
  if (rollout.cols() != seq.size() || rollout.rows() != context.rows())
    throw Error("enhance: rollout, sequence and context shapes disagree");
  ad::Var g = ad::add(seq.rows, ad::matmul_tn(rollout, context));  // S x c
  ad::Var x = ad::transpose(ad::slice_rows(g, 0, seq.size() - 1));  // c x (h*w), EOS row dropped
  const int valid = prev.valid_cols;
  for (const auto& b : params.convs) {
    ad::ConvGeometry geo{prev.channels, prev.height, prev.width, 1, 3, 1, 1, 0, 1};
    ad::Var y = ad::gelu(ad::conv2d(x, tape.param(b.conv1_w), tape.param(b.conv1_b), geo));
    y = ad::conv2d(zero_padding(y, valid), tape.param(b.conv2_w), tape.param(b.conv2_b), geo);
    x = zero_padding(ad::add(x, y), valid);
  }
  encoder::FeatureMap next = prev;
  next.values = x;
  next.iteration = prev.iteration + 1;
  return next;
}

std::vector<nd::DecodeResult> run_iterations(ad::Tape& tape, const encoder::FeatureMap& f0,
                                             const nd::DecoderParams& decoder, const FEMParams& fem,
                                             const nd::SharpenConfig& cfg, const nd::DecodeMode& mode) {
  std::vector<nd::DecodeResult> out;
  encoder::FeatureMap f = f0;
  for (int i = 0; i < fem.config.iterations; ++i) {
    nd::FeatureSequence seq = nd::build_sequence(tape, f, decoder);
    out.push_back(nd::decode(tape, f, seq, decoder, cfg, mode));
    if (i + 1 < fem.config.iterations) {
      ad::Var ctx = contextualize(tape, fem, out.back().glyphs);
      f = enhance(tape, fem, f, seq, out.back().rollout, ctx);
    }
  }
  return out;
}

}  // namespace lister::fem
