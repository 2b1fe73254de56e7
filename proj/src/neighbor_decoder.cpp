// SPDX-License-Identifier: Apache-2.0
#include "lister/neighbor_decoder.hpp"

#include <cmath>

#include "lister/kernels.hpp"

namespace lister::nd {

std::vector<ad::Parameter*> DecoderParams::parameters() { return {&wq, &wk, &wr, &br, &eos, &cls_w, &cls_b}; }

DecoderParams init_decoder(int channels, int num_classes, std::mt19937_64& rng, Real stddev) {
  using encoder::truncated_normal;
  DecoderParams p;
  p.channels = channels;
  p.num_classes = num_classes;
  p.wq = {"decoder.Wq", truncated_normal(channels, channels, stddev, rng)};
  p.wk = {"decoder.Wk", truncated_normal(channels, channels, stddev, rng)};
  p.wr = {"decoder.Wr", truncated_normal(channels, channels, stddev, rng)};
  p.br = {"decoder.br", Matrix::Zero(1, 1), false};
  p.eos = {"decoder.eos", truncated_normal(1, channels, 0.02, rng), false};
  p.cls_w = {"decoder.cls_w", truncated_normal(channels, num_classes, 0.02, rng)};
  p.cls_b = {"decoder.cls_b", Matrix::Zero(1, num_classes), false};
  return p;
}

Index FeatureSequence::valid_count() const {
  Index n = 0;
  for (auto b : mask) n += b;
  return n;
}

void SharpenConfig::validate() const {
  if (!(epsilon > 0 && epsilon < 1)) throw Error("epsilon must lie in (0, 1)");
  if (lambda < 0) throw Error("lambda must be >= 0");
  if (mu < 1) throw Error("mu must be >= 1");
  if (max_steps < 0) throw Error("max_steps must be >= 0");
}

FeatureSequence build_sequence(ad::Tape& tape, const FeatureMap& f, const DecoderParams& params) {
  return build_sequence(tape, f, params.eos);
}

FeatureSequence build_sequence(ad::Tape& tape, const FeatureMap& f, const ad::Parameter& eos) {
  if (eos.value.rows() != 1 || f.channels != eos.value.cols())
    throw Error("feature channels do not match the EOS embedding");
  FeatureSequence seq;
  seq.rows = ad::concat_rows({ad::transpose(f.values), tape.param(eos)});
  seq.mask = f.column_mask();
  seq.mask.push_back(1);
  return seq;
}

ad::Var neighbor_matrix(ad::Tape& tape, const FeatureSequence& seq, const DecoderParams& params) {
  const Real inv_sqrt_c = 1.0 / std::sqrt(static_cast<Real>(params.channels));
  ad::Var q = ad::matmul(seq.rows, tape.param(params.wq));
  ad::Var k = ad::matmul(seq.rows, tape.param(params.wk));
  ad::Var logits = ad::scale(ad::matmul_nt(ad::matmul(q, tape.param(params.wr)), k), inv_sqrt_c);
  logits = ad::add_scalar(logits, tape.param(params.br));
  return ad::masked_softmax_rows(logits, seq.mask);
}

ad::Var first_attention(ad::Tape& tape, const FeatureMap& f, const FeatureSequence& seq, const DecoderParams& params) {
  const Index positions = seq.size() - 1;
  if (f.valid_cols < 1) throw Error("feature map has no valid column");
  Matrix pool = Matrix::Zero(1, seq.size());
  const Real valid = static_cast<Real>(f.valid_cols * f.height);
  for (Index i = 0; i < positions; ++i)
    if (seq.mask[static_cast<std::size_t>(i)]) pool(0, i) = 1.0 / valid;
  ad::Var gap = ad::matmul(tape.constant(std::move(pool)), seq.rows);  // EOS weight is 0
  ad::Var q0 = ad::matmul(gap, tape.param(params.wq));
  ad::Var k = ad::matmul(seq.rows, tape.param(params.wk));
  ad::Var logits = ad::scale(ad::matmul_nt(q0, k), 1.0 / std::sqrt(static_cast<Real>(params.channels)));
  return ad::masked_softmax_rows(logits, seq.mask);
}

RowVector sharpen(const RowVector& row, Real alpha) {
  if (!(alpha > 0)) throw Error("sharpening exponent must be > 0");
  return kernels::sharpen_row<Real>(row, alpha);
}

Real alpha_schedule(int j, const SharpenConfig& cfg) {
  if (j < 1) throw Error("alpha schedule is defined for j >= 1");
  return kernels::alpha_at(j, cfg.lambda, cfg.mu);
}

RowVector step(const RowVector& prev, const Matrix& neighbor, const SharpenConfig& cfg, int j) {
  if (prev.size() != neighbor.rows()) throw Error("attention row does not match the neighbor matrix");
  if (!cfg.enabled) return kernels::rollout_step<Real>(prev, neighbor);
  return kernels::rollout_step<Real>(sharpen(prev, alpha_schedule(j, cfg)), neighbor);
}

std::vector<int> predict_symbols(const Matrix& logits, int eos_class) {
  std::vector<int> out;
  for (Index r = 0; r + 1 < logits.rows(); ++r) {
    Index best = 0;
    logits.row(r).maxCoeff(&best);
    if (static_cast<int>(best) != eos_class) out.push_back(static_cast<int>(best));
  }
  return out;
}

InferenceRollout rollout(const RowVector& first, const Matrix& neighbor, Index eos, const SharpenConfig& cfg,
                         int max_steps) {
  if (first.size() != neighbor.rows() || neighbor.rows() != neighbor.cols()) throw Error("rollout: shape mismatch");
  std::vector<RowVector> rows{first};
  bool done = first[eos] > cfg.epsilon;
  for (int j = 1; !done && j <= max_steps; ++j) {
    rows.push_back(step(rows.back(), neighbor, cfg, j));
    done = rows.back()[eos] > cfg.epsilon;
  }
  InferenceRollout out;
  out.terminated = done;
  out.rows.resize(static_cast<Index>(rows.size()), first.size());
  for (std::size_t j = 0; j < rows.size(); ++j) out.rows.row(static_cast<Index>(j)) = rows[j];
  return out;
}

DecodeResult decode(ad::Tape& tape, const FeatureMap& f, const FeatureSequence& seq, const DecoderParams& params,
                    const SharpenConfig& cfg, const DecodeMode& mode) {
  DecodeResult res;
  res.neighbor = neighbor_matrix(tape, seq, params);
  ad::Var a0 = first_attention(tape, f, seq, params);
  const Index eos = seq.eos_index();
  res.eos_column = eos;
  res.positions = seq.valid_count();

  if (mode.train) {
    if (mode.target_steps < 1) throw Error("train-mode decoding needs at least one step");
    std::vector<ad::Var> rows{a0};
    for (int j = 1; j < mode.target_steps; ++j) rows.push_back(ad::matmul(rows.back(), res.neighbor));
    res.rollout = ad::concat_rows(rows);
  } else {
    cfg.validate();
    const int max_steps = cfg.max_steps > 0 ? cfg.max_steps : 4 * f.valid_cols * f.height;
    InferenceRollout r = rollout(a0.value().row(0), res.neighbor.value(), eos, cfg, max_steps);
    res.terminated = r.terminated;
    Matrix a = std::move(r.rows);
    res.rollout = tape.constant(std::move(a));
  }

  res.glyphs = ad::matmul(res.rollout, seq.rows);
  res.logits = ad::add_row(ad::matmul(res.glyphs, tape.param(params.cls_w)), tape.param(params.cls_b));
  res.prediction = predict_symbols(res.logits.value(), params.num_classes - 1);
  return res;
}

}  // namespace lister::nd
