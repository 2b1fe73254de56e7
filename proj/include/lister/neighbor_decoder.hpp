// SPDX-License-Identifier: Apache-2.0
//
// Neighbor decoding: a feature map becomes a string of any length by walking a
// learned next-neighbor matrix from a located first character until the
// end-of-sequence slot collects enough attention mass.
#pragma once

#include <random>
#include <vector>

#include "lister/autograd.hpp"
#include "lister/encoder.hpp"

namespace lister::nd {

using encoder::FeatureMap;

/// Bilinear neighbor weights, EOS embedding and the character classifier.
struct DecoderParams {
  int channels = 0;
  int num_classes = 0;
  ad::Parameter wq, wk, wr;  // c x c
  ad::Parameter br;          // 1 x 1
  ad::Parameter eos;         // 1 x c
  ad::Parameter cls_w;       // c x num_classes
  ad::Parameter cls_b;       // 1 x num_classes

  std::vector<ad::Parameter*> parameters();
};

/// Truncated-normal init; `stddev` applies to the bilinear projections Wq, Wk, Wr.
DecoderParams init_decoder(int channels, int num_classes, std::mt19937_64& rng, Real stddev = 0.02);

/// Flattened feature rows followed by the EOS embedding (S = h*w + 1 rows).
struct FeatureSequence {
  ad::Var rows;  // S x c
  Mask mask;     // S bits; padded positions 0, EOS always 1

  Index size() const { return static_cast<Index>(mask.size()); }
  Index eos_index() const { return size() - 1; }
  Index valid_count() const;
};

struct SharpenConfig {
  bool enabled = true;
  Real lambda = 2.0;
  Real mu = 16.0;
  Real epsilon = 0.6;
  int max_steps = 0;  // 0 means 4 * (valid feature columns)

  void validate() const;
};

FeatureSequence build_sequence(ad::Tape& tape, const FeatureMap& f, const DecoderParams& params);
/// Same, with an explicit 1 x c end-of-sequence embedding.
FeatureSequence build_sequence(ad::Tape& tape, const FeatureMap& f, const ad::Parameter& eos);

/// softmax((H Wq) Wr (H Wk)^T / sqrt(c) + b_r), row-wise over unmasked columns.
ad::Var neighbor_matrix(ad::Tape& tape, const FeatureSequence& seq, const DecoderParams& params);

/// softmax(GAP(F) Wq (H Wk)^T / sqrt(c)) over unmasked columns; GAP covers valid columns only.
ad::Var first_attention(ad::Tape& tape, const FeatureMap& f, const FeatureSequence& seq, const DecoderParams& params);

/// Probability-row sharpening with exponent alpha (> 0); zero entries stay zero.
RowVector sharpen(const RowVector& row, Real alpha);

/// alpha_j = min(1 + lambda (j - 1), mu), j >= 1.
Real alpha_schedule(int j, const SharpenConfig& cfg);

/// Produces row j from row j-1: sharpen(prev, alpha_j) N when sharpening is
/// enabled, prev N otherwise.
RowVector step(const RowVector& prev, const Matrix& neighbor, const SharpenConfig& cfg, int j);

struct InferenceRollout {
  Matrix rows;  // L x S
  bool terminated = true;
};

/// Inference-mode rollout from a first row and a neighbor matrix: stops at the
/// first row (row 0 included) whose `eos` entry exceeds epsilon, or after
/// `max_steps` further rows with terminated=false.
InferenceRollout rollout(const RowVector& first, const Matrix& neighbor, Index eos, const SharpenConfig& cfg,
                         int max_steps);

struct DecodeMode {
  bool train = false;
  int target_steps = 0;  // train: label length + 1 rows are unrolled

  static DecodeMode inference() { return {}; }
  static DecodeMode training(int label_length) { return {true, label_length + 1}; }
};

struct DecodeResult {
  ad::Var rollout;   // L x S attention maps (last row is the EOS step)
  ad::Var glyphs;    // L x c aligned character features
  ad::Var logits;    // L x num_classes
  ad::Var neighbor;  // S x S
  Index eos_column = 0;  // S - 1
  Index positions = 0;   // unmasked positions, EOS included
  bool terminated = true;
  std::vector<int> prediction;  // argmax symbols of rows 0..L-2

  Index steps() const { return rollout.rows(); }
};

/// Train mode unrolls exactly `target_steps` rows through the tape without
/// sharpening or stopping. Inference stops at the first row whose EOS mass
/// exceeds epsilon (row 0 included) or reports terminated=false after
/// max_steps further rows; the rollout is then a constant on the tape.
DecodeResult decode(ad::Tape& tape, const FeatureMap& f, const FeatureSequence& seq, const DecoderParams& params,
                    const SharpenConfig& cfg, const DecodeMode& mode);

/// Argmax classes of rows 0..L-2, dropping any EOS-class argmax.
std::vector<int> predict_symbols(const Matrix& logits, int eos_class);

}  // namespace lister::nd
