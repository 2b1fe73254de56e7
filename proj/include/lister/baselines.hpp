// SPDX-License-Identifier: Apache-2.0
//
// Comparison heads sharing the encoder: CTC (dense per-column prediction with
// a blank class) and PAT (a fixed budget of learned queries read out in
// parallel).
#pragma once

#include <random>
#include <vector>

#include "lister/autograd.hpp"
#include "lister/encoder.hpp"
#include "lister/neighbor_decoder.hpp"

namespace lister::baselines {

// ---- CTC -------------------------------------------------------------------

struct CTCHead {
  int channels = 0;
  int num_symbols = 0;
  ad::Parameter w;  // c x (num_symbols + 1)
  ad::Parameter b;  // 1 x (num_symbols + 1)

  int blank() const { return num_symbols; }
  std::vector<ad::Parameter*> parameters() { return {&w, &b}; }
};

CTCHead init_ctc(int channels, int num_symbols, std::mt19937_64& rng);

/// Per-column logits over the valid feature columns: valid_cols x (num_symbols + 1).
ad::Var ctc_column_logits(ad::Tape& tape, const encoder::FeatureMap& f, const CTCHead& head);

/// -log sum over alignments of prod_t softmax(logits)_t, by the forward
/// recursion over the blank-interleaved target in log space. +infinity when no
/// alignment fits in the available columns.
Real ctc_loss_value(const Matrix& logits, const std::vector<int>& target, int blank);

/// Differentiable form (alpha-beta posteriors). An infeasible target yields an
/// infinite value and contributes no gradient.
ad::Var ctc_loss(ad::Var logits, const std::vector<int>& target, int blank);

/// Collapse adjacent repeats, then drop blanks.
std::vector<int> ctc_collapse(const std::vector<int>& path, int blank);
/// Per-column argmax followed by ctc_collapse.
std::vector<int> ctc_greedy_decode(const Matrix& logits, int blank);

// ---- PAT -------------------------------------------------------------------

struct PATHead {
  int channels = 0;
  int max_len = 12;    // T_max learned queries
  int num_classes = 0; // symbols + EOS
  ad::Parameter queries;  // T_max x c
  ad::Parameter eos;      // 1 x c, appended like the neighbor decoder's EOS row
  ad::Parameter wk, wv;   // c x c
  ad::Parameter cls_w;    // c x num_classes
  ad::Parameter cls_b;    // 1 x num_classes

  int eos_class() const { return num_classes - 1; }
  std::vector<ad::Parameter*> parameters() { return {&queries, &eos, &wk, &wv, &cls_w, &cls_b}; }
};

PATHead init_pat(int channels, int num_classes, int max_len, std::mt19937_64& rng);

struct PATResult {
  ad::Var attention;  // T_max x S
  ad::Var logits;     // T_max x num_classes
  std::vector<int> prediction;  // argmax symbols up to the first EOS
};

/// Sinusoidal position codes for `positions` rows of width `channels`.
Matrix sinusoidal_positions(Index positions, Index channels);

/// One cross-attention readout per query. Keys carry sinusoidal position codes
/// on the feature rows (the EOS row gets none); values do not.
PATResult pat_decode(ad::Tape& tape, const nd::FeatureSequence& seq, const PATHead& head);

/// Targets for the T_max rows: label (truncated to T_max) then EOS padding.
std::vector<int> pat_targets(const std::vector<int>& label, const PATHead& head);

}  // namespace lister::baselines
