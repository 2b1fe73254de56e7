// SPDX-License-Identifier: Apache-2.0
//
// Per-iteration recognition / ending-location / attention-entropy losses and
// their multi-iteration average.
#pragma once

#include <vector>

#include "lister/autograd.hpp"
#include "lister/neighbor_decoder.hpp"

namespace lister::objectives {

inline constexpr Real kLogFloor = 1e-12;

struct LossWeights {
  Real lambda_eos = 0.01;
  Real lambda_ent = 0.001;
};

struct LossTerms {
  Real rec = 0, eos = 0, ent = 0, total = 0;
};

struct LossBreakdown {
  std::vector<LossTerms> per_iteration;
  LossTerms mean;  // arithmetic mean over iterations, field by field
};

/// Mean cross-entropy over the L rows; `target` holds the L class ids
/// (symbols, then the EOS class in the last row).
ad::Var rec_loss(ad::Var logits, const std::vector<int>& target);
/// -log A[L-1, S-1], clamped at kLogFloor.
ad::Var eos_loss(ad::Var rollout, Index eos_column);
/// -(1/L)(1/log(1+S)) sum_jk A_jk log A_jk with 0 log 0 = 0. `positions` is
/// S, the number of attendable (unmasked) positions including EOS.
ad::Var entropy_loss(ad::Var rollout, Index positions);

/// Class targets for a train-mode unroll: label ids followed by `eos_class`.
std::vector<int> decoder_targets(const std::vector<int>& label, int eos_class);

struct IterationLoss {
  ad::Var total;
  LossTerms terms;
};

/// rec + lambda_eos * eos + lambda_ent * ent for one decode pass.
IterationLoss iteration_loss(const nd::DecodeResult& r, const std::vector<int>& target, const LossWeights& w);

/// Mean of the per-iteration totals; `breakdown` receives the scalar values.
ad::Var total_loss(const std::vector<IterationLoss>& iterations, LossBreakdown* breakdown = nullptr);

/// Plain-number combination used by reporting: rec + l1 eos + l2 ent.
Real combine(Real rec, Real eos, Real ent, const LossWeights& w);

}  // namespace lister::objectives
