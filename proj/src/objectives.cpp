// SPDX-License-Identifier: Apache-2.0
#include "lister/objectives.hpp"

#include <cmath>

namespace lister::objectives {

ad::Var rec_loss(ad::Var logits, const std::vector<int>& target) {
  return ad::cross_entropy_rows(logits, target);
}

ad::Var eos_loss(ad::Var rollout, Index eos_column) {
  return ad::neg_log_entry(rollout, rollout.rows() - 1, eos_column, kLogFloor);
}

ad::Var entropy_loss(ad::Var rollout, Index positions) {
  if (positions < 1) throw Error("entropy_loss needs at least one position");
  const Real norm = 1.0 / (static_cast<Real>(rollout.rows()) * std::log(1.0 + static_cast<Real>(positions)));
  return ad::scale(ad::sum_a_log_a(rollout, kLogFloor), -norm);
}

std::vector<int> decoder_targets(const std::vector<int>& label, int eos_class) {
  std::vector<int> t(label);
  t.push_back(eos_class);
  return t;
}

IterationLoss iteration_loss(const nd::DecodeResult& r, const std::vector<int>& target, const LossWeights& w) {
  if (static_cast<Index>(target.size()) != r.steps())
    throw Error("target length + 1 must equal the number of unrolled steps");
  ad::Var rec = rec_loss(r.logits, target);
  ad::Var eos = eos_loss(r.rollout, r.eos_column);
  ad::Var ent = entropy_loss(r.rollout, r.positions);
  IterationLoss out;
  out.total = ad::add(rec, ad::add(ad::scale(eos, w.lambda_eos), ad::scale(ent, w.lambda_ent)));
  out.terms = {rec.scalar(), eos.scalar(), ent.scalar(), out.total.scalar()};
  return out;
}

ad::Var total_loss(const std::vector<IterationLoss>& iterations, LossBreakdown* breakdown) {
  if (iterations.empty()) throw Error("total_loss needs at least one iteration");
  ad::Var sum = iterations.front().total;
  for (std::size_t i = 1; i < iterations.size(); ++i) sum = ad::add(sum, iterations[i].total);
  const Real inv = 1.0 / static_cast<Real>(iterations.size());
  if (breakdown) {
    breakdown->per_iteration.clear();
    breakdown->mean = {};
    for (const auto& it : iterations) {
      breakdown->per_iteration.push_back(it.terms);
      breakdown->mean.rec += it.terms.rec * inv;
      breakdown->mean.eos += it.terms.eos * inv;
      breakdown->mean.ent += it.terms.ent * inv;
      breakdown->mean.total += it.terms.total * inv;
    }
  }
  return ad::scale(sum, inv);
}

Real combine(Real rec, Real eos, Real ent, const LossWeights& w) { return rec + w.lambda_eos * eos + w.lambda_ent * ent; }

}  // namespace lister::objectives
