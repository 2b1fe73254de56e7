// SPDX-License-Identifier: Apache-2.0
#include "lister/optim.hpp"

#include <cmath>
#include <numbers>

namespace lister::optim {

void Schedule::validate() const {
  if (!(peak > 0)) throw Error("peak learning rate must be positive");
  if (!(floor >= 0) || !(floor < peak)) throw Error("learning-rate floor must lie in [0, peak)");
  if (warmup_steps < 0) throw Error("warmup steps must be non-negative");
  if (total_steps < 1) throw Error("total steps must be positive");
  if (warmup_steps >= total_steps)
    throw Error("warmup steps (" + std::to_string(warmup_steps) + ") must be fewer than total steps (" +
                std::to_string(total_steps) + ")");
}

Real Schedule::at(long step) const {
  if (step < warmup_steps) return peak * static_cast<Real>(step + 1) / static_cast<Real>(warmup_steps);
  const long span = total_steps - 1 - warmup_steps;
  if (span <= 0) return peak;
  const Real progress = std::min<Real>(1.0, static_cast<Real>(step - warmup_steps) / static_cast<Real>(span));
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(const std::vector<ad::Parameter*>& params, const ad::GradientSet& grads, Real lr) {
  ++t_;
  const Real c1 = 1.0 - std::pow(cfg_.beta1, static_cast<Real>(t_));
  const Real c2 = 1.0 - std::pow(cfg_.beta2, static_cast<Real>(t_));
  for (ad::Parameter* p : params) {
    Moments& s = state_[p->name];
    if (s.m.size() == 0) {
      s.m = Matrix::Zero(p->value.rows(), p->value.cols());
      s.v = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    if (p->decay && cfg_.weight_decay > 0) p->value *= 1.0 - lr * cfg_.weight_decay;
    const Matrix* g = grads.find(*p);
    if (g) {
      s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * *g;
      s.v = cfg_.beta2 * s.v + (1.0 - cfg_.beta2) * g->cwiseProduct(*g);
    } else {
      s.m *= cfg_.beta1;
      s.v *= cfg_.beta2;
    }
    p->value.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + cfg_.eps);
  }
}

Real clip_grad_norm(ad::GradientSet& grads, Real max_norm) {
  const Real norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

}  // namespace lister::optim
