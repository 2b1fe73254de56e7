// SPDX-License-Identifier: Apache-2.0
//
// Decoupled-weight-decay Adam and a linear-warmup / cosine-decay schedule.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "lister/autograd.hpp"

namespace lister::optim {

struct Schedule {
  Real peak = 1e-3;
  Real floor = 5e-7;
  long warmup_steps = 200;
  long total_steps = 1000;

  void validate() const;
  /// Learning rate for 0-based `step`: linear ramp to `peak` over the warmup,
  /// then half-cosine down to `floor` at total_steps - 1.
  Real at(long step) const;
};

struct AdamWConfig {
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  Real weight_decay = 0.05;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// One update of every parameter with its gradient in `grads` (missing
  /// gradients count as zero). Decay applies only to parameters flagged `decay`.
  void step(const std::vector<ad::Parameter*>& params, const ad::GradientSet& grads, Real lr);

  long steps() const { return t_; }

 private:
  struct Moments {
    Matrix m, v;
  };
  AdamWConfig cfg_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

/// Scales `grads` so that their global L2 norm is at most `max_norm`; returns the norm before clipping.
Real clip_grad_norm(ad::GradientSet& grads, Real max_norm);

}  // namespace lister::optim
