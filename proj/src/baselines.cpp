// SPDX-License-Identifier: Apache-2.0
#include "lister/baselines.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "lister/kernels.hpp"

namespace lister::baselines {

using encoder::truncated_normal;

namespace {

constexpr Real kNegInf = -std::numeric_limits<Real>::infinity();

Real log_add(Real a, Real b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const Real hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::abs(a - b)));
}

Matrix log_softmax_rows(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (Index r = 0; r < z.rows(); ++r) {
    const Real hi = z.row(r).maxCoeff();
    const Real lse = hi + std::log((z.row(r).array() - hi).exp().sum());
    out.row(r) = z.row(r).array() - lse;
  }
  return out;
}

std::vector<int> interleave_blanks(const std::vector<int>& target, int blank) {
  std::vector<int> ext{blank};
  for (int s : target) {
    ext.push_back(s);
    ext.push_back(blank);
  }
  return ext;
}

// May state s be entered from s - 2 (skipping a blank)?
bool can_skip(const std::vector<int>& ext, std::size_t s, int blank) {
  return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
}

struct Lattice {
  Matrix alpha, beta;  // T x |ext|, log space, emissions included in both
  Real log_prob = kNegInf;
};

Lattice ctc_lattice(const Matrix& logp, const std::vector<int>& ext, int blank, bool with_beta) {
  const Index steps = logp.rows();
  const auto n = static_cast<Index>(ext.size());
  Lattice lat;
  lat.alpha = Matrix::Constant(steps, n, kNegInf);
  if (steps == 0) return lat;
  lat.alpha(0, 0) = logp(0, ext[0]);
  if (n > 1) lat.alpha(0, 1) = logp(0, ext[1]);
  for (Index t = 1; t < steps; ++t) {
    for (Index s = 0; s < n; ++s) {
      Real acc = lat.alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, lat.alpha(t - 1, s - 1));
      if (can_skip(ext, static_cast<std::size_t>(s), blank)) acc = log_add(acc, lat.alpha(t - 1, s - 2));
      if (acc != kNegInf) lat.alpha(t, s) = acc + logp(t, ext[static_cast<std::size_t>(s)]);
    }
  }
  lat.log_prob = lat.alpha(steps - 1, n - 1);
  if (n > 1) lat.log_prob = log_add(lat.log_prob, lat.alpha(steps - 1, n - 2));
  if (!with_beta) return lat;

  lat.beta = Matrix::Constant(steps, n, kNegInf);
  lat.beta(steps - 1, n - 1) = logp(steps - 1, ext[static_cast<std::size_t>(n - 1)]);
  if (n > 1) lat.beta(steps - 1, n - 2) = logp(steps - 1, ext[static_cast<std::size_t>(n - 2)]);
  for (Index t = steps - 2; t >= 0; --t) {
    for (Index s = 0; s < n; ++s) {
      Real acc = lat.beta(t + 1, s);
      if (s + 1 < n) acc = log_add(acc, lat.beta(t + 1, s + 1));
      if (s + 2 < n && can_skip(ext, static_cast<std::size_t>(s + 2), blank)) acc = log_add(acc, lat.beta(t + 1, s + 2));
      if (acc != kNegInf) lat.beta(t, s) = acc + logp(t, ext[static_cast<std::size_t>(s)]);
    }
  }
  return lat;
}

void check_target(const std::vector<int>& target, int blank, Index classes) {
  for (int s : target)
    if (s < 0 || s >= classes || s == blank) throw Error("CTC target id " + std::to_string(s) + " out of range");
}

}  // namespace

CTCHead init_ctc(int channels, int num_symbols, std::mt19937_64& rng) {
  CTCHead h;
  h.channels = channels;
  h.num_symbols = num_symbols;
  h.w = {"ctc.w", truncated_normal(channels, num_symbols + 1, 0.02, rng)};
  h.b = {"ctc.b", Matrix::Zero(1, num_symbols + 1), false};
  return h;
}

ad::Var ctc_column_logits(ad::Tape& tape, const encoder::FeatureMap& f, const CTCHead& head) {
  if (f.height != 1) throw Error("CTC head expects feature maps of height 1");
  ad::Var cols = ad::slice_rows(ad::transpose(f.values), 0, f.valid_cols);
  return ad::add_row(ad::matmul(cols, tape.param(head.w)), tape.param(head.b));
}

Real ctc_loss_value(const Matrix& logits, const std::vector<int>& target, int blank) {
  check_target(target, blank, logits.cols());
  const Lattice lat = ctc_lattice(log_softmax_rows(logits), interleave_blanks(target, blank), blank, false);
  return lat.log_prob == kNegInf ? std::numeric_limits<Real>::infinity() : -lat.log_prob;
}

ad::Var ctc_loss(ad::Var logits, const std::vector<int>& target, int blank) {
  check_target(target, blank, logits.cols());
  const Matrix logp = log_softmax_rows(logits.value());
  const std::vector<int> ext = interleave_blanks(target, blank);
  auto lat = std::make_shared<Lattice>(ctc_lattice(logp, ext, blank, logits.tape().recording()));
  Matrix out(1, 1);
  out(0, 0) = lat->log_prob == kNegInf ? std::numeric_limits<Real>::infinity() : -lat->log_prob;
  return logits.tape().push(std::move(out), {logits}, [logits, lat, ext, logp](ad::Tape& t, const Matrix& g) {
    if (lat->log_prob == kNegInf) return;
    // d(-log P)/dz_tk = p_tk - (1/P) sum_{s: ext_s = k} alpha_t(s) beta_t(s) / y_t(k)
    Matrix occupancy = Matrix::Constant(logp.rows(), logp.cols(), kNegInf);
    for (Index tt = 0; tt < logp.rows(); ++tt)
      for (std::size_t s = 0; s < ext.size(); ++s) {
        const Index k = ext[s];
        const Real v = lat->alpha(tt, static_cast<Index>(s)) + lat->beta(tt, static_cast<Index>(s)) - logp(tt, k);
        occupancy(tt, k) = log_add(occupancy(tt, k), v);
      }
    Matrix d = logp.array().exp().matrix();
    for (Index i = 0; i < d.size(); ++i)
      if (occupancy.data()[i] != kNegInf) d.data()[i] -= std::exp(occupancy.data()[i] - lat->log_prob);
    t.grad(logits) += g(0, 0) * d;
  });
}

std::vector<int> ctc_collapse(const std::vector<int>& path, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int k : path) {
    if (k != prev && k != blank) out.push_back(k);
    prev = k;
  }
  return out;
}

std::vector<int> ctc_greedy_decode(const Matrix& logits, int blank) {
  std::vector<int> path;
  for (Index t = 0; t < logits.rows(); ++t) {
    Index best = 0;
    logits.row(t).maxCoeff(&best);
    path.push_back(static_cast<int>(best));
  }
  return ctc_collapse(path, blank);
}

// ---- PAT -------------------------------------------------------------------

PATHead init_pat(int channels, int num_classes, int max_len, std::mt19937_64& rng) {
  if (max_len < 1) throw Error("PAT needs at least one query");
  PATHead h;
  h.channels = channels;
  h.max_len = max_len;
  h.num_classes = num_classes;
  h.queries = {"pat.queries", truncated_normal(max_len, channels, 0.02, rng)};
  h.eos = {"pat.eos", truncated_normal(1, channels, 0.02, rng), false};
  h.wk = {"pat.wk", truncated_normal(channels, channels, 0.02, rng)};
  h.wv = {"pat.wv", truncated_normal(channels, channels, 0.02, rng)};
  h.cls_w = {"pat.cls_w", truncated_normal(channels, num_classes, 0.02, rng)};
  h.cls_b = {"pat.cls_b", Matrix::Zero(1, num_classes), false};
  return h;
}

Matrix sinusoidal_positions(Index positions, Index channels) {
  Matrix pe(positions, channels);
  for (Index p = 0; p < positions; ++p)
    for (Index i = 0; i < channels; ++i) {
      const Real freq = std::pow(10000.0, -static_cast<Real>(2 * (i / 2)) / static_cast<Real>(channels));
      pe(p, i) = (i % 2 == 0) ? std::sin(static_cast<Real>(p) * freq) : std::cos(static_cast<Real>(p) * freq);
    }
  return pe;
}

PATResult pat_decode(ad::Tape& tape, const nd::FeatureSequence& seq, const PATHead& head) {
  const Index s = seq.size();
  Matrix pe = Matrix::Zero(s, head.channels);
  pe.topRows(s - 1) = sinusoidal_positions(s - 1, head.channels);
  ad::Var keys = ad::matmul(ad::add(seq.rows, tape.constant(std::move(pe))), tape.param(head.wk));
  ad::Var values = ad::matmul(seq.rows, tape.param(head.wv));
  ad::Var scores = ad::scale(ad::matmul_nt(tape.param(head.queries), keys), 1.0 / std::sqrt(static_cast<Real>(head.channels)));
  PATResult r;
  r.attention = ad::masked_softmax_rows(scores, seq.mask);
  r.logits = ad::add_row(ad::matmul(ad::matmul(r.attention, values), tape.param(head.cls_w)), tape.param(head.cls_b));
  const Matrix& z = r.logits.value();
  for (Index t = 0; t < z.rows(); ++t) {
    Index best = 0;
    z.row(t).maxCoeff(&best);
    if (static_cast<int>(best) == head.eos_class()) break;
    r.prediction.push_back(static_cast<int>(best));
  }
  return r;
}

std::vector<int> pat_targets(const std::vector<int>& label, const PATHead& head) {
  std::vector<int> t(static_cast<std::size_t>(head.max_len), head.eos_class());
  for (std::size_t i = 0; i < label.size() && i < t.size(); ++i) t[i] = label[i];
  return t;
}

}  // namespace lister::baselines
