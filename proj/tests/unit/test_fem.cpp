// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "lister/fem.hpp"

using namespace lister;
using namespace lister::fem;

namespace {

Matrix gaussian(Index r, Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> g;
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

FEMParams params(int c, std::uint64_t seed, int window = 11, int heads = 8) {
  FEMConfig cfg;
  cfg.window = window;
  cfg.heads = heads;
  std::mt19937_64 rng(seed);
  FEMParams p = init_fem(cfg, c, rng);
  // make every weight matter
  std::normal_distribution<Real> g(0, 0.3);
  for (auto* q : p.parameters())
    for (Index i = 0; i < q->value.size(); ++i) q->value.data()[i] += g(rng);
  return p;
}

Matrix contextualize_value(const FEMParams& p, const Matrix& g) {
  ad::Tape t;
  return contextualize(t, p, t.constant(g)).value();
}

encoder::FeatureMap map_from(ad::Tape& tape, const Matrix& cxw, int valid_cols) {
  encoder::FeatureMap f;
  f.values = tape.constant(cxw);
  f.channels = static_cast<int>(cxw.rows());
  f.width = static_cast<int>(cxw.cols());
  f.valid_cols = valid_cols;
  return f;
}

}  // namespace

TEST_CASE("config validation") {
  FEMConfig c;
  CHECK_NOTHROW(c.validate(16));
  CHECK_THROWS_AS(c.validate(12), Error);  // 8 heads do not divide 12
  c.window = 10;
  CHECK_THROWS_AS(c.validate(16), Error);
  c = {};
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(16), Error);
}

TEST_CASE("window mask is a centred band") {
  const Mask m = window_mask(30, 11);
  for (Index j = 0; j < 30; ++j)
    for (Index k = 0; k < 30; ++k) CHECK(m[static_cast<std::size_t>(j * 30 + k)] == (std::abs(j - k) <= 5 ? 1 : 0));
}

TEST_CASE("contextualize: shape, degenerate length and window locality") {
  const auto p = params(16, 1);
  CHECK(contextualize_value(p, gaussian(1, 16, 2)).rows() == 1);

  Matrix g = gaussian(30, 16, 3);
  const Matrix base = contextualize_value(p, g);
  CHECK(base.rows() == 30);
  CHECK(base.cols() == 16);
  CHECK(base.allFinite());
  g.row(0) += gaussian(1, 16, 4);
  const Matrix moved = contextualize_value(p, g);
  CHECK((moved.row(20) - base.row(20)).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((moved.row(5) - base.row(5)).cwiseAbs().maxCoeff() > 1e-6);
  CHECK((moved.row(6) - base.row(6)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("contextualize: a window covering the sequence equals full attention") {
  auto windowed = params(16, 5, 11);
  auto full = windowed;
  full.config.window = 61;
  const Matrix g = gaussian(3, 16, 6);
  CHECK((contextualize_value(windowed, g) - contextualize_value(full, g)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("contextualize carries no absolute position: permuting inside a full window permutes the output") {
  auto p = params(8, 7, 11, 2);
  const Matrix g = gaussian(4, 8, 8);
  Matrix r = g;
  r.row(0) = g.row(3);
  r.row(3) = g.row(0);
  const Matrix a = contextualize_value(p, g), b = contextualize_value(p, r);
  CHECK((a.row(0) - b.row(3)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((a.row(1) - b.row(1)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("enhance: shape preserved, one-hot rows inject at attended cells") {
  auto p = params(8, 9, 11, 2);
  // drop the conv block so the put-back step is visible directly
  p.convs.clear();
  const Matrix f = gaussian(8, 5, 10);
  ad::Tape t;
  const auto fm = map_from(t, f, 5);
  ad::Parameter eos{"eos", gaussian(1, 8, 11)};
  const auto seq = nd::build_sequence(t, fm, eos);
  Matrix a = Matrix::Zero(3, 6);
  a(0, 1) = 1;
  a(1, 1) = 1;
  a(2, 5) = 1;  // EOS
  const Matrix ctx = gaussian(3, 8, 12);
  const auto next = enhance(t, p, fm, seq, t.constant(a), t.constant(ctx));
  CHECK(next.width == fm.width);
  CHECK(next.channels == fm.channels);
  CHECK(next.iteration == 1);
  Matrix want = f;
  want.col(1) += (ctx.row(0) + ctx.row(1)).transpose();
  CHECK((next.values.value() - want).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(enhance(t, p, fm, seq, t.constant(Matrix::Zero(3, 5)), t.constant(ctx)), Error);
}

TEST_CASE("enhance: zero update through a zeroed residual block is the identity") {
  auto p = params(8, 13, 11, 2);
  p.zero();
  const Matrix f = gaussian(8, 6, 14);
  ad::Tape t;
  const auto fm = map_from(t, f, 6);
  ad::Parameter eos{"eos", gaussian(1, 8, 15)};
  const auto seq = nd::build_sequence(t, fm, eos);
  const Matrix a = Matrix::Constant(2, 7, 1.0 / 7);
  const auto ctx = contextualize(t, p, t.constant(gaussian(2, 8, 16)));
  CHECK(ctx.value().cwiseAbs().maxCoeff() == 0.0);
  const auto next = enhance(t, p, fm, seq, t.constant(a), ctx);
  CHECK((next.values.value() - f).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("enhance keeps padded columns at zero") {
  auto p = params(8, 17, 11, 2);
  Matrix f = gaussian(8, 6, 18);
  f.rightCols(2).setZero();
  ad::Tape t;
  const auto fm = map_from(t, f, 4);
  ad::Parameter eos{"eos", gaussian(1, 8, 19)};
  const auto seq = nd::build_sequence(t, fm, eos);
  Matrix a = Matrix::Zero(2, 7);
  a.row(0).head(4).setConstant(0.25);
  a(1, 6) = 1;
  const auto next = enhance(t, p, fm, seq, t.constant(a), t.constant(gaussian(2, 8, 20)));
  CHECK(next.values.value().rightCols(2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("run_iterations: I passes, and zeroed FEM reproduces the first pass") {
  auto p = params(8, 21, 11, 2);
  p.config.iterations = 3;
  std::mt19937_64 rng(22);
  const auto dec = nd::init_decoder(8, 4, rng, 0.5);
  const Matrix f = gaussian(8, 6, 23);
  {
    ad::Tape t;
    const auto out = run_iterations(t, map_from(t, f, 6), dec, p, nd::SharpenConfig{}, nd::DecodeMode::training(2));
    CHECK(out.size() == 3);
    CHECK((out[0].logits.value() - out[1].logits.value()).cwiseAbs().maxCoeff() > 1e-6);
  }
  p.zero();
  ad::Tape t;
  const auto out = run_iterations(t, map_from(t, f, 6), dec, p, nd::SharpenConfig{}, nd::DecodeMode::training(2));
  CHECK((out[0].logits.value() - out[2].logits.value()).cwiseAbs().maxCoeff() < 1e-12);
}
