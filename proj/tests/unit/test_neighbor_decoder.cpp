// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "lister/neighbor_decoder.hpp"

using namespace lister;
using namespace lister::nd;

namespace {

encoder::FeatureMap map_from(ad::Tape& tape, const Matrix& cxw, int valid_cols) {
  encoder::FeatureMap f;
  f.values = tape.constant(cxw);
  f.channels = static_cast<int>(cxw.rows());
  f.height = 1;
  f.width = static_cast<int>(cxw.cols());
  f.valid_cols = valid_cols;
  return f;
}

DecoderParams random_params(int c, int classes, std::uint64_t seed, Real stddev = 0.5) {
  std::mt19937_64 rng(seed);
  return init_decoder(c, classes, rng, stddev);
}

RowVector row(std::initializer_list<Real> v) {
  RowVector r(static_cast<Index>(v.size()));
  Index i = 0;
  for (Real x : v) r[i++] = x;
  return r;
}

}  // namespace

TEST_CASE("build_sequence appends the EOS embedding and masks padding") {
  ad::Tape tape;
  Matrix f(2, 3);
  f << 1, 3, 5, 2, 4, 6;  // columns are positions
  ad::Parameter eos{"eos", Matrix::Zero(1, 2)};
  const auto seq = build_sequence(tape, map_from(tape, f, 3), eos);
  Matrix want(4, 2);
  want << 1, 2, 3, 4, 5, 6, 0, 0;
  CHECK(seq.rows.value() == want);
  CHECK(seq.size() == 4);
  CHECK(seq.mask == Mask{1, 1, 1, 1});

  ad::Tape t2;
  const auto padded = build_sequence(t2, map_from(t2, f, 2), eos);
  CHECK(padded.mask == Mask{1, 1, 0, 1});
  CHECK(padded.valid_count() == 3);

  ad::Parameter wrong{"eos", Matrix::Zero(1, 3)};
  ad::Tape t3;
  CHECK_THROWS_AS(build_sequence(t3, map_from(t3, f, 3), wrong), Error);
}

TEST_CASE("neighbor matrix is row-stochastic with zero padded columns") {
  const int c = 6;
  auto p = random_params(c, 4, 1);
  std::mt19937_64 rng(2);
  std::normal_distribution<Real> g;
  Matrix f(c, 7);
  for (Index i = 0; i < f.size(); ++i) f.data()[i] = g(rng);
  ad::Tape tape;
  const auto fm = map_from(tape, f, 5);
  const auto seq = build_sequence(tape, fm, p);
  const Matrix n = neighbor_matrix(tape, seq, p).value();
  REQUIRE(n.rows() == 8);
  for (Index r = 0; r < n.rows(); ++r) {
    CHECK(n.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(n(r, 5) == 0.0);
    CHECK(n(r, 6) == 0.0);
    CHECK(n(r, 7) > 0.0);
  }

  // oracle: direct evaluation of one row
  const Matrix h = seq.rows.value();
  RowVector logits = (h.row(2) * p.wq.value * p.wr.value) * (h * p.wk.value).transpose() / std::sqrt(Real(c));
  RowVector e = RowVector::Zero(8);
  Real z = 0;
  for (Index j = 0; j < 8; ++j)
    if (seq.mask[static_cast<std::size_t>(j)]) z += (e[j] = std::exp(logits[j]));
  CHECK((n.row(2) - e / z).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("b_r shifts every logit equally and leaves N unchanged") {
  auto p = random_params(4, 3, 5);
  Matrix f = Matrix::Random(4, 5);
  ad::Tape t1, t2;
  const auto s1 = build_sequence(t1, map_from(t1, f, 5), p);
  const Matrix n1 = neighbor_matrix(t1, s1, p).value();
  p.br.value(0, 0) = 3.7;
  const auto s2 = build_sequence(t2, map_from(t2, f, 5), p);
  const Matrix n2 = neighbor_matrix(t2, s2, p).value();
  CHECK((n1 - n2).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("first attention: support and GAP over valid columns only") {
  auto p = random_params(4, 3, 7);
  Matrix f = Matrix::Random(4, 6);
  {
    ad::Tape tape;
    const auto fm = map_from(tape, f, 1);
    const auto seq = build_sequence(tape, fm, p);
    const Matrix a0 = first_attention(tape, fm, seq, p).value();
    int support = 0;
    for (Index j = 0; j < a0.cols(); ++j) support += a0(0, j) > 0;
    CHECK(support == 2);
    CHECK(a0.sum() == doctest::Approx(1.0));
  }
  // changing padded feature columns must not alter A0 on valid columns
  Matrix g = f;
  g.rightCols(2).setConstant(9.0);
  ad::Tape ta, tb;
  const auto fa = map_from(ta, f, 4), fb = map_from(tb, g, 4);
  const auto sa = build_sequence(ta, fa, p), sb = build_sequence(tb, fb, p);
  const Matrix a = first_attention(ta, fa, sa, p).value(), b = first_attention(tb, fb, sb, p).value();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-14);

  ad::Tape tz;
  const auto fz = map_from(tz, f, 0);
  const auto sz = build_sequence(tz, fz, p);
  CHECK_THROWS_AS(first_attention(tz, fz, sz, p), Error);
}

TEST_CASE("alpha schedule examples and argument errors") {
  SharpenConfig cfg;
  CHECK(alpha_schedule(1, cfg) == 1.0);
  CHECK(alpha_schedule(5, cfg) == 9.0);
  CHECK(alpha_schedule(100, cfg) == 16.0);
  CHECK_THROWS_AS(alpha_schedule(0, cfg), Error);
  CHECK_THROWS_AS(sharpen(row({0.5, 0.5}), 0.0), Error);
  CHECK_THROWS_AS(sharpen(row({0.5, 0.5}), -1.0), Error);

  SharpenConfig bad;
  bad.epsilon = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.mu = 0.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.lambda = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("step: plain and sharpened propagation") {
  Matrix n(3, 3);
  n << 0, 1, 0, 0, 0, 1, 0, 0, 1;
  SharpenConfig off;
  off.enabled = false;
  CHECK(step(row({1, 0, 0}), n, off, 1) == row({0, 1, 0}));
  const RowVector mixed = step(row({0.5, 0.5, 0}), n, off, 3);
  CHECK(mixed == row({0, 0.5, 0.5}));

  SharpenConfig on;
  // j = 3 gives alpha = 5: sharpen([0.6, 0.4, 0]) then shift right
  const RowVector s = step(row({0.6, 0.4, 0}), n, on, 3);
  const Real a = std::expm1(5 * 0.6), b = std::expm1(5 * 0.4);
  CHECK(s[0] == 0.0);
  CHECK(s[1] == doctest::Approx(a / (a + b)).epsilon(1e-12));
  CHECK(s[2] == doctest::Approx(b / (a + b)).epsilon(1e-12));
  CHECK_THROWS_AS(step(row({1, 0}), n, on, 1), Error);
}

TEST_CASE("rollout: crafted routing to EOS") {
  SharpenConfig cfg;
  // positions 0, 1 and EOS at 2; A0 sits on 0, N sends 0 -> EOS with 0.9
  Matrix n(3, 3);
  n << 0, 0.1, 0.9, 0, 0, 1, 0, 0, 1;
  const auto r = rollout(row({1, 0, 0}), n, 2, cfg, 10);
  CHECK(r.terminated);
  REQUIRE(r.rows.rows() == 2);
  CHECK(r.rows(1, 2) == doctest::Approx(0.9));
}

TEST_CASE("rollout: EOS mass above epsilon in the first row stops at once") {
  SharpenConfig cfg;
  Matrix n = Matrix::Identity(3, 3);
  const auto r = rollout(row({0.3, 0, 0.7}), n, 2, cfg, 10);
  CHECK(r.terminated);
  CHECK(r.rows.rows() == 1);
}

TEST_CASE("rollout: an absorbing non-EOS loop hits max_steps") {
  SharpenConfig cfg;
  Matrix n = Matrix::Identity(3, 3);
  const auto r = rollout(row({1, 0, 0}), n, 2, cfg, 7);
  CHECK_FALSE(r.terminated);
  CHECK(r.rows.rows() == 8);
}

TEST_CASE("rollout: mass exactly epsilon does not stop") {
  SharpenConfig cfg;
  cfg.enabled = false;
  Matrix n(2, 2);
  n << 0.4, 0.6, 0, 1;
  const auto r = rollout(row({1, 0}), n, 1, cfg, 5);
  // row 1 has EOS mass 0.6 (not > 0.6); row 2 has 0.84
  REQUIRE(r.rows.rows() == 3);
  CHECK(r.terminated);
}

TEST_CASE("decode: train mode unrolls label length + 1 rows of A0 N^j") {
  auto p = random_params(5, 4, 11);
  Matrix f = Matrix::Random(5, 6);
  ad::Tape tape;
  const auto fm = map_from(tape, f, 5);
  const auto seq = build_sequence(tape, fm, p);
  const auto res = decode(tape, fm, seq, p, SharpenConfig{}, DecodeMode::training(3));
  REQUIRE(res.steps() == 4);
  const Matrix a = res.rollout.value(), n = res.neighbor.value();
  Matrix want = first_attention(tape, fm, seq, p).value();
  for (int j = 0; j < 4; ++j) {
    CHECK((a.row(j) - want).cwiseAbs().maxCoeff() < 1e-12);
    want = want * n;
  }
  CHECK(res.eos_column == 6);
  CHECK(res.positions == 6);
  CHECK(res.logits.rows() == 4);
  CHECK(res.logits.cols() == 4);
  CHECK(res.glyphs.value().isApprox(a * seq.rows.value()));
  CHECK_THROWS_AS(decode(tape, fm, seq, p, SharpenConfig{}, DecodeMode{true, 0}), Error);
}

TEST_CASE("decode: inference defaults max_steps to four times the valid columns") {
  // Wq = Wk = Wr = 0 makes N uniform, so EOS mass per row is 1/S' < epsilon
  auto p = random_params(3, 3, 13);
  p.wq.value.setZero();
  ad::Tape tape(false);
  Matrix f = Matrix::Random(3, 4);
  const auto fm = map_from(tape, f, 3);
  const auto seq = build_sequence(tape, fm, p);
  const auto res = decode(tape, fm, seq, p, SharpenConfig{}, DecodeMode::inference());
  CHECK_FALSE(res.terminated);
  CHECK(res.steps() == 1 + 4 * 3);
}

TEST_CASE("predict_symbols reads rows before the EOS step") {
  Matrix logits(3, 3);
  logits << 0, 5, 1, 3, 0, 1, 0, 0, 9;
  CHECK(predict_symbols(logits, 2) == std::vector<int>{1, 0});
  Matrix with_eos(3, 3);
  with_eos << 0, 0, 9, 3, 0, 1, 0, 0, 9;
  CHECK(predict_symbols(with_eos, 2) == std::vector<int>{0});
}
