// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "../common/gradcheck.hpp"
#include "lister/autograd.hpp"

using namespace lister;
using lister::testing::check_gradients;

namespace {

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0, scale);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Reduces an op output to a scalar with fixed random weights so every output entry matters.
ad::Var weighted_sum(ad::Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum_all(ad::hadamard(y, y.tape().constant(random_matrix(y.rows(), y.cols(), rng))));
}

void expect_gradients(std::vector<ad::Parameter*> params, const std::function<ad::Var(ad::Tape&)>& f,
                      double tol = 1e-6) {
  for (const auto& e : check_gradients(params, f)) {
    INFO(e.name << " analytic " << e.analytic_norm << " numeric " << e.numeric_norm);
    CHECK(e.relative_error < tol);
  }
}

}  // namespace

TEST_CASE("forward values of basic ops") {
  ad::Tape t;
  Matrix a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  const ad::Var va = t.constant(a), vb = t.constant(b);
  CHECK(ad::matmul(va, vb).value() == a * b);
  CHECK(ad::matmul_nt(va, vb).value() == a * b.transpose());
  CHECK(ad::matmul_tn(va, vb).value() == a.transpose() * b);
  CHECK(ad::sub(va, vb).value() == a - b);
  CHECK(ad::concat_rows({va, vb}).rows() == 4);
  CHECK(ad::concat_cols({va, vb}).cols() == 4);
  CHECK(ad::slice_cols(va, 1, 1).value()(1, 0) == 4);
  CHECK(ad::sum_all(va).scalar() == 10);
  CHECK(ad::gelu(t.constant(Matrix::Zero(1, 1))).scalar() == 0.0);
}

TEST_CASE("matrix products and broadcasting ops differentiate correctly") {
  std::mt19937_64 rng(1);
  ad::Parameter a{"a", random_matrix(3, 4, rng)}, b{"b", random_matrix(4, 2, rng)}, c{"c", random_matrix(3, 4, rng)};
  ad::Parameter row{"row", random_matrix(1, 4, rng)}, col{"col", random_matrix(3, 1, rng)}, s{"s", random_matrix(1, 1, rng)};
  expect_gradients({&a, &b}, [&](ad::Tape& t) { return weighted_sum(ad::matmul(t.param(a), t.param(b)), 1); });
  expect_gradients({&a, &c}, [&](ad::Tape& t) { return weighted_sum(ad::matmul_nt(t.param(a), t.param(c)), 2); });
  expect_gradients({&a, &c}, [&](ad::Tape& t) { return weighted_sum(ad::matmul_tn(t.param(a), t.param(c)), 3); });
  expect_gradients({&a, &c}, [&](ad::Tape& t) { return weighted_sum(ad::hadamard(t.param(a), t.param(c)), 4); });
  expect_gradients({&a, &row}, [&](ad::Tape& t) { return weighted_sum(ad::add_row(t.param(a), t.param(row)), 5); });
  expect_gradients({&a, &col}, [&](ad::Tape& t) { return weighted_sum(ad::add_col(t.param(a), t.param(col)), 6); });
  expect_gradients({&a, &s}, [&](ad::Tape& t) { return weighted_sum(ad::add_scalar(t.param(a), t.param(s)), 7); });
  expect_gradients({&a, &c}, [&](ad::Tape& t) {
    return weighted_sum(ad::scale(ad::sub(t.param(a), t.param(c)), -1.7), 8);
  });
}

TEST_CASE("reshaping ops route gradients to the right entries") {
  std::mt19937_64 rng(2);
  ad::Parameter a{"a", random_matrix(3, 4, rng)}, b{"b", random_matrix(2, 4, rng)}, c{"c", random_matrix(3, 2, rng)};
  expect_gradients({&a}, [&](ad::Tape& t) { return weighted_sum(ad::transpose(t.param(a)), 1); });
  expect_gradients({&a, &b}, [&](ad::Tape& t) { return weighted_sum(ad::concat_rows({t.param(a), t.param(b)}), 2); });
  expect_gradients({&a, &c}, [&](ad::Tape& t) { return weighted_sum(ad::concat_cols({t.param(a), t.param(c)}), 3); });
  expect_gradients({&a}, [&](ad::Tape& t) { return weighted_sum(ad::slice_rows(t.param(a), 1, 2), 4); });
  expect_gradients({&a}, [&](ad::Tape& t) { return weighted_sum(ad::slice_cols(t.param(a), 1, 2), 5); });
  Matrix pattern = Matrix::Ones(3, 4);
  pattern.col(2).setZero();
  expect_gradients({&a}, [&](ad::Tape& t) { return weighted_sum(ad::mask_mul(t.param(a), pattern), 6); });
}

TEST_CASE("nonlinearities and normalisation differentiate correctly") {
  std::mt19937_64 rng(3);
  ad::Parameter a{"a", random_matrix(4, 5, rng, 2.0)};
  ad::Parameter g{"g", random_matrix(1, 5, rng)}, b{"b", random_matrix(1, 5, rng)};
  expect_gradients({&a}, [&](ad::Tape& t) { return weighted_sum(ad::gelu(t.param(a)), 1); });
  expect_gradients({&a, &g, &b}, [&](ad::Tape& t) {
    return weighted_sum(ad::layer_norm_rows(t.param(a), t.param(g), t.param(b)), 2);
  });
  const Mask cols{1, 0, 1, 1, 0};
  expect_gradients({&a}, [&](ad::Tape& t) { return weighted_sum(ad::masked_softmax_rows(t.param(a), cols), 3); });
  Mask entries(20, 1);
  entries[3] = entries[7] = entries[11] = 0;
  expect_gradients({&a}, [&](ad::Tape& t) { return weighted_sum(ad::masked_softmax_entries(t.param(a), entries), 4); });
}

TEST_CASE("gelu uses the exact erf form") {
  ad::Tape t;
  Matrix x(1, 3);
  x << -1.0, 0.5, 2.0;
  const Matrix y = ad::gelu(t.constant(x)).value();
  for (Index i = 0; i < 3; ++i) CHECK(y(0, i) == doctest::Approx(0.5 * x(0, i) * (1 + std::erf(x(0, i) / std::sqrt(2.0)))));
}

TEST_CASE("conv2d matches a direct loop and differentiates correctly") {
  std::mt19937_64 rng(4);
  ad::ConvGeometry g{.in_channels = 2, .height = 5, .width = 7, .kernel_h = 3, .kernel_w = 3,
                     .stride_h = 2, .stride_w = 1, .pad_h = 1, .pad_w = 1};
  ad::Parameter x{"x", random_matrix(2, 35, rng)}, w{"w", random_matrix(3, 18, rng)}, b{"b", random_matrix(3, 1, rng)};
  ad::Tape t;
  const Matrix y = ad::conv2d(t.param(x), t.param(w), t.param(b), g).value();
  REQUIRE(y.rows() == 3);
  REQUIRE(y.cols() == g.out_height() * g.out_width());
  for (Index co = 0; co < 3; ++co)
    for (Index oy = 0; oy < g.out_height(); ++oy)
      for (Index ox = 0; ox < g.out_width(); ++ox) {
        double acc = b.value(co, 0);
        for (Index ci = 0; ci < 2; ++ci)
          for (Index ky = 0; ky < 3; ++ky)
            for (Index kx = 0; kx < 3; ++kx) {
              const Index iy = oy * 2 - 1 + ky, ix = ox - 1 + kx;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 7) continue;
              acc += w.value(co, ci * 9 + ky * 3 + kx) * x.value(ci, iy * 7 + ix);
            }
        CHECK(y(co, oy * g.out_width() + ox) == doctest::Approx(acc).epsilon(1e-12));
      }
  expect_gradients({&x, &w, &b}, [&](ad::Tape& tt) {
    return weighted_sum(ad::conv2d(tt.param(x), tt.param(w), tt.param(b), g), 9);
  });
}

TEST_CASE("dilated conv2d matches a direct loop and differentiates correctly") {
  std::mt19937_64 rng(14);
  ad::ConvGeometry g{.in_channels = 2, .height = 1, .width = 11, .kernel_h = 1, .kernel_w = 3,
                     .stride_h = 1, .stride_w = 1, .pad_h = 0, .pad_w = 4, .dilation_h = 1, .dilation_w = 4};
  REQUIRE(g.out_width() == 11);
  ad::Parameter x{"x", random_matrix(2, 11, rng)}, w{"w", random_matrix(3, 6, rng)}, b{"b", random_matrix(3, 1, rng)};
  ad::Tape t;
  const Matrix y = ad::conv2d(t.param(x), t.param(w), t.param(b), g).value();
  for (Index co = 0; co < 3; ++co)
    for (Index ox = 0; ox < 11; ++ox) {
      double acc = b.value(co, 0);
      for (Index ci = 0; ci < 2; ++ci)
        for (Index kx = 0; kx < 3; ++kx) {
          const Index ix = ox - 4 + 4 * kx;
          if (ix >= 0 && ix < 11) acc += w.value(co, ci * 3 + kx) * x.value(ci, ix);
        }
      CHECK(y(co, ox) == doctest::Approx(acc).epsilon(1e-12));
    }
  expect_gradients({&x, &w, &b}, [&](ad::Tape& tt) {
    return weighted_sum(ad::conv2d(tt.param(x), tt.param(w), tt.param(b), g), 10);
  });
}

TEST_CASE("loss ops: values and gradients") {
  std::mt19937_64 rng(5);
  ad::Parameter z{"z", random_matrix(3, 4, rng)};
  const std::vector<int> targets{2, 0, 3};
  ad::Tape t;
  const Real ce = ad::cross_entropy_rows(t.param(z), targets).scalar();
  double oracle = 0;
  for (Index r = 0; r < 3; ++r) {
    double lse = 0;
    for (Index k = 0; k < 4; ++k) lse += std::exp(z.value(r, k));
    oracle += std::log(lse) - z.value(r, targets[static_cast<std::size_t>(r)]);
  }
  CHECK(ce == doctest::Approx(oracle / 3).epsilon(1e-13));
  expect_gradients({&z}, [&](ad::Tape& tt) { return ad::cross_entropy_rows(tt.param(z), targets); });

  ad::Parameter p{"p", (random_matrix(3, 4, rng).array().abs() + 0.05).matrix()};
  expect_gradients({&p}, [&](ad::Tape& tt) { return ad::neg_log_entry(tt.param(p), 2, 1, 1e-12); });
  expect_gradients({&p}, [&](ad::Tape& tt) { return ad::sum_a_log_a(tt.param(p), 1e-12); });

  Matrix zero = Matrix::Zero(1, 2);
  ad::Tape t2;
  CHECK(ad::neg_log_entry(t2.constant(zero), 0, 0, 1e-12).scalar() == doctest::Approx(-std::log(1e-12)));
  CHECK(ad::sum_a_log_a(t2.constant(zero), 1e-12).scalar() == 0.0);
}

TEST_CASE("gradients from several tapes accumulate into one set") {
  ad::Parameter w{"w", Matrix::Constant(1, 1, 2.0)};
  ad::GradientSet g;
  for (int k = 0; k < 3; ++k) {
    ad::Tape t;
    t.backward(ad::hadamard(t.param(w), t.param(w)), g, 0.5);  // d(w^2)/dw = 2w = 4, weighted 0.5
  }
  REQUIRE(g.find(w) != nullptr);
  CHECK(g.at(w)(0, 0) == doctest::Approx(6.0));
  CHECK(g.squared_norm() == doctest::Approx(36.0));
  g.scale(0.5);
  CHECK(g.at(w)(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("a non-recording tape evaluates without gradients") {
  ad::Parameter w{"w", Matrix::Constant(2, 2, 1.5)};
  ad::Tape t(false);
  const ad::Var y = ad::matmul(t.param(w), t.param(w));
  CHECK(y.value()(0, 0) == doctest::Approx(4.5));
  CHECK_FALSE(t.recording());
}

TEST_CASE("shape mismatches are rejected") {
  ad::Tape t;
  CHECK_THROWS_AS(ad::matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3))), Error);
  CHECK_THROWS_AS(ad::add(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(3, 2))), Error);
}
