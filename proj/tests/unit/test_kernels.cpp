// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "lister/kernels.hpp"

using namespace lister;

namespace {

Mask all_valid(Index n) { return Mask(static_cast<std::size_t>(n), 1); }

}  // namespace

TEST_CASE("masked softmax of equal logits is uniform") {
  const Matrix z = Matrix::Constant(4, 4, 3.25);
  const Mask m = all_valid(4);
  const Matrix p = kernels::masked_softmax_rows<Real>(z, m);
  for (Index i = 0; i < p.size(); ++i) CHECK(p.data()[i] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("masked softmax zeroes masked columns and renormalises the rest") {
  Matrix z(3, 3);
  z << 0.3, -1.0, 2.0, 1.5, 0.2, -0.7, 0.0, 4.0, 0.0;
  const Mask m{1, 0, 1};
  const Matrix p = kernels::masked_softmax_rows<Real>(z, m);
  for (Index r = 0; r < 3; ++r) {
    CHECK(p(r, 1) == 0.0);
    const double e0 = std::exp(z(r, 0)), e2 = std::exp(z(r, 2));
    CHECK(p(r, 0) == doctest::Approx(e0 / (e0 + e2)).epsilon(1e-14));
    CHECK(p(r, 2) == doctest::Approx(e2 / (e0 + e2)).epsilon(1e-14));
  }
}

TEST_CASE("masked softmax rows sum to one in both precisions") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0, 3);
  Matrix z(6, 9);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng);
  const Mask m{1, 1, 0, 1, 0, 1, 1, 1, 1};
  const Matrix p = kernels::masked_softmax_rows<Real>(z, m);
  const MatrixT<float> pf = kernels::masked_softmax_rows<float>(z.cast<float>(), m);
  for (Index r = 0; r < 6; ++r) {
    CHECK(std::abs(p.row(r).sum() - 1.0) < 1e-12);
    CHECK(std::abs(pf.row(r).sum() - 1.0f) < 1e-5f);
    CHECK(p(r, 2) == 0.0);
    CHECK(pf(r, 4) == 0.0f);
  }
}

TEST_CASE("entry-masked softmax follows a per-entry pattern") {
  Matrix z = Matrix::Zero(2, 3);
  const Mask m{1, 1, 0, 0, 1, 1};
  const Matrix p = kernels::masked_softmax_entries<Real>(z, m);
  CHECK(p(0, 0) == doctest::Approx(0.5));
  CHECK(p(0, 2) == 0.0);
  CHECK(p(1, 0) == 0.0);
  CHECK(p(1, 2) == doctest::Approx(0.5));
}

TEST_CASE("sharpening matches direct evaluation on [0.6, 0.3, 0.1] at alpha 2") {
  RowVector row(3);
  row << 0.6, 0.3, 0.1;
  const RowVector out = kernels::sharpen_row<Real>(row, 2.0);
  // Independent evaluation with exp and an explicit -S' term.
  const double denom = std::exp(1.2) + std::exp(0.6) + std::exp(0.2) - 3.0;
  CHECK(out[0] == doctest::Approx((std::exp(1.2) - 1.0) / denom).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx((std::exp(0.6) - 1.0) / denom).epsilon(1e-12));
  CHECK(out[2] == doctest::Approx((std::exp(0.2) - 1.0) / denom).epsilon(1e-12));
  CHECK(out[0] == doctest::Approx(0.6898).epsilon(1e-4));
  CHECK(out[1] == doctest::Approx(0.2444).epsilon(1e-3));
  CHECK(out[2] == doctest::Approx(0.0658).epsilon(1e-3));
}

TEST_CASE("sharpening fixes one-hot rows and is the identity for tiny alpha") {
  RowVector hot = RowVector::Zero(5);
  hot[3] = 1.0;
  for (double a : {1e-3, 1.0, 7.0, 16.0}) CHECK(kernels::sharpen_row<Real>(hot, a) == hot);
  RowVector row(4);
  row << 0.1, 0.2, 0.3, 0.4;
  const RowVector out = kernels::sharpen_row<Real>(row, 1e-6);
  for (Index s = 0; s < 4; ++s) CHECK(std::abs(out[s] - row[s]) < 1e-5);
}

TEST_CASE("masked (zero) entries stay zero under sharpening") {
  RowVector row(4);
  row << 0.5, 0.0, 0.5, 0.0;
  const RowVector out = kernels::sharpen_row<Real>(row, 4.0);
  CHECK(out[1] == 0.0);
  CHECK(out[3] == 0.0);
  CHECK(out[0] == doctest::Approx(0.5));
}

TEST_CASE("alpha schedule") {
  CHECK(kernels::alpha_at(1, 2, 16) == 1.0);
  CHECK(kernels::alpha_at(5, 2, 16) == 9.0);
  CHECK(kernels::alpha_at(100, 2, 16) == 16.0);
  CHECK(kernels::alpha_at(8, 2, 16) == 15.0);
  CHECK(kernels::alpha_at(9, 2, 16) == 16.0);
}

TEST_CASE("rollout step is a row-vector product") {
  RowVector prev(3);
  prev << 0.5, 0.5, 0.0;
  Matrix n(3, 3);
  n << 0, 1, 0, 0, 0, 1, 1, 0, 0;
  const RowVector next = kernels::rollout_step<Real>(prev, n);
  CHECK(next[0] == 0.0);
  CHECK(next[1] == 0.5);
  CHECK(next[2] == 0.5);
}

TEST_CASE("entropy of a uniform row is log S") {
  const RowVector u = RowVector::Constant(7, 1.0 / 7);
  CHECK(kernels::entropy<Real>(u) == doctest::Approx(std::log(7.0)).epsilon(1e-14));
  RowVector hot = RowVector::Zero(4);
  hot[0] = 1;
  CHECK(kernels::entropy<Real>(hot) == 0.0);
}
