// SPDX-License-Identifier: Apache-2.0
//
// Precision-generic numeric kernels shared by the differentiable ops and the
// inference path. Instantiated for float and double.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <type_traits>
#include <vector>

#include "lister/types.hpp"

namespace lister::kernels {

/// Accumulator type: float kernels sum in double so row sums stay within a
/// few float ulps of 1 over long rollouts.
template <typename T>
using Accum = std::conditional_t<std::is_same_v<T, float>, double, T>;

/// Row-wise softmax restricted to columns with `mask[k] == true`.
/// Masked columns come out exactly 0. A row with no unmasked column is all 0.
template <typename T>
MatrixT<T> masked_softmax_rows(const MatrixT<T>& logits, std::span<const std::uint8_t> mask) {
  MatrixT<T> out = MatrixT<T>::Zero(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    T hi = -std::numeric_limits<T>::infinity();
    for (Index k = 0; k < logits.cols(); ++k)
      if (mask[k]) hi = std::max(hi, logits(r, k));
    if (!std::isfinite(hi)) continue;
    RowVectorT<Accum<T>> e = RowVectorT<Accum<T>>::Zero(logits.cols());
    Accum<T> sum = 0;
    for (Index k = 0; k < logits.cols(); ++k) {
      if (!mask[k]) continue;
      e[k] = std::exp(static_cast<Accum<T>>(logits(r, k)) - static_cast<Accum<T>>(hi));
      sum += e[k];
    }
    out.row(r) = (e / sum).template cast<T>();
  }
  return out;
}

/// Same as above with a per-entry mask (row-major, rows*cols entries).
template <typename T>
MatrixT<T> masked_softmax_entries(const MatrixT<T>& logits, std::span<const std::uint8_t> mask) {
  MatrixT<T> out = MatrixT<T>::Zero(logits.rows(), logits.cols());
  const Index cols = logits.cols();
  for (Index r = 0; r < logits.rows(); ++r) {
    T hi = -std::numeric_limits<T>::infinity();
    for (Index k = 0; k < cols; ++k)
      if (mask[r * cols + k]) hi = std::max(hi, logits(r, k));
    if (!std::isfinite(hi)) continue;
    RowVectorT<Accum<T>> e = RowVectorT<Accum<T>>::Zero(cols);
    Accum<T> sum = 0;
    for (Index k = 0; k < cols; ++k) {
      if (!mask[r * cols + k]) continue;
      e[k] = std::exp(static_cast<Accum<T>>(logits(r, k)) - static_cast<Accum<T>>(hi));
      sum += e[k];
    }
    out.row(r) = (e / sum).template cast<T>();
  }
  return out;
}

/// Attention sharpening: out_s = (e^{alpha a_s} - 1) / (sum_t e^{alpha a_t} - S').
/// Entries that are exactly 0 (masked positions) contribute e^0 - 1 = 0, so the
/// count S' of unmasked entries drops out of the denominator automatically.
/// expm1 keeps the small-alpha limit exact to first order.
template <typename T>
RowVectorT<T> sharpen_row(const RowVectorT<T>& row, T alpha) {
  RowVectorT<T> out(row.size());
  T denom = 0;
  for (Index s = 0; s < row.size(); ++s) {
    out[s] = std::expm1(alpha * row[s]);
    denom += out[s];
  }
  return out / denom;
}

/// Temperature softmax over the same row; the flattening contrast to sharpen_row.
template <typename T>
RowVectorT<T> temperature_softmax_row(const RowVectorT<T>& row, T alpha) {
  RowVectorT<T> out = (alpha * row.array()).exp().matrix();
  return out / out.sum();
}

/// One aligner step: next = prev * N.
template <typename T>
RowVectorT<T> rollout_step(const RowVectorT<T>& prev, const MatrixT<T>& neighbor) {
  if constexpr (std::is_same_v<T, Accum<T>>) {
    return prev * neighbor;
  } else {
    return (prev.template cast<Accum<T>>() * neighbor.template cast<Accum<T>>()).template cast<T>();
  }
}

/// Alpha schedule: min(1 + lambda (j - 1), mu), j >= 1.
inline double alpha_at(int j, double lambda, double mu) {
  return std::min(1.0 + lambda * static_cast<double>(j - 1), mu);
}

/// Shannon entropy (natural log), 0 log 0 := 0.
template <typename T>
T entropy(const RowVectorT<T>& row) {
  T h = 0;
  for (Index s = 0; s < row.size(); ++s)
    if (row[s] > 0) h -= row[s] * std::log(row[s]);
  return h;
}

}  // namespace lister::kernels
