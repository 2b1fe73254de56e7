// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lister {

using Real = double;
using Index = Eigen::Index;

// Row-major throughout: a row is one sequence position / one attention map.
template <typename T>
using MatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVectorT = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using Matrix = MatrixT<Real>;
using RowVector = RowVectorT<Real>;

// Validity bits, one per position (1 = valid).
using Mask = std::vector<std::uint8_t>;

/// Raised on violated preconditions (bad shapes, unknown ids, invalid knobs).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lister
