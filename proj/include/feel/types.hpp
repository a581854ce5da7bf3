#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace feel {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Bad arguments: dimension mismatches, empty datasets, zero probabilities.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed external files (IDX images/labels).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Model parameters w. Flattened row-major (class, feature) for multinomial models.
template <typename Scalar>
using ModelParams = VectorX<Scalar>;

/// A dense gradient together with its L2 norm.
///
/// The norm is computed once on construction. The values are not exposed
/// mutably, so the cached norm cannot go stale.
template <typename Scalar>
class GradientVector {
 public:
  GradientVector() = default;

  explicit GradientVector(VectorX<Scalar> values)
      : values_(std::move(values)), norm_(values_.norm()) {
    if (!values_.allFinite()) {
      throw InvalidInput("gradient has non-finite entries");
    }
  }

  static GradientVector zeros(Eigen::Index size) {
    return GradientVector(VectorX<Scalar>::Zero(size));
  }

  const VectorX<Scalar>& values() const { return values_; }
  Scalar norm() const { return norm_; }
  Scalar squared_norm() const { return norm_ * norm_; }
  Eigen::Index size() const { return values_.size(); }

 private:
  VectorX<Scalar> values_;
  Scalar norm_ = Scalar(0);
};

using Gradient = GradientVector<double>;

}  // namespace feel
