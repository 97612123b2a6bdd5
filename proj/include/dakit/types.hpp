#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace dakit {

using Index = Eigen::Index;

template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vecd = Vec<double>;
using Matd = Mat<double>;

// A discrete-time path v_0, v_1, ..., v_J (J+1 entries, all the same dimension).
template <class Scalar>
using Trajectory = std::vector<Vec<Scalar>>;

struct DimensionMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NotPositiveSemiDefinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteState : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteObjective : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ZeroModelNoise : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegeneratePosterior : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SingularPrecision : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Innovation covariance not invertible; cannot occur while the observation
// noise covariance is positive definite.
struct SingularS : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidVariance : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct GridMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct EmptySamples : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NonInvertibleMap : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BlowUpLimit : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ZeroWeightSum : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonEnsembleFilter : std::logic_error {
  using std::logic_error::logic_error;
};

struct ConfigMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& x) {
  return x.allFinite();
}

inline void require(bool condition, const char* message) {
  if (!condition) throw DimensionMismatch(message);
}

}  // namespace dakit
