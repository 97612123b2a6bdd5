#pragma once

#include <cmath>

#include "dakit/linalg.hpp"
#include "dakit/rng.hpp"
#include "dakit/types.hpp"

namespace dakit {

// Mean and covariance of a Gaussian on R^n. The covariance is symmetrized on
// construction; positive semidefiniteness is enforced where it is actually
// needed (factorization and density evaluation).
template <class Scalar>
struct GaussianState {
  Vec<Scalar> mean;
  Mat<Scalar> cov;

  GaussianState() = default;

  GaussianState(Vec<Scalar> mean_in, Mat<Scalar> cov_in)
      : mean(std::move(mean_in)), cov(std::move(cov_in)) {
    require(cov.rows() == cov.cols(), "GaussianState: covariance not square");
    require(cov.rows() == mean.size(), "GaussianState: mean/covariance dimensions");
    cov = symmetrized(cov);
  }

  Index dim() const { return mean.size(); }
};

template <class Scalar>
GaussianState<Scalar> make_isotropic_gaussian(const Vec<Scalar>& mean, Scalar variance) {
  if (variance < Scalar(0)) throw InvalidVariance("make_isotropic_gaussian: variance < 0");
  return GaussianState<Scalar>(
      mean, (variance * Mat<Scalar>::Identity(mean.size(), mean.size())).eval());
}

template <class Scalar>
Vec<Scalar> sample_gaussian_prefactored(const Vec<Scalar>& mean,
                                        const Mat<Scalar>& chol_lower,
                                        RngStream& rng) {
  require(chol_lower.rows() == mean.size() && chol_lower.cols() == mean.size(),
          "sample_gaussian_prefactored: factor dimensions");
  return mean + chol_lower * rng.normal_vector<Scalar>(mean.size());
}

template <class Scalar>
Vec<Scalar> sample_gaussian(const GaussianState<Scalar>& g, RngStream& rng) {
  return sample_gaussian_prefactored<Scalar>(g.mean, cholesky_factor(g.cov), rng);
}

// log N(x; mean, cov); requires a strictly positive definite covariance.
template <class Scalar>
Scalar gaussian_log_density(const GaussianState<Scalar>& g, const Vec<Scalar>& x) {
  require(x.size() == g.dim(), "gaussian_log_density: point dimension");
  Eigen::LLT<Mat<Scalar>> llt(g.cov);
  if (llt.info() != Eigen::Success)
    throw NotPositiveSemiDefinite("gaussian_log_density: covariance not positive definite");
  const Vec<Scalar> centered = x - g.mean;
  const Vec<Scalar> whitened = llt.matrixL().solve(centered);
  Scalar log_det = Scalar(0);
  for (Index i = 0; i < g.dim(); ++i) log_det += std::log(llt.matrixL()(i, i));
  constexpr Scalar log_two_pi = Scalar(1.8378770664093454836L);
  return -Scalar(0.5) * whitened.squaredNorm() - log_det -
         Scalar(0.5) * Scalar(g.dim()) * log_two_pi;
}

// 0.5 * |x|^2 weighted by the inverse of cov: the quadratic form that shows
// up in every negative log density in this library.
template <class Scalar>
Scalar half_weighted_squared_norm(const Mat<Scalar>& cov, const Vec<Scalar>& x) {
  require(cov.rows() == x.size(), "half_weighted_squared_norm: dimensions");
  Eigen::LLT<Mat<Scalar>> llt(symmetrized(cov));
  if (llt.info() != Eigen::Success)
    throw NotPositiveSemiDefinite("half_weighted_squared_norm: weight not positive definite");
  return Scalar(0.5) * llt.matrixL().solve(x).squaredNorm();
}

}  // namespace dakit
