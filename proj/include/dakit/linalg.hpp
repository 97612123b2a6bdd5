#pragma once

#include <algorithm>
#include <cmath>

#include "dakit/types.hpp"

namespace dakit {

template <class Scalar>
Mat<Scalar> symmetrized(const Mat<Scalar>& a) {
  return ((a + a.transpose()) * Scalar(0.5)).eval();
}

// Lower-triangular factor L with L L^T ~= a for a symmetric positive
// SEMIdefinite matrix. Pivots below -1e-10 * scale throw; pivots that are
// zero to working precision have their column zeroed, so rank-deficient
// covariances (including a == 0) factor cleanly and sampling through L
// degenerates to the mean in the null directions.
template <class Scalar>
Mat<Scalar> cholesky_factor(const Mat<Scalar>& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("cholesky_factor: matrix not square");
  const Index n = a.rows();
  Mat<Scalar> s = symmetrized(a);
  Mat<Scalar> l = Mat<Scalar>::Zero(n, n);
  if (n == 0) return l;
  Scalar scale = s.diagonal().cwiseAbs().sum();
  if (scale <= Scalar(0)) scale = Scalar(1);
  const Scalar negative_tol = Scalar(1e-10) * scale;
  const Scalar drop_tol = Scalar(1e-14) * scale;
  for (Index k = 0; k < n; ++k) {
    Scalar pivot = s(k, k);
    for (Index i = 0; i < k; ++i) pivot -= l(k, i) * l(k, i);
    if (pivot < -negative_tol)
      throw NotPositiveSemiDefinite("cholesky_factor: negative pivot beyond tolerance");
    if (pivot <= drop_tol) {
      // Singular direction: leave the column zero.
      continue;
    }
    l(k, k) = std::sqrt(pivot);
    for (Index j = k + 1; j < n; ++j) {
      Scalar v = s(j, k);
      for (Index i = 0; i < k; ++i) v -= l(j, i) * l(k, i);
      l(j, k) = v / l(k, k);
    }
  }
  return l;
}

// (a + u c v)^{-1} = a^{-1} - a^{-1} u (c^{-1} + v a^{-1} u)^{-1} v a^{-1},
// for symmetric positive definite a and c. This is how the covariance-form
// and precision-form Kalman updates are reconciled.
template <class Scalar>
Mat<Scalar> woodbury_inverse(const Mat<Scalar>& a, const Mat<Scalar>& u,
                             const Mat<Scalar>& c, const Mat<Scalar>& v) {
  require(a.rows() == a.cols(), "woodbury_inverse: a not square");
  require(c.rows() == c.cols(), "woodbury_inverse: c not square");
  require(u.rows() == a.rows() && u.cols() == c.rows(),
          "woodbury_inverse: u dimensions");
  require(v.rows() == c.rows() && v.cols() == a.cols(),
          "woodbury_inverse: v dimensions");
  Eigen::LLT<Mat<Scalar>> a_llt(symmetrized(a));
  if (a_llt.info() != Eigen::Success)
    throw NotPositiveSemiDefinite("woodbury_inverse: a not positive definite");
  Eigen::LLT<Mat<Scalar>> c_llt(symmetrized(c));
  if (c_llt.info() != Eigen::Success)
    throw NotPositiveSemiDefinite("woodbury_inverse: c not positive definite");
  const Mat<Scalar> a_inv = a_llt.solve(Mat<Scalar>::Identity(a.rows(), a.rows()));
  const Mat<Scalar> c_inv = c_llt.solve(Mat<Scalar>::Identity(c.rows(), c.rows()));
  const Mat<Scalar> core = c_inv + v * a_inv * u;
  Eigen::PartialPivLU<Mat<Scalar>> core_lu(core);
  return a_inv - a_inv * u * core_lu.solve(v * a_inv);
}

// Solve a x = b for symmetric positive definite a via LLT.
template <class Scalar>
Mat<Scalar> spd_solve(const Mat<Scalar>& a, const Mat<Scalar>& b) {
  Eigen::LLT<Mat<Scalar>> llt(symmetrized(a));
  if (llt.info() != Eigen::Success)
    throw NotPositiveSemiDefinite("spd_solve: matrix not positive definite");
  return llt.solve(b);
}

template <class Scalar>
Mat<Scalar> spd_inverse(const Mat<Scalar>& a) {
  return spd_solve<Scalar>(a, Mat<Scalar>::Identity(a.rows(), a.rows()));
}

// Symmetric square root via eigendecomposition (for symmetric positive
// semidefinite input; tiny negative eigenvalues are clamped to zero).
template <class Scalar>
Mat<Scalar> symmetric_sqrt(const Mat<Scalar>& a) {
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> eigen(symmetrized(a));
  if (eigen.info() != Eigen::Success)
    throw NotPositiveSemiDefinite("symmetric_sqrt: eigendecomposition failed");
  Vec<Scalar> values = eigen.eigenvalues();
  const Scalar scale = std::max(values.cwiseAbs().maxCoeff(), Scalar(1));
  for (Index i = 0; i < values.size(); ++i) {
    if (values[i] < -Scalar(1e-10) * scale)
      throw NotPositiveSemiDefinite("symmetric_sqrt: negative eigenvalue");
    values[i] = values[i] > Scalar(0) ? std::sqrt(values[i]) : Scalar(0);
  }
  return eigen.eigenvectors() * values.asDiagonal() * eigen.eigenvectors().transpose();
}

}  // namespace dakit
