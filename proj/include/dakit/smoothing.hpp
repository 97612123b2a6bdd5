#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "dakit/gaussian.hpp"
#include "dakit/linalg.hpp"
#include "dakit/models.hpp"
#include "dakit/prob.hpp"
#include "dakit/types.hpp"

namespace dakit {

// The smoothing setup: noisy dynamics (or deterministic when sigma is empty),
// linear observations y_1..y_J of v_1..v_J, Gaussian prior on v_0.
template <class Scalar>
struct SmoothingProblem {
  ModelSpec<Scalar> model;
  ObservationOperator<Scalar> obs;
  std::optional<Mat<Scalar>> sigma;
  Mat<Scalar> gamma;
  GaussianState<Scalar> prior;
  std::vector<Vec<Scalar>> data;

  Index steps() const { return static_cast<Index>(data.size()); }
  Index dim() const { return prior.dim(); }
  bool deterministic() const { return !sigma.has_value(); }
};

template <class Scalar>
void validate_problem(const SmoothingProblem<Scalar>& p) {
  validate_model(p.model);
  const Index n = state_dim(p.model);
  if (p.prior.dim() != n) throw ValidationError("smoothing problem: prior dimension");
  if (p.obs.state_dim() != n) throw ValidationError("smoothing problem: observation dimension");
  if (p.gamma.rows() != p.obs.obs_dim() || p.gamma.cols() != p.obs.obs_dim())
    throw ValidationError("smoothing problem: Gamma dimension");
  if (p.sigma && (p.sigma->rows() != n || p.sigma->cols() != n))
    throw ValidationError("smoothing problem: Sigma dimension");
  for (const auto& y : p.data)
    if (y.size() != p.obs.obs_dim())
      throw ValidationError("smoothing problem: observation size");
}

template <class Scalar>
Vec<Scalar> flatten(const Trajectory<Scalar>& path) {
  if (path.empty()) throw EmptySamples("flatten: empty trajectory");
  const Index n = path.front().size();
  Vec<Scalar> out(static_cast<Index>(path.size()) * n);
  for (std::size_t j = 0; j < path.size(); ++j)
    out.segment(static_cast<Index>(j) * n, n) = path[j];
  return out;
}

template <class Scalar>
Trajectory<Scalar> unflatten(const Vec<Scalar>& flat, Index dim) {
  require(dim > 0 && flat.size() % dim == 0, "unflatten: length not a multiple of dim");
  Trajectory<Scalar> path(static_cast<std::size_t>(flat.size() / dim));
  for (std::size_t j = 0; j < path.size(); ++j)
    path[j] = flat.segment(static_cast<Index>(j) * dim, dim);
  return path;
}

// Cached factorizations for repeated potential evaluations over one problem.
// All potentials return +inf on non-finite inputs instead of throwing, so
// samplers and optimizers can treat blow-ups as rejections.
template <class Scalar>
class PotentialEvaluator {
 public:
  explicit PotentialEvaluator(const SmoothingProblem<Scalar>& p) : p_(&p) {
    validate_problem(p);
    gamma_llt_.compute(symmetrized(p.gamma));
    if (gamma_llt_.info() != Eigen::Success)
      throw NotPositiveSemiDefinite("potentials: Gamma not positive definite");
    prior_llt_.compute(symmetrized(p.prior.cov));
    prior_pd_ = prior_llt_.info() == Eigen::Success;
    if (p.sigma) {
      sigma_llt_.compute(symmetrized(*p.sigma));
      if (sigma_llt_.info() != Eigen::Success)
        throw NotPositiveSemiDefinite("potentials: Sigma not positive definite");
    }
  }

  const SmoothingProblem<Scalar>& problem() const { return *p_; }

  // Model-data misfit Phi: sum of 0.5 |y_{j+1} - H v_{j+1}|^2 weighted by
  // Gamma^{-1}.
  Scalar misfit(const Trajectory<Scalar>& path) const {
    check_path(path);
    Scalar total = Scalar(0);
    for (Index j = 0; j < p_->steps(); ++j) {
      const Vec<Scalar> innovation =
          p_->data[static_cast<std::size_t>(j)] -
          p_->obs.observe(path[static_cast<std::size_t>(j) + 1]);
      if (!all_finite(innovation)) return inf();
      total += Scalar(0.5) * gamma_llt_.matrixL().solve(innovation).squaredNorm();
    }
    return std::isfinite(total) ? total : inf();
  }

  // Background penalty J: prior term on v_0 plus the dynamics residuals
  // weighted by Sigma^{-1}. Only defined for stochastic dynamics.
  Scalar background(const Trajectory<Scalar>& path) const {
    if (p_->deterministic())
      throw ZeroModelNoise("background penalty needs stochastic dynamics");
    check_path(path);
    Scalar total = prior_term(path.front());
    for (Index j = 0; j < p_->steps(); ++j) {
      const Vec<Scalar> residual = path[static_cast<std::size_t>(j) + 1] -
                                   apply_map(p_->model, path[static_cast<std::size_t>(j)]);
      if (!all_finite(residual)) return inf();
      total += Scalar(0.5) * sigma_llt_.matrixL().solve(residual).squaredNorm();
    }
    return std::isfinite(total) ? total : inf();
  }

  // Negative log posterior over paths, I = J + Phi.
  Scalar neg_log_posterior(const Trajectory<Scalar>& path) const {
    const Scalar j = background(path);
    if (!std::isfinite(j)) return inf();
    const Scalar phi = misfit(path);
    return std::isfinite(phi) ? j + phi : inf();
  }

  // Negative log posterior of v_0 under deterministic dynamics: prior term
  // plus data misfit along the deterministic orbit.
  Scalar neg_log_posterior_det(const Vec<Scalar>& v0) const {
    require(v0.size() == p_->dim(), "neg_log_posterior_det: dimension");
    if (!all_finite(v0)) return inf();
    Scalar total = prior_term(v0);
    Vec<Scalar> v = v0;
    for (Index j = 0; j < p_->steps(); ++j) {
      v = apply_map(p_->model, v);
      if (!all_finite(v)) return inf();
      const Vec<Scalar> innovation = p_->data[static_cast<std::size_t>(j)] - p_->obs.observe(v);
      total += Scalar(0.5) * gamma_llt_.matrixL().solve(innovation).squaredNorm();
    }
    return std::isfinite(total) ? total : inf();
  }

  // The dynamics part of the path density relative to the Gaussian reference
  // N(m, blockdiag(C_0, Sigma, ...)): sum over j of
  // 0.5 |Sigma^{-1/2} Psi(v_j)|^2 - <Sigma^{-1/2} v_{j+1}, Sigma^{-1/2} Psi(v_j)>.
  Scalar reference_offset(const Trajectory<Scalar>& path) const {
    if (p_->deterministic())
      throw ZeroModelNoise("reference offset needs stochastic dynamics");
    check_path(path);
    Scalar total = Scalar(0);
    for (Index j = 0; j < p_->steps(); ++j) {
      const Vec<Scalar> mapped = apply_map(p_->model, path[static_cast<std::size_t>(j)]);
      if (!all_finite(mapped)) return inf();
      const Vec<Scalar> white_map = sigma_llt_.matrixL().solve(mapped);
      const Vec<Scalar> white_next =
          sigma_llt_.matrixL().solve(path[static_cast<std::size_t>(j) + 1]);
      total += Scalar(0.5) * white_map.squaredNorm() - white_next.dot(white_map);
    }
    return std::isfinite(total) ? total : inf();
  }

  // Noise coordinates: xi = (v_0, xi_0, ..., xi_{J-1}) stacked.
  Trajectory<Scalar> noise_to_signal(const Vec<Scalar>& xi) const {
    const Index n = p_->dim();
    require(xi.size() == (p_->steps() + 1) * n, "noise_to_signal: length");
    Trajectory<Scalar> path(static_cast<std::size_t>(p_->steps()) + 1);
    path[0] = xi.segment(0, n);
    for (Index j = 0; j < p_->steps(); ++j)
      path[static_cast<std::size_t>(j) + 1] =
          apply_map(p_->model, path[static_cast<std::size_t>(j)]) +
          xi.segment((j + 1) * n, n);
    return path;
  }

  Vec<Scalar> signal_to_noise(const Trajectory<Scalar>& path) const {
    check_path(path);
    const Index n = p_->dim();
    Vec<Scalar> xi((p_->steps() + 1) * n);
    xi.segment(0, n) = path.front();
    for (Index j = 0; j < p_->steps(); ++j)
      xi.segment((j + 1) * n, n) = path[static_cast<std::size_t>(j) + 1] -
                                   apply_map(p_->model, path[static_cast<std::size_t>(j)]);
    return xi;
  }

  // Misfit in noise coordinates: Phi_r(xi) = Phi(G(xi)).
  Scalar misfit_noise(const Vec<Scalar>& xi) const {
    if (!all_finite(xi)) return inf();
    const Trajectory<Scalar> path = noise_to_signal(xi);
    for (const auto& v : path)
      if (!all_finite(v)) return inf();
    return misfit(path);
  }

  // Background in noise coordinates is exactly Gaussian: prior term on v_0
  // plus 0.5 |xi_j|^2 weighted by Sigma^{-1}.
  Scalar background_noise(const Vec<Scalar>& xi) const {
    if (p_->deterministic())
      throw ZeroModelNoise("background penalty needs stochastic dynamics");
    const Index n = p_->dim();
    require(xi.size() == (p_->steps() + 1) * n, "background_noise: length");
    if (!all_finite(xi)) return inf();
    Scalar total = prior_term(xi.segment(0, n).eval());
    for (Index j = 0; j < p_->steps(); ++j)
      total += Scalar(0.5) *
               sigma_llt_.matrixL().solve(xi.segment((j + 1) * n, n).eval()).squaredNorm();
    return std::isfinite(total) ? total : inf();
  }

  Scalar neg_log_posterior_noise(const Vec<Scalar>& xi) const {
    const Scalar j = background_noise(xi);
    if (!std::isfinite(j)) return inf();
    const Scalar phi = misfit_noise(xi);
    return std::isfinite(phi) ? j + phi : inf();
  }

 private:
  static Scalar inf() { return std::numeric_limits<Scalar>::infinity(); }

  Scalar prior_term(const Vec<Scalar>& v0) const {
    if (!prior_pd_)
      throw NotPositiveSemiDefinite("potentials: prior covariance not positive definite");
    return Scalar(0.5) * prior_llt_.matrixL().solve(v0 - p_->prior.mean).squaredNorm();
  }

  void check_path(const Trajectory<Scalar>& path) const {
    require(static_cast<Index>(path.size()) == p_->steps() + 1,
            "potentials: path must have J + 1 states");
    require(path.front().size() == p_->dim(), "potentials: path state dimension");
  }

  const SmoothingProblem<Scalar>* p_;
  Eigen::LLT<Mat<Scalar>> gamma_llt_, sigma_llt_, prior_llt_;
  bool prior_pd_ = false;
};

template <class Scalar>
Scalar misfit_phi(const SmoothingProblem<Scalar>& p, const Trajectory<Scalar>& path) {
  return PotentialEvaluator<Scalar>(p).misfit(path);
}

template <class Scalar>
Scalar background_penalty(const SmoothingProblem<Scalar>& p, const Trajectory<Scalar>& path) {
  return PotentialEvaluator<Scalar>(p).background(path);
}

template <class Scalar>
Scalar neg_log_posterior(const SmoothingProblem<Scalar>& p, const Trajectory<Scalar>& path) {
  return PotentialEvaluator<Scalar>(p).neg_log_posterior(path);
}

template <class Scalar>
Scalar neg_log_posterior_det(const SmoothingProblem<Scalar>& p, const Vec<Scalar>& v0) {
  return PotentialEvaluator<Scalar>(p).neg_log_posterior_det(v0);
}

// Normalized posterior density of a scalar v_0 under deterministic dynamics,
// evaluated on a grid. The largest exponent is shifted out before
// exponentiating.
template <class Scalar>
GriddedDensity1D<Scalar> grid_posterior_1d(const SmoothingProblem<Scalar>& p,
                                           Vec<Scalar> grid) {
  if (!p.deterministic())
    throw ValidationError("grid posterior: defined for deterministic dynamics");
  if (p.dim() != 1) throw ValidationError("grid posterior: state must be scalar");
  PotentialEvaluator<Scalar> eval(p);
  Vec<Scalar> neg_log(grid.size());
  Scalar best = std::numeric_limits<Scalar>::infinity();
  for (Index i = 0; i < grid.size(); ++i) {
    Vec<Scalar> v0(1);
    v0[0] = grid[i];
    neg_log[i] = eval.neg_log_posterior_det(v0);
    best = std::min(best, neg_log[i]);
  }
  if (!std::isfinite(best))
    throw DegeneratePosterior("grid posterior: no finite posterior value on the grid");
  Vec<Scalar> values(grid.size());
  for (Index i = 0; i < grid.size(); ++i) values[i] = std::exp(best - neg_log[i]);
  return make_density(std::move(grid), std::move(values));
}

// Symmetric block tridiagonal matrix, stored as diagonal blocks D_0..D_J and
// subdiagonal blocks B_0..B_{J-1} with block (b+1, b) = B_b and block
// (b, b+1) = B_b^T.
template <class Scalar>
struct BlockTridiagonal {
  std::vector<Mat<Scalar>> diag;
  std::vector<Mat<Scalar>> sub;

  Index blocks() const { return static_cast<Index>(diag.size()); }
  Index block_dim() const { return diag.empty() ? 0 : diag.front().rows(); }

  Mat<Scalar> dense() const {
    const Index n = block_dim();
    const Index total = blocks() * n;
    Mat<Scalar> out = Mat<Scalar>::Zero(total, total);
    for (Index b = 0; b < blocks(); ++b)
      out.block(b * n, b * n, n, n) = diag[static_cast<std::size_t>(b)];
    for (Index b = 0; b + 1 < blocks(); ++b) {
      out.block((b + 1) * n, b * n, n, n) = sub[static_cast<std::size_t>(b)];
      out.block(b * n, (b + 1) * n, n, n) = sub[static_cast<std::size_t>(b)].transpose();
    }
    return out;
  }
};

template <class Scalar>
struct BlockTridiagonalSolution {
  std::vector<Vec<Scalar>> x;
  Mat<Scalar> last_schur;  // the final Schur complement of the elimination
};

// Forward block elimination and back substitution. The inverse of the final
// Schur complement is the last diagonal block of the inverse matrix, which is
// how the smoother exposes its final-time marginal covariance.
template <class Scalar>
BlockTridiagonalSolution<Scalar> solve_block_tridiagonal(
    const BlockTridiagonal<Scalar>& a, const std::vector<Vec<Scalar>>& rhs) {
  const Index blocks = a.blocks();
  require(blocks > 0, "solve_block_tridiagonal: empty system");
  require(static_cast<Index>(rhs.size()) == blocks, "solve_block_tridiagonal: rhs blocks");
  require(static_cast<Index>(a.sub.size()) == blocks - 1,
          "solve_block_tridiagonal: subdiagonal count");
  const Index n = a.block_dim();

  std::vector<Eigen::LLT<Mat<Scalar>>> schur_llt(static_cast<std::size_t>(blocks));
  std::vector<Vec<Scalar>> z(static_cast<std::size_t>(blocks));
  Mat<Scalar> schur = symmetrized(a.diag[0]);
  z[0] = rhs[0];
  schur_llt[0].compute(schur);
  if (schur_llt[0].info() != Eigen::Success)
    throw SingularPrecision("solve_block_tridiagonal: Schur complement not positive definite");
  for (Index b = 1; b < blocks; ++b) {
    const Mat<Scalar>& below = a.sub[static_cast<std::size_t>(b - 1)];
    const Mat<Scalar> w =
        schur_llt[static_cast<std::size_t>(b - 1)].solve(below.transpose()).transpose();
    schur = symmetrized<Scalar>(a.diag[static_cast<std::size_t>(b)] - w * below.transpose());
    z[static_cast<std::size_t>(b)] = rhs[static_cast<std::size_t>(b)] -
                                     w * z[static_cast<std::size_t>(b - 1)];
    schur_llt[static_cast<std::size_t>(b)].compute(schur);
    if (schur_llt[static_cast<std::size_t>(b)].info() != Eigen::Success)
      throw SingularPrecision("solve_block_tridiagonal: Schur complement not positive definite");
  }

  BlockTridiagonalSolution<Scalar> out;
  out.x.resize(static_cast<std::size_t>(blocks));
  out.last_schur = schur;
  out.x[static_cast<std::size_t>(blocks - 1)] =
      schur_llt[static_cast<std::size_t>(blocks - 1)].solve(
          z[static_cast<std::size_t>(blocks - 1)]);
  for (Index b = blocks - 2; b >= 0; --b) {
    const Vec<Scalar> adjusted =
        z[static_cast<std::size_t>(b)] -
        a.sub[static_cast<std::size_t>(b)].transpose() * out.x[static_cast<std::size_t>(b + 1)];
    out.x[static_cast<std::size_t>(b)] = schur_llt[static_cast<std::size_t>(b)].solve(adjusted);
  }
  (void)n;
  return out;
}

template <class Scalar>
struct SmootherResult {
  Trajectory<Scalar> mean;
  BlockTridiagonal<Scalar> precision;
  GaussianState<Scalar> last_marginal;
};

// Exact Gaussian smoother for linear dynamics with model noise: the posterior
// over the whole path is N(mean, precision^{-1}) with block tridiagonal
// precision, assembled directly and solved by block elimination.
template <class Scalar>
SmootherResult<Scalar> kalman_smoother(const SmoothingProblem<Scalar>& p) {
  validate_problem(p);
  const auto m_opt = linear_dynamics_matrix(p.model);
  if (!m_opt) throw ValidationError("kalman_smoother: dynamics must be linear");
  if (p.deterministic()) throw ZeroModelNoise("kalman_smoother: needs model noise");
  const Mat<Scalar>& m = *m_opt;
  const Index n = p.dim();
  const Index steps = p.steps();

  const Mat<Scalar> sigma_inv = spd_inverse(*p.sigma);
  const Mat<Scalar> prior_inv = spd_inverse(p.prior.cov);
  const Mat<Scalar> gamma_inv = spd_inverse(p.gamma);
  const Mat<Scalar> ht_gamma_inv = p.obs.h.transpose() * gamma_inv;
  const Mat<Scalar> ht_gamma_inv_h = ht_gamma_inv * p.obs.h;
  const Mat<Scalar> mt_sigma_inv_m = m.transpose() * sigma_inv * m;

  BlockTridiagonal<Scalar> prec;
  prec.diag.resize(static_cast<std::size_t>(steps) + 1);
  prec.sub.resize(static_cast<std::size_t>(steps));
  std::vector<Vec<Scalar>> rhs(static_cast<std::size_t>(steps) + 1);

  prec.diag[0] = prior_inv;
  if (steps >= 1) prec.diag[0] += mt_sigma_inv_m;
  rhs[0] = prior_inv * p.prior.mean;
  for (Index b = 1; b <= steps; ++b) {
    Mat<Scalar> d = sigma_inv + ht_gamma_inv_h;
    if (b < steps) d += mt_sigma_inv_m;
    prec.diag[static_cast<std::size_t>(b)] = std::move(d);
    prec.sub[static_cast<std::size_t>(b - 1)] = (-sigma_inv * m).eval();
    rhs[static_cast<std::size_t>(b)] = ht_gamma_inv * p.data[static_cast<std::size_t>(b - 1)];
  }

  auto solution = solve_block_tridiagonal(prec, rhs);
  SmootherResult<Scalar> out;
  out.mean = std::move(solution.x);
  out.precision = std::move(prec);
  Eigen::LLT<Mat<Scalar>> last_llt(solution.last_schur);
  if (last_llt.info() != Eigen::Success)
    throw SingularPrecision("kalman_smoother: final Schur complement not positive definite");
  out.last_marginal = GaussianState<Scalar>(
      out.mean.back(), last_llt.solve(Mat<Scalar>::Identity(n, n)).eval());
  return out;
}

// Exact Gaussian posterior on v_0 for linear DETERMINISTIC dynamics: the
// precision is C_0^{-1} plus the pullbacks of H^T Gamma^{-1} H along powers
// of the dynamics matrix.
template <class Scalar>
GaussianState<Scalar> kalman_smoother_det(const SmoothingProblem<Scalar>& p) {
  validate_problem(p);
  const auto m_opt = linear_dynamics_matrix(p.model);
  if (!m_opt) throw ValidationError("kalman_smoother_det: dynamics must be linear");
  if (!p.deterministic())
    throw ValidationError("kalman_smoother_det: defined for deterministic dynamics");
  const Mat<Scalar>& m = *m_opt;
  const Index n = p.dim();

  const Mat<Scalar> gamma_inv = spd_inverse(p.gamma);
  const Mat<Scalar> ht_gamma_inv = p.obs.h.transpose() * gamma_inv;
  Mat<Scalar> precision = spd_inverse(p.prior.cov);
  Vec<Scalar> rhs = precision * p.prior.mean;
  Mat<Scalar> power = Mat<Scalar>::Identity(n, n);
  for (Index j = 0; j < p.steps(); ++j) {
    power = (m * power).eval();  // M^{j+1}
    precision += power.transpose() * ht_gamma_inv * p.obs.h * power;
    rhs += power.transpose() * ht_gamma_inv * p.data[static_cast<std::size_t>(j)];
  }
  Eigen::LLT<Mat<Scalar>> llt(symmetrized(precision));
  if (llt.info() != Eigen::Success)
    throw SingularPrecision("kalman_smoother_det: precision not positive definite");
  const Mat<Scalar> cov = llt.solve(Mat<Scalar>::Identity(n, n));
  return GaussianState<Scalar>((cov * rhs).eval(), cov);
}

}  // namespace dakit
