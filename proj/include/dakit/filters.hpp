#pragma once

#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <vector>

#include "dakit/gaussian.hpp"
#include "dakit/linalg.hpp"
#include "dakit/models.hpp"
#include "dakit/prob.hpp"
#include "dakit/rng.hpp"
#include "dakit/smoothing.hpp"
#include "dakit/types.hpp"

namespace dakit {

// ---------------------------------------------------------------------------
// Exact Gaussian filtering (linear dynamics).

template <class Scalar>
GaussianState<Scalar> kf_predict(const Mat<Scalar>& dynamics,
                                 const std::optional<Mat<Scalar>>& sigma,
                                 const GaussianState<Scalar>& state) {
  require(dynamics.rows() == state.dim() && dynamics.cols() == state.dim(),
          "kf_predict: dynamics dimensions");
  Mat<Scalar> cov = dynamics * state.cov * dynamics.transpose();
  if (sigma) {
    require(sigma->rows() == state.dim(), "kf_predict: noise dimensions");
    cov += *sigma;
  }
  return GaussianState<Scalar>((dynamics * state.mean).eval(), std::move(cov));
}

template <class Scalar>
struct KalmanUpdate {
  GaussianState<Scalar> posterior;
  Mat<Scalar> gain;
  Vec<Scalar> innovation;
  Mat<Scalar> innovation_cov;  // S = H C H^T + Gamma, the data-space inversion
};

// Gain-form analysis: innovation d = y - H m, S = H C H^T + Gamma,
// K = C H^T S^{-1}, mean m + K d, covariance (I - K H) C.
template <class Scalar>
KalmanUpdate<Scalar> kf_update(const GaussianState<Scalar>& predicted,
                               const ObservationOperator<Scalar>& obs,
                               const Mat<Scalar>& gamma, const Vec<Scalar>& y) {
  require(obs.state_dim() == predicted.dim(), "kf_update: observation dimensions");
  require(y.size() == obs.obs_dim(), "kf_update: data dimension");
  require(gamma.rows() == obs.obs_dim() && gamma.cols() == obs.obs_dim(),
          "kf_update: Gamma dimensions");
  const Mat<Scalar>& h = obs.h;
  const Mat<Scalar> s = symmetrized<Scalar>((h * predicted.cov * h.transpose() + gamma).eval());
  Eigen::LLT<Mat<Scalar>> s_llt(s);
  if (s_llt.info() != Eigen::Success)
    throw SingularS("kf_update: innovation covariance not positive definite");
  KalmanUpdate<Scalar> out;
  out.innovation = y - h * predicted.mean;
  out.innovation_cov = s;
  out.gain = s_llt.solve(h * predicted.cov).transpose();
  const Index n = predicted.dim();
  const Mat<Scalar> cov =
      (Mat<Scalar>::Identity(n, n) - out.gain * h) * predicted.cov;
  out.posterior = GaussianState<Scalar>(
      (predicted.mean + out.gain * out.innovation).eval(), cov);
  return out;
}

// Precision-form analysis: C^{-1} = Chat^{-1} + H^T Gamma^{-1} H, and the
// mean solves C^{-1} m = Chat^{-1} mhat + H^T Gamma^{-1} y. Algebraically
// identical to the gain form by the Woodbury identity.
template <class Scalar>
GaussianState<Scalar> kf_update_precision(const GaussianState<Scalar>& predicted,
                                          const ObservationOperator<Scalar>& obs,
                                          const Mat<Scalar>& gamma, const Vec<Scalar>& y) {
  require(obs.state_dim() == predicted.dim(), "kf_update_precision: observation dimensions");
  require(y.size() == obs.obs_dim(), "kf_update_precision: data dimension");
  const Mat<Scalar>& h = obs.h;
  const Mat<Scalar> pred_precision = spd_inverse(predicted.cov);
  const Mat<Scalar> gamma_inv = spd_inverse(gamma);
  const Mat<Scalar> precision =
      symmetrized<Scalar>((pred_precision + h.transpose() * gamma_inv * h).eval());
  Eigen::LLT<Mat<Scalar>> llt(precision);
  if (llt.info() != Eigen::Success)
    throw SingularPrecision("kf_update_precision: posterior precision not positive definite");
  const Index n = predicted.dim();
  const Mat<Scalar> cov = llt.solve(Mat<Scalar>::Identity(n, n));
  const Vec<Scalar> rhs =
      pred_precision * predicted.mean + h.transpose() * (gamma_inv * y);
  return GaussianState<Scalar>((cov * rhs).eval(), cov);
}

// Analysis Gaussians m_j, C_j for j = 0..J of the exact filter on a linear
// smoothing problem (the same data the smoother sees).
template <class Scalar>
std::vector<GaussianState<Scalar>> kalman_filter_pass(const SmoothingProblem<Scalar>& p) {
  validate_problem(p);
  const auto dynamics = linear_dynamics_matrix(p.model);
  if (!dynamics) throw ValidationError("kalman_filter_pass: dynamics must be linear");
  std::vector<GaussianState<Scalar>> states;
  states.reserve(p.data.size() + 1);
  states.push_back(p.prior);
  for (const auto& y : p.data) {
    const GaussianState<Scalar> predicted = kf_predict(*dynamics, p.sigma, states.back());
    states.push_back(kf_update(predicted, p.obs, p.gamma, y).posterior);
  }
  return states;
}

// ---------------------------------------------------------------------------
// 3DVAR and the synchronization filter.

template <class Scalar>
Mat<Scalar> threedvar_gain(const Mat<Scalar>& fixed_cov, const ObservationOperator<Scalar>& obs,
                           const Mat<Scalar>& gamma) {
  require(fixed_cov.rows() == obs.state_dim() && fixed_cov.cols() == obs.state_dim(),
          "threedvar_gain: covariance dimensions");
  const Mat<Scalar>& h = obs.h;
  const Mat<Scalar> s = symmetrized<Scalar>((h * fixed_cov * h.transpose() + gamma).eval());
  Eigen::LLT<Mat<Scalar>> s_llt(s);
  if (s_llt.info() != Eigen::Success)
    throw SingularS("threedvar_gain: innovation covariance not positive definite");
  return s_llt.solve(h * fixed_cov).transpose();
}

// m' = (I - K H) Psi(m) + K y, computed as Psi(m) + K (y - H Psi(m)).
template <class Scalar>
Vec<Scalar> threedvar_step(const ModelSpec<Scalar>& model, const ObservationOperator<Scalar>& obs,
                           const Mat<Scalar>& gain, const Vec<Scalar>& m, const Vec<Scalar>& y) {
  const Vec<Scalar> forecast = apply_map(model, m);
  return forecast + gain * (y - obs.observe(forecast));
}

// Components listed in `observed` are overwritten with the observed values;
// the rest evolve under the model. This is 3DVAR in the limit of total trust
// in the data on the observed components.
template <class Scalar>
Vec<Scalar> synchronization_step(const ModelSpec<Scalar>& model,
                                 const std::vector<Index>& observed, const Vec<Scalar>& m,
                                 const Vec<Scalar>& y) {
  require(static_cast<Index>(observed.size()) == y.size(),
          "synchronization_step: observed component count");
  Vec<Scalar> next = apply_map(model, m);
  for (std::size_t k = 0; k < observed.size(); ++k) {
    require(observed[k] >= 0 && observed[k] < next.size(),
            "synchronization_step: component out of range");
    next[observed[k]] = y[static_cast<Index>(k)];
  }
  return next;
}

// If the observation operator is a component projection (each row one unit
// entry), the indices of the observed components.
template <class Scalar>
std::optional<std::vector<Index>> projection_components(const ObservationOperator<Scalar>& obs) {
  std::vector<Index> components;
  components.reserve(static_cast<std::size_t>(obs.obs_dim()));
  for (Index r = 0; r < obs.obs_dim(); ++r) {
    Index hit = -1;
    for (Index c = 0; c < obs.state_dim(); ++c) {
      const Scalar v = obs.h(r, c);
      if (v == Scalar(1) && hit < 0) {
        hit = c;
      } else if (v != Scalar(0)) {
        return std::nullopt;
      }
    }
    if (hit < 0) return std::nullopt;
    components.push_back(hit);
  }
  return components;
}

// ---------------------------------------------------------------------------
// Extended Kalman filter.

template <class Scalar>
GaussianState<Scalar> exkf_predict(const ModelSpec<Scalar>& model,
                                   const std::optional<Mat<Scalar>>& sigma,
                                   const GaussianState<Scalar>& state) {
  const Mat<Scalar> jac = map_jacobian(model, state.mean);
  Mat<Scalar> cov = jac * state.cov * jac.transpose();
  if (sigma) cov += *sigma;
  Vec<Scalar> mean = apply_map(model, state.mean);
  if (!all_finite(mean) || !cov.allFinite())
    throw NonFiniteState("exkf_predict: non-finite prediction");
  return GaussianState<Scalar>(std::move(mean), std::move(cov));
}

// Linearized prediction followed by the gain-form analysis.
template <class Scalar>
GaussianState<Scalar> exkf_step(const ModelSpec<Scalar>& model,
                                const ObservationOperator<Scalar>& obs,
                                const std::optional<Mat<Scalar>>& sigma,
                                const Mat<Scalar>& gamma, const Vec<Scalar>& y,
                                const GaussianState<Scalar>& state) {
  const GaussianState<Scalar> predicted = exkf_predict(model, sigma, state);
  return kf_update(predicted, obs, gamma, y).posterior;
}

// ---------------------------------------------------------------------------
// Ensemble filters. Ensembles are dense matrices with one member per column.

template <class Scalar>
Mat<Scalar> draw_ensemble(const GaussianState<Scalar>& g, Index count, RngStream& rng) {
  if (count < 2) throw EmptySamples("draw_ensemble: need at least two members");
  const Mat<Scalar> factor = cholesky_factor(g.cov);
  Mat<Scalar> members(g.dim(), count);
  for (Index c = 0; c < count; ++c)
    members.col(c) = g.mean + factor * rng.normal_vector<Scalar>(g.dim());
  return members;
}

template <class Scalar>
Vec<Scalar> ensemble_mean(const Mat<Scalar>& members) {
  if (members.cols() == 0) throw EmptySamples("ensemble_mean: empty ensemble");
  return members.rowwise().mean();
}

template <class Scalar>
Mat<Scalar> ensemble_covariance(const Mat<Scalar>& members) {
  if (members.cols() < 2) throw EmptySamples("ensemble_covariance: need at least two members");
  const Vec<Scalar> mean = ensemble_mean(members);
  const Mat<Scalar> centered = members.colwise() - mean;
  return (centered * centered.transpose() / Scalar(members.cols() - 1)).eval();
}

template <class Scalar>
struct EnsembleStepOptions {
  bool prediction_noise = true;  // add model noise draws in the prediction phase
  bool sampled_gamma = false;    // use the sample covariance of the drawn
                                 // observation perturbations instead of Gamma
};

namespace detail {

template <class Scalar>
void predict_ensemble(const ModelSpec<Scalar>& model, const std::optional<Mat<Scalar>>& sigma,
                      bool with_noise, Mat<Scalar>& members, RngStream& rng) {
  const Mat<Scalar> noise_factor =
      sigma && with_noise ? cholesky_factor(*sigma) : Mat<Scalar>();
  for (Index c = 0; c < members.cols(); ++c) {
    Vec<Scalar> next = apply_map(model, members.col(c).eval());
    if (noise_factor.size() > 0)
      next += noise_factor * rng.normal_vector<Scalar>(members.rows());
    members.col(c) = next;
  }
  if (!members.allFinite())
    throw NonFiniteState("ensemble prediction produced a non-finite member");
}

}  // namespace detail

// Perturbed-observation ensemble Kalman analysis. Each member is nudged by
// the shared gain toward its own perturbed copy of the data.
template <class Scalar>
void enkf_step(const ModelSpec<Scalar>& model, const ObservationOperator<Scalar>& obs,
               const std::optional<Mat<Scalar>>& sigma, const Mat<Scalar>& gamma,
               const Vec<Scalar>& y, Mat<Scalar>& members, RngStream& rng,
               const EnsembleStepOptions<Scalar>& options = {},
               Mat<Scalar>* predicted = nullptr) {
  if (members.cols() < 2) throw EmptySamples("enkf_step: need at least two members");
  detail::predict_ensemble(model, sigma, options.prediction_noise, members, rng);
  if (predicted) *predicted = members;

  const Mat<Scalar> gamma_factor = cholesky_factor(gamma);
  Mat<Scalar> perturbations(obs.obs_dim(), members.cols());
  for (Index c = 0; c < members.cols(); ++c)
    perturbations.col(c) = gamma_factor * rng.normal_vector<Scalar>(obs.obs_dim());

  Mat<Scalar> gamma_used = gamma;
  if (options.sampled_gamma) gamma_used = ensemble_covariance(perturbations);

  const Mat<Scalar> cov = ensemble_covariance(members);
  const Mat<Scalar>& h = obs.h;
  const Mat<Scalar> s = symmetrized<Scalar>((h * cov * h.transpose() + gamma_used).eval());
  Eigen::LLT<Mat<Scalar>> s_llt(s);
  if (s_llt.info() != Eigen::Success)
    throw SingularS("enkf_step: innovation covariance not positive definite");
  const Mat<Scalar> gain = s_llt.solve(h * cov).transpose();

  for (Index c = 0; c < members.cols(); ++c)
    members.col(c) +=
        gain * (y + perturbations.col(c) - h * members.col(c).eval());
}

// Square-root (deterministic transform) ensemble Kalman analysis: the mean is
// moved by the exact gain, the deviations are rotated/contracted by the
// symmetric square root of (I_N + (H Xhat)^T Gamma^{-1} (H Xhat))^{-1}, so
// the analysis ensemble reproduces the Kalman covariance exactly with no
// perturbed observations.
template <class Scalar>
void etkf_step(const ModelSpec<Scalar>& model, const ObservationOperator<Scalar>& obs,
               const std::optional<Mat<Scalar>>& sigma, const Mat<Scalar>& gamma,
               const Vec<Scalar>& y, Mat<Scalar>& members, RngStream& rng,
               const EnsembleStepOptions<Scalar>& options = {},
               Mat<Scalar>* predicted = nullptr) {
  const Index count = members.cols();
  if (count < 2) throw EmptySamples("etkf_step: need at least two members");
  detail::predict_ensemble(model, sigma, options.prediction_noise, members, rng);
  if (predicted) *predicted = members;

  const Vec<Scalar> forecast_mean = ensemble_mean(members);
  const Mat<Scalar> deviations =
      (members.colwise() - forecast_mean) / std::sqrt(Scalar(count - 1));
  const Mat<Scalar>& h = obs.h;
  const Mat<Scalar> obs_deviations = h * deviations;

  Eigen::LLT<Mat<Scalar>> gamma_llt(symmetrized(gamma));
  if (gamma_llt.info() != Eigen::Success)
    throw NotPositiveSemiDefinite("etkf_step: Gamma not positive definite");
  const Mat<Scalar> core = symmetrized<Scalar>(
      (Mat<Scalar>::Identity(count, count) +
       obs_deviations.transpose() * gamma_llt.solve(obs_deviations))
          .eval());
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> eigen(core);
  if (eigen.info() != Eigen::Success)
    throw SingularS("etkf_step: transform eigendecomposition failed");
  Vec<Scalar> inv_sqrt = eigen.eigenvalues();
  for (Index i = 0; i < inv_sqrt.size(); ++i) {
    if (!(inv_sqrt[i] > Scalar(0)))
      throw SingularS("etkf_step: transform not positive definite");
    inv_sqrt[i] = Scalar(1) / std::sqrt(inv_sqrt[i]);
  }
  const Mat<Scalar> transform_sqrt =
      eigen.eigenvectors() * inv_sqrt.asDiagonal() * eigen.eigenvectors().transpose();

  const Mat<Scalar> cov = deviations * deviations.transpose();
  const Mat<Scalar> s = symmetrized<Scalar>((h * cov * h.transpose() + gamma).eval());
  Eigen::LLT<Mat<Scalar>> s_llt(s);
  if (s_llt.info() != Eigen::Success)
    throw SingularS("etkf_step: innovation covariance not positive definite");
  const Mat<Scalar> gain = s_llt.solve(h * cov).transpose();
  const Vec<Scalar> analysis_mean = forecast_mean + gain * (y - h * forecast_mean);

  const Mat<Scalar> analysis_deviations = deviations * transform_sqrt;
  members = (std::sqrt(Scalar(count - 1)) * analysis_deviations).colwise() + analysis_mean;
}

// ---------------------------------------------------------------------------
// Particle filters (sequential importance resampling).

template <class Scalar>
struct ParticleStepResult {
  Vec<Scalar> weighted_mean;
  Mat<Scalar> weighted_cov;
  Scalar max_weight = Scalar(0);
};

// Multinomial resampling of an empirical measure back to uniform weights,
// drawing as many points as it holds.
template <class Scalar>
WeightedSamples<Scalar> resample_multinomial(const WeightedSamples<Scalar>& ws,
                                             RngStream& rng) {
  if (ws.points.empty()) throw EmptySamples("resample_multinomial: no points");
  const std::vector<Index> picked =
      multinomial_indices(ws.weights, static_cast<Index>(ws.points.size()), rng);
  std::vector<Vec<Scalar>> points;
  points.reserve(ws.points.size());
  for (const Index i : picked) points.push_back(ws.points[static_cast<std::size_t>(i)]);
  return make_equal_weights(std::move(points));
}

namespace detail {

template <class Scalar>
ParticleStepResult<Scalar> weigh_and_resample(Mat<Scalar>& particles,
                                              const Vec<Scalar>& log_weights,
                                              RngStream& resample_rng) {
  const Vec<Scalar> weights = normalize_log_weights(log_weights);
  ParticleStepResult<Scalar> out;
  out.weighted_mean = particles * weights;
  const Mat<Scalar> centered = particles.colwise() - out.weighted_mean;
  out.weighted_cov = centered * weights.asDiagonal() * centered.transpose();
  out.max_weight = weights.maxCoeff();
  const std::vector<Index> picked =
      multinomial_indices(weights, particles.cols(), resample_rng);
  Mat<Scalar> resampled(particles.rows(), particles.cols());
  for (Index c = 0; c < particles.cols(); ++c)
    resampled.col(c) = particles.col(picked[static_cast<std::size_t>(c)]);
  particles = std::move(resampled);
  return out;
}

}  // namespace detail

// Bootstrap proposal: push every particle through the noisy dynamics, weight
// by the data likelihood, then resample multinomially.
template <class Scalar>
ParticleStepResult<Scalar> sirs_step(const ModelSpec<Scalar>& model,
                                     const ObservationOperator<Scalar>& obs,
                                     const std::optional<Mat<Scalar>>& sigma,
                                     const Mat<Scalar>& gamma, const Vec<Scalar>& y,
                                     Mat<Scalar>& particles, RngStream& proposal_rng,
                                     RngStream& resample_rng,
                                     Mat<Scalar>* predicted = nullptr) {
  if (particles.cols() < 2) throw EmptySamples("sirs_step: need at least two particles");
  detail::predict_ensemble(model, sigma, true, particles, proposal_rng);
  if (predicted) *predicted = particles;
  Eigen::LLT<Mat<Scalar>> gamma_llt(symmetrized(gamma));
  if (gamma_llt.info() != Eigen::Success)
    throw NotPositiveSemiDefinite("sirs_step: Gamma not positive definite");
  Vec<Scalar> log_weights(particles.cols());
  for (Index c = 0; c < particles.cols(); ++c) {
    const Vec<Scalar> innovation = y - obs.observe(particles.col(c).eval());
    log_weights[c] = -Scalar(0.5) * gamma_llt.matrixL().solve(innovation).squaredNorm();
  }
  return detail::weigh_and_resample(particles, log_weights, resample_rng);
}

// Optimal-proposal variant: particles are moved by sampling
// v ~ N(m', Sigma') with Sigma'^{-1} = Sigma^{-1} + H^T Gamma^{-1} H and
// m' = Sigma' (Sigma^{-1} Psi(v) + H^T Gamma^{-1} y); the weights then use
// the marginal likelihood N(y; H Psi(v), Gamma + H Sigma H^T). With no model
// noise this reduces to the bootstrap proposal.
template <class Scalar>
ParticleStepResult<Scalar> sirs_optimal_step(const ModelSpec<Scalar>& model,
                                             const ObservationOperator<Scalar>& obs,
                                             const std::optional<Mat<Scalar>>& sigma,
                                             const Mat<Scalar>& gamma, const Vec<Scalar>& y,
                                             Mat<Scalar>& particles, RngStream& proposal_rng,
                                             RngStream& resample_rng,
                                             Mat<Scalar>* predicted = nullptr) {
  if (!sigma)
    return sirs_step(model, obs, sigma, gamma, y, particles, proposal_rng, resample_rng,
                     predicted);
  if (particles.cols() < 2) throw EmptySamples("sirs_optimal_step: need at least two particles");
  const Mat<Scalar>& h = obs.h;
  const Mat<Scalar> sigma_inv = spd_inverse(*sigma);
  const Mat<Scalar> gamma_inv = spd_inverse(gamma);
  const Mat<Scalar> proposal_cov =
      spd_inverse(symmetrized<Scalar>((sigma_inv + h.transpose() * gamma_inv * h).eval()));
  const Mat<Scalar> proposal_factor = cholesky_factor(proposal_cov);
  const Mat<Scalar> marginal =
      symmetrized<Scalar>((gamma + h * (*sigma) * h.transpose()).eval());
  Eigen::LLT<Mat<Scalar>> marginal_llt(marginal);
  if (marginal_llt.info() != Eigen::Success)
    throw SingularS("sirs_optimal_step: marginal covariance not positive definite");

  Vec<Scalar> log_weights(particles.cols());
  for (Index c = 0; c < particles.cols(); ++c) {
    const Vec<Scalar> forecast = apply_map(model, particles.col(c).eval());
    const Vec<Scalar> proposal_mean =
        proposal_cov * (sigma_inv * forecast + h.transpose() * (gamma_inv * y));
    particles.col(c) =
        proposal_mean + proposal_factor * proposal_rng.normal_vector<Scalar>(particles.rows());
    const Vec<Scalar> innovation = y - h * forecast;
    log_weights[c] = -Scalar(0.5) * marginal_llt.matrixL().solve(innovation).squaredNorm();
  }
  if (!particles.allFinite())
    throw NonFiniteState("sirs_optimal_step: non-finite particle");
  if (predicted) *predicted = particles;
  return detail::weigh_and_resample(particles, log_weights, resample_rng);
}

// ---------------------------------------------------------------------------
// Twin-experiment driver: simulate a truth, observe it, run one filter.

enum class FilterKind {
  Kalman,
  ThreeDVar,
  ExtendedKalman,
  EnsembleKalman,
  EnsembleTransform,
  Sirs,
  SirsOptimal,
  Synchronization,
};

inline bool is_ensemble_kind(FilterKind kind) {
  return kind == FilterKind::EnsembleKalman || kind == FilterKind::EnsembleTransform ||
         kind == FilterKind::Sirs || kind == FilterKind::SirsOptimal;
}

template <class Scalar>
struct TwinExperiment {
  ModelSpec<Scalar> model;
  ObservationOperator<Scalar> obs;
  std::optional<Mat<Scalar>> sigma;
  Mat<Scalar> gamma;
  GaussianState<Scalar> truth_prior;
  std::optional<Vec<Scalar>> truth_start;  // fixed initial truth instead of a prior draw
  long steps = 1000;
  std::uint64_t seed = 1;
};

template <class Scalar>
struct FilterConfig {
  FilterKind kind = FilterKind::Kalman;
  GaussianState<Scalar> init;  // the filter's own starting mean and covariance
  Mat<Scalar> fixed_cov;       // 3DVAR background covariance
  Index ensemble_size = 100;
  bool prediction_noise = true;
  bool sampled_gamma = false;
  bool record_ensembles = false;
  Scalar divergence_guard = Scalar(1e8);
};

template <class Scalar>
struct FilterRunResult {
  FilterKind kind = FilterKind::Kalman;
  Trajectory<Scalar> truth;       // v_0..v_J
  std::vector<Vec<Scalar>> data;  // y_1..y_J
  Trajectory<Scalar> mean;        // filter means, truncated if the run blew up
  std::vector<Scalar> cov_trace;  // NaN where the filter carries no covariance
  std::vector<Scalar> error;      // |mean_j - truth_j|
  bool blew_up = false;
  long blow_up_step = -1;
  std::vector<Mat<Scalar>> predicted_ensembles;  // per assimilation step if recorded
  std::uint64_t scenario_fingerprint = 0;
};

namespace detail {

inline std::uint64_t fnv1a_init() { return 0xCBF29CE484222325ull; }

inline void fnv1a_mix(std::uint64_t& hash, const void* bytes, std::size_t count) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < count; ++i) {
    hash ^= p[i];
    hash *= 0x100000001B3ull;
  }
}

template <class Scalar>
std::uint64_t scenario_hash(const Trajectory<Scalar>& truth,
                            const std::vector<Vec<Scalar>>& data) {
  std::uint64_t hash = fnv1a_init();
  for (const auto& v : truth)
    for (Index i = 0; i < v.size(); ++i) {
      const double x = static_cast<double>(v[i]);
      fnv1a_mix(hash, &x, sizeof(x));
    }
  for (const auto& y : data)
    for (Index i = 0; i < y.size(); ++i) {
      const double x = static_cast<double>(y[i]);
      fnv1a_mix(hash, &x, sizeof(x));
    }
  return hash;
}

}  // namespace detail

template <class Scalar>
FilterRunResult<Scalar> run_filter(const TwinExperiment<Scalar>& experiment,
                                   const FilterConfig<Scalar>& config) {
  validate_model(experiment.model);
  const Index n = state_dim(experiment.model);
  if (experiment.obs.state_dim() != n) throw ValidationError("run_filter: observation dimension");
  if (experiment.gamma.rows() != experiment.obs.obs_dim())
    throw ValidationError("run_filter: Gamma dimension");
  if (experiment.steps < 1) throw ValidationError("run_filter: need at least one step");
  if (config.init.dim() != n) throw ValidationError("run_filter: filter init dimension");
  if (config.record_ensembles && !is_ensemble_kind(config.kind))
    throw NonEnsembleFilter("run_filter: only ensemble filters record ensembles");
  const bool linear_needed = config.kind == FilterKind::Kalman;
  if (linear_needed && !linear_dynamics_matrix(experiment.model))
    throw ValidationError("run_filter: the exact filter needs linear dynamics");

  FilterRunResult<Scalar> out;
  out.kind = config.kind;

  // Truth and data, on their own streams so every filter sees the same
  // scenario for a given seed.
  RngStream truth_rng(experiment.seed, stream::truth_init);
  RngStream model_rng(experiment.seed, stream::model_noise);
  RngStream obs_rng(experiment.seed, stream::observation_noise);
  const Vec<Scalar> v0 = experiment.truth_start
                             ? *experiment.truth_start
                             : sample_gaussian(experiment.truth_prior, truth_rng);
  out.truth = simulate(experiment.model, v0, experiment.steps, experiment.sigma, model_rng);
  out.data = generate_data(experiment.obs, out.truth, experiment.gamma, obs_rng);
  out.scenario_fingerprint = detail::scenario_hash(out.truth, out.data);

  RngStream algo_rng(experiment.seed, stream::algorithm);
  RngStream resample_rng(experiment.seed, stream::resampling);

  const Scalar nan = std::numeric_limits<Scalar>::quiet_NaN();
  auto record = [&](long j, const Vec<Scalar>& mean, Scalar trace) {
    out.mean.push_back(mean);
    out.cov_trace.push_back(trace);
    out.error.push_back((mean - out.truth[static_cast<std::size_t>(j)]).norm());
  };
  auto diverged = [&](const Vec<Scalar>& mean) {
    return !all_finite(mean) ||
           mean.cwiseAbs().maxCoeff() > config.divergence_guard;
  };

  const auto dynamics = linear_dynamics_matrix(experiment.model);

  switch (config.kind) {
    case FilterKind::Kalman:
    case FilterKind::ExtendedKalman: {
      GaussianState<Scalar> state = config.init;
      record(0, state.mean, state.cov.trace());
      for (long j = 1; j <= experiment.steps; ++j) {
        try {
          const GaussianState<Scalar> predicted =
              config.kind == FilterKind::Kalman
                  ? kf_predict(*dynamics, experiment.sigma, state)
                  : exkf_predict(experiment.model, experiment.sigma, state);
          if (diverged(predicted.mean)) {
            out.blew_up = true;
            out.blow_up_step = j;
            break;
          }
          state = kf_update(predicted, experiment.obs, experiment.gamma,
                            out.data[static_cast<std::size_t>(j - 1)])
                      .posterior;
        } catch (const NonFiniteState&) {
          out.blew_up = true;
          out.blow_up_step = j;
          break;
        }
        if (diverged(state.mean)) {
          out.blew_up = true;
          out.blow_up_step = j;
          break;
        }
        record(j, state.mean, state.cov.trace());
      }
      break;
    }
    case FilterKind::ThreeDVar: {
      if (config.fixed_cov.rows() != n || config.fixed_cov.cols() != n)
        throw ValidationError("run_filter: 3DVAR background covariance dimension");
      const Mat<Scalar> gain =
          threedvar_gain(config.fixed_cov, experiment.obs, experiment.gamma);
      Vec<Scalar> mean = config.init.mean;
      const Scalar fixed_trace = config.fixed_cov.trace();
      record(0, mean, fixed_trace);
      for (long j = 1; j <= experiment.steps; ++j) {
        mean = threedvar_step(experiment.model, experiment.obs, gain, mean,
                              out.data[static_cast<std::size_t>(j - 1)]);
        if (diverged(mean)) {
          out.blew_up = true;
          out.blow_up_step = j;
          break;
        }
        record(j, mean, fixed_trace);
      }
      break;
    }
    case FilterKind::Synchronization: {
      const auto components = projection_components(experiment.obs);
      if (!components)
        throw ValidationError(
            "run_filter: synchronization needs a component-projection observation");
      Vec<Scalar> mean = config.init.mean;
      record(0, mean, nan);
      for (long j = 1; j <= experiment.steps; ++j) {
        mean = synchronization_step(experiment.model, *components, mean,
                                    out.data[static_cast<std::size_t>(j - 1)]);
        if (diverged(mean)) {
          out.blew_up = true;
          out.blow_up_step = j;
          break;
        }
        record(j, mean, nan);
      }
      break;
    }
    case FilterKind::EnsembleKalman:
    case FilterKind::EnsembleTransform: {
      Mat<Scalar> members = draw_ensemble(config.init, config.ensemble_size, algo_rng);
      record(0, ensemble_mean(members), ensemble_covariance(members).trace());
      EnsembleStepOptions<Scalar> options;
      options.prediction_noise = config.prediction_noise;
      options.sampled_gamma = config.sampled_gamma;
      for (long j = 1; j <= experiment.steps; ++j) {
        Mat<Scalar> predicted;
        Mat<Scalar>* predicted_ptr = config.record_ensembles ? &predicted : nullptr;
        try {
          if (config.kind == FilterKind::EnsembleKalman)
            enkf_step(experiment.model, experiment.obs, experiment.sigma, experiment.gamma,
                      out.data[static_cast<std::size_t>(j - 1)], members, algo_rng, options,
                      predicted_ptr);
          else
            etkf_step(experiment.model, experiment.obs, experiment.sigma, experiment.gamma,
                      out.data[static_cast<std::size_t>(j - 1)], members, algo_rng, options,
                      predicted_ptr);
        } catch (const NonFiniteState&) {
          out.blew_up = true;
          out.blow_up_step = j;
          break;
        }
        const Vec<Scalar> mean = ensemble_mean(members);
        if (diverged(mean)) {
          out.blew_up = true;
          out.blow_up_step = j;
          break;
        }
        if (config.record_ensembles) out.predicted_ensembles.push_back(std::move(predicted));
        record(j, mean, ensemble_covariance(members).trace());
      }
      break;
    }
    case FilterKind::Sirs:
    case FilterKind::SirsOptimal: {
      Mat<Scalar> particles = draw_ensemble(config.init, config.ensemble_size, algo_rng);
      record(0, ensemble_mean(particles), ensemble_covariance(particles).trace());
      for (long j = 1; j <= experiment.steps; ++j) {
        Mat<Scalar> predicted;
        Mat<Scalar>* predicted_ptr = config.record_ensembles ? &predicted : nullptr;
        ParticleStepResult<Scalar> step;
        try {
          if (config.kind == FilterKind::Sirs)
            step = sirs_step(experiment.model, experiment.obs, experiment.sigma,
                             experiment.gamma, out.data[static_cast<std::size_t>(j - 1)],
                             particles, algo_rng, resample_rng, predicted_ptr);
          else
            step = sirs_optimal_step(experiment.model, experiment.obs, experiment.sigma,
                                     experiment.gamma,
                                     out.data[static_cast<std::size_t>(j - 1)], particles,
                                     algo_rng, resample_rng, predicted_ptr);
        } catch (const NonFiniteState&) {
          out.blew_up = true;
          out.blow_up_step = j;
          break;
        }
        if (diverged(step.weighted_mean)) {
          out.blew_up = true;
          out.blow_up_step = j;
          break;
        }
        if (config.record_ensembles) out.predicted_ensembles.push_back(std::move(predicted));
        record(j, step.weighted_mean, step.weighted_cov.trace());
      }
      break;
    }
  }
  return out;
}

}  // namespace dakit
