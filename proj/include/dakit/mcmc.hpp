#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "dakit/smoothing.hpp"

namespace dakit {

// Four Metropolis-Hastings samplers for the smoothing posterior:
//  - RandomWalk: moves the initial condition of a deterministic problem,
//    targeting exp(-I_det).
//  - IndependenceDynamics: proposes fresh draws of the prior dynamics
//    (v_0 from the prior, then the noisy map), accepting on the misfit
//    difference alone.
//  - CrankNicolson: the dimension-robust autoregressive proposal on whole
//    paths, preserving the Gaussian reference N(m, blockdiag(C_0, Sigma, ..));
//    the acceptance ratio carries the misfit plus the non-Gaussian part of
//    the dynamics density.
//  - CrankNicolsonDynamics: the same autoregressive proposal in noise
//    coordinates (v_0, xi_0, ..), where the prior IS the Gaussian reference,
//    so only the misfit enters the acceptance ratio. At beta = 1 it proposes
//    independent prior draws and coincides with IndependenceDynamics.
enum class SamplerKind {
  RandomWalk,
  IndependenceDynamics,
  CrankNicolson,
  CrankNicolsonDynamics,
};

template <class Scalar>
struct SamplerConfig {
  SamplerKind kind = SamplerKind::RandomWalk;
  Scalar beta = Scalar(0.5);
  long steps = 10000;
  long burn_in = -1;  // -1: 10% of steps (use 0 when initializing at the truth)
  long thin = 1;
  std::optional<Mat<Scalar>> proposal_cov;  // random walk only; defaults to the prior covariance
  // Abort when more than this fraction of the configured steps proposed a
  // non-finite potential; negative disables the guard.
  double max_nonfinite_fraction = 0.5;
};

// The chain's full state between steps. position is in the sampler's own
// coordinates: v_0 for the random walk, a flattened path for the path
// samplers, a flattened (v_0, xi_0, ..., xi_{J-1}) block vector for the
// noise-coordinate sampler. potential caches the value entering the
// acceptance ratio so rejected steps cost one model sweep, not two.
template <class Scalar>
struct ChainState {
  Vec<Scalar> position;
  Scalar potential = Scalar(0);
  long step_count = 0;
  long accept_count = 0;
  long nonfinite_count = 0;
};

template <class Scalar>
struct ChainResult {
  // One emitted state per column: v_0 for the random walk, the flattened
  // path v_0..v_J for the path samplers (noise-coordinate states are mapped
  // back through the dynamics before emission).
  Mat<Scalar> samples;
  Scalar acceptance_rate = Scalar(0);
  long accepted = 0;
  long proposals = 0;
  long rejected_nonfinite = 0;
  // Running average of the first coordinate over the whole chain (including
  // burn-in), one entry per chain state.
  std::vector<Scalar> running_mean_first;
  Vec<Scalar> final_state;
};

// Everything a step needs that is fixed along the chain: the potential
// evaluator and the Cholesky factors behind the proposals.
template <class Scalar>
class McmcWorkspace {
 public:
  McmcWorkspace(const SmoothingProblem<Scalar>& p, const SamplerConfig<Scalar>& cfg)
      : problem_(&p), eval_(p), kind_(cfg.kind) {
    const Index n = p.dim();
    if (!(cfg.beta > Scalar(0)))
      throw ValidationError("mcmc: beta must be positive");
    if (cfg.kind != SamplerKind::RandomWalk && !(cfg.beta <= Scalar(1)))
      throw ValidationError("mcmc: beta must lie in (0, 1] for autoregressive proposals");
    if (cfg.kind == SamplerKind::RandomWalk) {
      if (!p.deterministic())
        throw ValidationError("mcmc: the random walk sampler targets deterministic dynamics");
      const Mat<Scalar>& c_prop = cfg.proposal_cov ? *cfg.proposal_cov : p.prior.cov;
      require(c_prop.rows() == n && c_prop.cols() == n, "mcmc: proposal covariance size");
      proposal_factor_ = cholesky_factor(c_prop);
    } else {
      if (p.deterministic())
        throw ZeroModelNoise("mcmc: path samplers need stochastic dynamics");
      sigma_factor_ = cholesky_factor(*p.sigma);
    }
    prior_factor_ = cholesky_factor(p.prior.cov);
    reference_mean_ = Vec<Scalar>::Zero(path_len());
    reference_mean_.segment(0, n) = p.prior.mean;
  }

  const SmoothingProblem<Scalar>& problem() const { return *problem_; }
  const PotentialEvaluator<Scalar>& eval() const { return eval_; }
  SamplerKind kind() const { return kind_; }
  Index path_len() const { return (problem_->steps() + 1) * problem_->dim(); }
  const Mat<Scalar>& proposal_factor() const { return proposal_factor_; }
  const Vec<Scalar>& reference_mean() const { return reference_mean_; }

  // One fresh draw from the Gaussian reference N(0, blockdiag(C_0, Sigma,..)).
  Vec<Scalar> draw_reference(RngStream& rng) const {
    const Index n = problem_->dim();
    Vec<Scalar> iota(path_len());
    iota.segment(0, n) = prior_factor_ * rng.normal_vector<Scalar>(n);
    for (Index j = 1; j <= problem_->steps(); ++j)
      iota.segment(j * n, n) = sigma_factor_ * rng.normal_vector<Scalar>(n);
    return iota;
  }

  // The potential entering the acceptance ratio, by sampler kind.
  Scalar potential(const Vec<Scalar>& position) const {
    switch (kind_) {
      case SamplerKind::RandomWalk:
        return eval_.neg_log_posterior_det(position);
      case SamplerKind::IndependenceDynamics:
        return eval_.misfit(unflatten(position, problem_->dim()));
      case SamplerKind::CrankNicolson: {
        const Trajectory<Scalar> path = unflatten(position, problem_->dim());
        const Scalar phi = eval_.misfit(path);
        if (!std::isfinite(phi)) return std::numeric_limits<Scalar>::infinity();
        return phi + eval_.reference_offset(path);
      }
      case SamplerKind::CrankNicolsonDynamics:
        return eval_.misfit_noise(position);
    }
    return std::numeric_limits<Scalar>::infinity();
  }

 private:
  const SmoothingProblem<Scalar>* problem_;
  PotentialEvaluator<Scalar> eval_;
  SamplerKind kind_;
  Mat<Scalar> prior_factor_, sigma_factor_, proposal_factor_;
  Vec<Scalar> reference_mean_;
};

// Initial chain state from a position given in signal coordinates (v_0 for
// the random walk, a flattened path otherwise).
template <class Scalar>
ChainState<Scalar> make_chain_state(const McmcWorkspace<Scalar>& ws, const Vec<Scalar>& init) {
  ChainState<Scalar> s;
  if (ws.kind() == SamplerKind::RandomWalk) {
    require(init.size() == ws.problem().dim(), "make_chain_state: init must be an initial condition");
    s.position = init;
  } else if (ws.kind() == SamplerKind::CrankNicolsonDynamics) {
    require(init.size() == ws.path_len(), "make_chain_state: init must be a flattened path");
    s.position = ws.eval().signal_to_noise(unflatten(init, ws.problem().dim()));
  } else {
    require(init.size() == ws.path_len(), "make_chain_state: init must be a flattened path");
    s.position = init;
  }
  s.potential = ws.potential(s.position);
  if (!std::isfinite(s.potential))
    throw NonFiniteObjective("make_chain_state: potential not finite at the initial state");
  return s;
}

// The emitted sample for a chain state: noise coordinates are mapped back to
// the signal path, other kinds emit the position as-is.
template <class Scalar>
Vec<Scalar> emitted_sample(const McmcWorkspace<Scalar>& ws, const ChainState<Scalar>& s) {
  if (ws.kind() == SamplerKind::CrankNicolsonDynamics)
    return flatten(ws.eval().noise_to_signal(s.position));
  return s.position;
}

namespace detail {

// Shared accept/reject step. Always consumes exactly one uniform, so paired
// samplers driven by cloned streams stay in lockstep; a NaN log ratio
// (inf - inf) compares false and rejects.
template <class Scalar>
bool metropolis_accept(ChainState<Scalar>& s, Vec<Scalar>&& proposal,
                       Scalar proposal_potential, RngStream& rng) {
  if (!std::isfinite(proposal_potential)) ++s.nonfinite_count;
  const Scalar log_ratio = s.potential - proposal_potential;
  const Scalar u = static_cast<Scalar>(rng.uniform01());
  ++s.step_count;
  if (u < std::exp(log_ratio)) {
    s.position = std::move(proposal);
    s.potential = proposal_potential;
    ++s.accept_count;
    return true;
  }
  return false;
}

}  // namespace detail

// w = u + beta L z with L the proposal factor; accept on exp(I_det(u)-I_det(w)).
template <class Scalar>
bool rwm_step(const McmcWorkspace<Scalar>& ws, Scalar beta, ChainState<Scalar>& s,
              RngStream& rng) {
  Vec<Scalar> proposal =
      s.position + beta * (ws.proposal_factor() * rng.normal_vector<Scalar>(s.position.size()));
  const Scalar potential = ws.potential(proposal);
  return detail::metropolis_accept(s, std::move(proposal), potential, rng);
}

// Fresh prior-dynamics draw, independent of the current state; accept on the
// misfit difference exp(Phi(u)-Phi(w)).
template <class Scalar>
bool ids_step(const McmcWorkspace<Scalar>& ws, ChainState<Scalar>& s, RngStream& rng) {
  const Index n = ws.problem().dim();
  const Vec<Scalar> iota = ws.draw_reference(rng);
  Trajectory<Scalar> path(static_cast<std::size_t>(ws.problem().steps()) + 1);
  path[0] = ws.problem().prior.mean + iota.segment(0, n);
  for (Index j = 0; j < ws.problem().steps(); ++j)
    path[static_cast<std::size_t>(j) + 1] =
        apply_map(ws.problem().model, path[static_cast<std::size_t>(j)]) +
        iota.segment((j + 1) * n, n);
  bool finite = true;
  for (const auto& v : path)
    if (!all_finite(v)) finite = false;
  Vec<Scalar> proposal = flatten(path);
  const Scalar potential =
      finite ? ws.eval().misfit(path) : std::numeric_limits<Scalar>::infinity();
  return detail::metropolis_accept(s, std::move(proposal), potential, rng);
}

// w = m + sqrt(1-beta^2)(u - m) + beta iota against the Gaussian reference;
// accept on exp(Phi(u)-Phi(w)+F(u)-F(w)).
template <class Scalar>
bool pcn_step(const McmcWorkspace<Scalar>& ws, Scalar beta, ChainState<Scalar>& s,
              RngStream& rng) {
  const Vec<Scalar> iota = ws.draw_reference(rng);
  Vec<Scalar> proposal = ws.reference_mean() +
                         std::sqrt(Scalar(1) - beta * beta) * (s.position - ws.reference_mean()) +
                         beta * iota;
  const Scalar potential = ws.potential(proposal);
  return detail::metropolis_accept(s, std::move(proposal), potential, rng);
}

// The same autoregressive proposal in noise coordinates, where the reference
// is the prior itself; accept on exp(Phi_r(xi)-Phi_r(zeta)). At beta = 1 this
// consumes the stream exactly like ids_step and makes identical decisions.
template <class Scalar>
bool pcn_dynamics_step(const McmcWorkspace<Scalar>& ws, Scalar beta, ChainState<Scalar>& s,
                       RngStream& rng) {
  const Vec<Scalar> iota = ws.draw_reference(rng);
  Vec<Scalar> proposal = ws.reference_mean() +
                         std::sqrt(Scalar(1) - beta * beta) * (s.position - ws.reference_mean()) +
                         beta * iota;
  const Scalar potential = ws.eval().misfit_noise(proposal);
  return detail::metropolis_accept(s, std::move(proposal), potential, rng);
}

// F(v) = sum_j ( |Sigma^{-1/2} Psi(v_j)|^2 / 2 - <Sigma^{-1/2} v_{j+1}, Sigma^{-1/2} Psi(v_j)> ),
// the non-Gaussian part of the prior dynamics density on paths.
template <class Scalar>
Scalar compute_F(const SmoothingProblem<Scalar>& p, const Trajectory<Scalar>& path) {
  PotentialEvaluator<Scalar> eval(p);
  return eval.reference_offset(path);
}

// init: the starting state in signal coordinates (v_0 for the random walk, a
// flattened path for the path samplers; the noise-coordinate sampler converts
// internally).
template <class Scalar>
ChainResult<Scalar> run_chain(const SmoothingProblem<Scalar>& p,
                              const SamplerConfig<Scalar>& cfg, const Vec<Scalar>& init,
                              RngStream& rng) {
  if (cfg.steps < 0) throw ValidationError("run_chain: negative step count");
  if (cfg.thin < 1) throw ValidationError("run_chain: thin must be >= 1");
  McmcWorkspace<Scalar> ws(p, cfg);
  ChainState<Scalar> chain = make_chain_state(ws, init);

  const long burn_in = cfg.burn_in >= 0 ? cfg.burn_in : cfg.steps / 10;
  const long emitted_states =
      cfg.steps > 0 && cfg.steps >= burn_in ? (cfg.steps - burn_in) / cfg.thin + 1 : 0;
  const Index emit_dim = cfg.kind == SamplerKind::RandomWalk ? p.dim() : ws.path_len();
  const long nonfinite_limit =
      cfg.max_nonfinite_fraction >= 0
          ? static_cast<long>(cfg.max_nonfinite_fraction * static_cast<double>(cfg.steps))
          : -1;

  ChainResult<Scalar> out;
  out.samples.resize(emit_dim, emitted_states);
  out.running_mean_first.reserve(static_cast<std::size_t>(cfg.steps) + 1);

  long emit_slot = 0;
  auto emit_state = [&]() { out.samples.col(emit_slot++) = emitted_sample(ws, chain); };

  Scalar running_sum = chain.position[0];
  out.running_mean_first.push_back(running_sum);
  if (burn_in == 0 && emitted_states > 0) emit_state();

  for (long step = 1; step <= cfg.steps; ++step) {
    switch (cfg.kind) {
      case SamplerKind::RandomWalk:
        rwm_step(ws, cfg.beta, chain, rng);
        break;
      case SamplerKind::IndependenceDynamics:
        ids_step(ws, chain, rng);
        break;
      case SamplerKind::CrankNicolson:
        pcn_step(ws, cfg.beta, chain, rng);
        break;
      case SamplerKind::CrankNicolsonDynamics:
        pcn_dynamics_step(ws, cfg.beta, chain, rng);
        break;
    }
    if (nonfinite_limit >= 0 && chain.nonfinite_count > nonfinite_limit)
      throw BlowUpLimit("run_chain: too many non-finite proposals");

    running_sum += chain.position[0];
    out.running_mean_first.push_back(running_sum / Scalar(step + 1));
    if (step >= burn_in && (step - burn_in) % cfg.thin == 0 && emit_slot < emitted_states)
      emit_state();
  }

  out.accepted = chain.accept_count;
  out.proposals = chain.step_count;
  out.rejected_nonfinite = chain.nonfinite_count;
  out.acceptance_rate = out.proposals > 0
                            ? Scalar(out.accepted) / Scalar(out.proposals)
                            : std::numeric_limits<Scalar>::quiet_NaN();
  out.final_state = chain.position;
  out.samples.conservativeResize(emit_dim, emit_slot);
  return out;
}

// A prior-dynamics draw flattened to a path vector, usable as a chain start.
template <class Scalar>
Vec<Scalar> draw_prior_path(const SmoothingProblem<Scalar>& p, RngStream& rng) {
  if (p.deterministic()) throw ZeroModelNoise("draw_prior_path: needs stochastic dynamics");
  const Vec<Scalar> v0 = sample_gaussian(p.prior, rng);
  return flatten(simulate(p.model, v0, p.steps(), p.sigma, rng));
}

}  // namespace dakit
