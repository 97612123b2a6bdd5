#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "dakit/smoothing.hpp"

namespace dakit {

template <class Scalar>
struct OptimizerOptions {
  long max_iterations = 10000;          // simplex updates per phase
  Scalar initial_scale = Scalar(0.05);  // relative simplex size around the start
  Scalar f_tolerance = Scalar(1e-10);   // convergence on objective spread
  Scalar x_tolerance = Scalar(1e-8);    // convergence on simplex extent
  int restarts = 3;  // rebuild the simplex around the incumbent, shrinking the scale
};

template <class Scalar>
struct VarResult {
  Vec<Scalar> minimizer;
  Scalar value = std::numeric_limits<Scalar>::infinity();
  bool converged = false;
  Vec<Scalar> start;
  long iterations = 0;
};

namespace detail {

// One Nelder-Mead run from a given simplex scale, with the standard
// reflection/expansion/contraction/shrink coefficients (1, 2, 0.5, 0.5).
// Non-finite objective values are treated as +inf, so the simplex backs away
// from blow-up regions.
template <class Scalar, class F>
void nelder_mead_phase(F& f, std::vector<Vec<Scalar>>& simplex, std::vector<Scalar>& values,
                       long& iterations, const OptimizerOptions<Scalar>& opt,
                       bool& converged) {
  const Index n = simplex.front().size();
  auto safe_eval = [&](const Vec<Scalar>& x) {
    const Scalar v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<Scalar>::infinity();
  };
  std::vector<std::size_t> order(simplex.size());

  for (long it = 0; it < opt.max_iterations; ++it, ++iterations) {
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front(), worst = order.back(),
                      second_worst = order[order.size() - 2];

    Scalar spread = Scalar(0), extent = Scalar(0);
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (std::isfinite(values[i]))
        spread = std::max(spread, std::abs(values[i] - values[best]));
      else
        spread = std::numeric_limits<Scalar>::infinity();
      extent = std::max(extent,
                        (simplex[i] - simplex[best]).template lpNorm<Eigen::Infinity>());
    }
    if (spread <= opt.f_tolerance * (Scalar(1) + std::abs(values[best])) &&
        extent <= opt.x_tolerance * (Scalar(1) + simplex[best].template lpNorm<Eigen::Infinity>())) {
      converged = true;
      return;
    }

    Vec<Scalar> centroid = Vec<Scalar>::Zero(n);
    for (std::size_t i = 0; i < simplex.size(); ++i)
      if (i != worst) centroid += simplex[i];
    centroid /= Scalar(simplex.size() - 1);

    const Vec<Scalar> reflected = centroid + (centroid - simplex[worst]);
    const Scalar f_reflected = safe_eval(reflected);
    if (f_reflected < values[best]) {
      const Vec<Scalar> expanded = centroid + Scalar(2) * (centroid - simplex[worst]);
      const Scalar f_expanded = safe_eval(expanded);
      if (f_expanded < f_reflected) {
        simplex[worst] = expanded;
        values[worst] = f_expanded;
      } else {
        simplex[worst] = reflected;
        values[worst] = f_reflected;
      }
      continue;
    }
    if (f_reflected < values[second_worst]) {
      simplex[worst] = reflected;
      values[worst] = f_reflected;
      continue;
    }
    if (f_reflected < values[worst]) {
      const Vec<Scalar> outside = centroid + Scalar(0.5) * (centroid - simplex[worst]);
      const Scalar f_outside = safe_eval(outside);
      if (f_outside <= f_reflected) {
        simplex[worst] = outside;
        values[worst] = f_outside;
        continue;
      }
    } else {
      const Vec<Scalar> inside = centroid - Scalar(0.5) * (centroid - simplex[worst]);
      const Scalar f_inside = safe_eval(inside);
      if (f_inside < values[worst]) {
        simplex[worst] = inside;
        values[worst] = f_inside;
        continue;
      }
    }
    // Shrink toward the best vertex.
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i == best) continue;
      simplex[i] = simplex[best] + Scalar(0.5) * (simplex[i] - simplex[best]);
      values[i] = safe_eval(simplex[i]);
    }
  }
}

}  // namespace detail

// Derivative-free minimization (Nelder-Mead with restarts). Deterministic
// given the start and options. Throws NonFiniteObjective if the objective is
// not finite at the start.
template <class Scalar, class F>
VarResult<Scalar> nelder_mead(F&& f, const Vec<Scalar>& start,
                              const OptimizerOptions<Scalar>& opt = {}) {
  const Index n = start.size();
  require(n > 0, "nelder_mead: empty start");
  VarResult<Scalar> out;
  out.start = start;
  const Scalar f0 = f(start);
  if (!std::isfinite(f0))
    throw NonFiniteObjective("nelder_mead: objective not finite at the start");

  Vec<Scalar> incumbent = start;
  Scalar incumbent_value = f0;
  Scalar scale = opt.initial_scale;
  for (int phase = 0; phase <= opt.restarts; ++phase) {
    std::vector<Vec<Scalar>> simplex(static_cast<std::size_t>(n) + 1, incumbent);
    std::vector<Scalar> values(static_cast<std::size_t>(n) + 1, incumbent_value);
    for (Index i = 0; i < n; ++i) {
      Vec<Scalar>& vertex = simplex[static_cast<std::size_t>(i) + 1];
      const Scalar delta =
          scale * (std::abs(incumbent[i]) > Scalar(0) ? std::abs(incumbent[i]) : Scalar(1));
      vertex[i] += delta;
      const Scalar v = f(vertex);
      values[static_cast<std::size_t>(i) + 1] = std::isfinite(v)
                                                    ? v
                                                    : std::numeric_limits<Scalar>::infinity();
    }
    bool phase_converged = false;
    detail::nelder_mead_phase(f, simplex, values, out.iterations, opt, phase_converged);
    const auto best_it = std::min_element(values.begin(), values.end());
    const std::size_t best = static_cast<std::size_t>(best_it - values.begin());
    if (values[best] < incumbent_value) {
      incumbent_value = values[best];
      incumbent = simplex[best];
    }
    out.converged = phase_converged;
    scale *= Scalar(0.25);
  }
  out.minimizer = incumbent;
  out.value = incumbent_value;
  return out;
}

namespace detail {

template <class Scalar, class F>
VarResult<Scalar> minimize_or_record(F&& f, const Vec<Scalar>& start,
                                     const OptimizerOptions<Scalar>& opt) {
  try {
    return nelder_mead<Scalar>(f, start, opt);
  } catch (const NonFiniteObjective&) {
    // A bad start must not abort the batch; it just loses the sort.
    VarResult<Scalar> failed;
    failed.minimizer = start;
    failed.start = start;
    return failed;
  }
}

}  // namespace detail

// Strong-constraint variational estimate: minimize the deterministic negative
// log posterior over the initial condition, from each start. Results come
// back sorted by objective value, best first.
template <class Scalar>
std::vector<VarResult<Scalar>> fourdvar(const SmoothingProblem<Scalar>& p,
                                        const std::vector<Vec<Scalar>>& starts,
                                        const OptimizerOptions<Scalar>& opt = {}) {
  if (!p.deterministic())
    throw ValidationError("fourdvar: defined for deterministic dynamics");
  if (starts.empty()) throw EmptySamples("fourdvar: no starts");
  PotentialEvaluator<Scalar> eval(p);
  auto objective = [&](const Vec<Scalar>& v0) { return eval.neg_log_posterior_det(v0); };
  std::vector<VarResult<Scalar>> runs;
  runs.reserve(starts.size());
  for (const auto& start : starts)
    runs.push_back(detail::minimize_or_record<Scalar>(objective, start, opt));
  std::sort(runs.begin(), runs.end(),
            [](const auto& a, const auto& b) { return a.value < b.value; });
  return runs;
}

// Weak-constraint variational estimate: minimize the full path objective
// I = J + Phi over flattened paths v_0..v_J.
template <class Scalar>
std::vector<VarResult<Scalar>> w4dvar(const SmoothingProblem<Scalar>& p,
                                      const std::vector<Vec<Scalar>>& starts,
                                      const OptimizerOptions<Scalar>& opt = {}) {
  if (p.deterministic()) throw ZeroModelNoise("w4dvar: needs stochastic dynamics");
  if (starts.empty()) throw EmptySamples("w4dvar: no starts");
  PotentialEvaluator<Scalar> eval(p);
  const Index n = p.dim();
  auto objective = [&](const Vec<Scalar>& path_flat) {
    return eval.neg_log_posterior(unflatten(path_flat, n));
  };
  std::vector<VarResult<Scalar>> runs;
  runs.reserve(starts.size());
  for (const auto& start : starts) {
    require(start.size() == (p.steps() + 1) * n, "w4dvar: start must be a flattened path");
    runs.push_back(detail::minimize_or_record<Scalar>(objective, start, opt));
  }
  std::sort(runs.begin(), runs.end(),
            [](const auto& a, const auto& b) { return a.value < b.value; });
  return runs;
}

}  // namespace dakit
