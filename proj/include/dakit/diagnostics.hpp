#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dakit/filters.hpp"
#include "dakit/types.hpp"

namespace dakit {

// ---------------------------------------------------------------------------
// Long-time covariance analysis for the scalar Kalman filter. The analysis
// variance obeys c_{j+1} = g(c_j) with
//   g(c) = gamma^2 (lambda^2 c + sigma^2) / (gamma^2 + lambda^2 c + sigma^2),
// so its limiting behaviour is read off the fixed points of g.

template <class Scalar>
Scalar kalman_1d_map(Scalar c, Scalar lambda, Scalar sigma2, Scalar gamma2) {
  const Scalar t = lambda * lambda * c + sigma2;
  return gamma2 * t / (gamma2 + t);
}

template <class Scalar>
Scalar kalman_1d_map_derivative(Scalar c, Scalar lambda, Scalar sigma2, Scalar gamma2) {
  const Scalar denom = gamma2 + lambda * lambda * c + sigma2;
  return lambda * lambda * gamma2 * gamma2 / (denom * denom);
}

template <class Scalar>
struct KalmanFixedPoints1D {
  Scalar c_plus = Scalar(0);   // the root reached from c_0 >= 0
  Scalar c_minus = Scalar(0);  // the companion root (negative when sigma > 0)
  bool plus_stable = false;
  bool minus_stable = false;
  // lambda = 0 collapses the quadratic; both roots report the one-step limit
  // gamma^2 sigma^2 / (gamma^2 + sigma^2).
  bool degenerate = false;
};

// Roots of lambda^2 c^2 + (gamma^2 (1 - lambda^2) + sigma^2) c - gamma^2 sigma^2 = 0,
// i.e. the fixed points of kalman_1d_map, with stability from |g'| < 1.
template <class Scalar>
KalmanFixedPoints1D<Scalar> kalman_1d_fixed_points(Scalar lambda, Scalar sigma2,
                                                   Scalar gamma2) {
  if (!(gamma2 > Scalar(0)))
    throw InvalidVariance("kalman_1d_fixed_points: gamma^2 must be positive");
  if (sigma2 < Scalar(0))
    throw InvalidVariance("kalman_1d_fixed_points: sigma^2 must be nonnegative");
  KalmanFixedPoints1D<Scalar> out;
  const Scalar l2 = lambda * lambda;
  if (l2 == Scalar(0)) {
    const Scalar c_star = gamma2 * sigma2 / (gamma2 + sigma2);
    out.c_plus = out.c_minus = c_star;
    out.plus_stable = out.minus_stable = true;
    out.degenerate = true;
    return out;
  }
  const Scalar b = gamma2 * (Scalar(1) - l2) + sigma2;
  const Scalar disc = b * b + Scalar(4) * l2 * gamma2 * sigma2;
  const Scalar root = std::sqrt(disc);
  out.c_plus = (-b + root) / (Scalar(2) * l2);
  out.c_minus = (-b - root) / (Scalar(2) * l2);
  auto stable = [&](Scalar c) {
    return std::abs(kalman_1d_map_derivative(c, lambda, sigma2, gamma2)) < Scalar(1);
  };
  out.plus_stable = stable(out.c_plus);
  out.minus_stable = stable(out.c_minus);
  return out;
}

// ---------------------------------------------------------------------------
// Error statistics.

template <class Scalar>
struct ErrorSeries {
  std::vector<Scalar> errors;        // per-step |m_j - v_j|
  std::vector<Scalar> running_mean;  // prefix averages of errors
};

template <class Scalar>
ErrorSeries<Scalar> error_series(const std::vector<Scalar>& errors) {
  ErrorSeries<Scalar> out;
  out.errors = errors;
  out.running_mean.reserve(errors.size());
  Scalar sum = Scalar(0);
  for (std::size_t j = 0; j < errors.size(); ++j) {
    sum += errors[j];
    out.running_mean.push_back(sum / Scalar(j + 1));
  }
  return out;
}

template <class Scalar>
ErrorSeries<Scalar> error_series(const FilterRunResult<Scalar>& run) {
  return error_series(run.error);
}

template <class Scalar>
struct WindowSummary {
  Scalar mean = Scalar(0);
  Scalar sd = Scalar(0);
  Scalar excess_kurtosis = Scalar(0);
  std::size_t window_begin = 0;
  std::size_t window_end = 0;  // one past the last index
};

// Moment summary over [begin, end); defaults to the trailing half so startup
// transients stay out of the statistics.
template <class Scalar>
WindowSummary<Scalar> window_summary(const std::vector<Scalar>& xs, long begin = -1,
                                     long end = -1) {
  if (xs.empty()) throw EmptySamples("window_summary: no values");
  const std::size_t b = begin >= 0 ? static_cast<std::size_t>(begin) : xs.size() / 2;
  const std::size_t e = end >= 0 ? static_cast<std::size_t>(end) : xs.size();
  if (b >= e || e > xs.size()) throw ValidationError("window_summary: bad window");
  const std::size_t n = e - b;
  WindowSummary<Scalar> out;
  out.window_begin = b;
  out.window_end = e;
  Scalar sum = Scalar(0);
  for (std::size_t i = b; i < e; ++i) sum += xs[i];
  out.mean = sum / Scalar(n);
  Scalar m2 = Scalar(0), m4 = Scalar(0);
  for (std::size_t i = b; i < e; ++i) {
    const Scalar d = xs[i] - out.mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= Scalar(n);
  m4 /= Scalar(n);
  out.sd = std::sqrt(m2);
  out.excess_kurtosis = m2 > Scalar(0) ? m4 / (m2 * m2) - Scalar(3) : Scalar(0);
  return out;
}

// ---------------------------------------------------------------------------
// Rank histograms for ensemble calibration.

struct RankHistogram {
  std::vector<long> counts;  // N + 1 bins, rank of the observation among members
  long steps = 0;
};

// For each recorded step: push each predicted member through the observation
// operator, perturb it with a fresh observational noise draw, project onto
// the chosen data component, and rank the actual observation among the N
// perturbed member values (rank 1 when it falls below all of them, N + 1
// above all).
template <class Scalar>
RankHistogram rank_histogram(const std::vector<Mat<Scalar>>& predicted_ensembles,
                             const std::vector<Vec<Scalar>>& data,
                             const ObservationOperator<Scalar>& obs, const Mat<Scalar>& gamma,
                             Index component, RngStream& rng) {
  if (predicted_ensembles.empty())
    throw NonEnsembleFilter("rank_histogram: no recorded ensembles");
  require(component >= 0 && component < obs.obs_dim(), "rank_histogram: component index");
  require(gamma.rows() == obs.obs_dim(), "rank_histogram: Gamma dimension");
  require(data.size() >= predicted_ensembles.size(), "rank_histogram: data shorter than records");
  const Mat<Scalar> gamma_factor = cholesky_factor(gamma);
  const Index members = predicted_ensembles.front().cols();
  RankHistogram out;
  out.counts.assign(static_cast<std::size_t>(members) + 1, 0);
  for (std::size_t j = 0; j < predicted_ensembles.size(); ++j) {
    const Mat<Scalar>& ensemble = predicted_ensembles[j];
    require(ensemble.cols() == members, "rank_histogram: ensemble size changed mid-run");
    const Mat<Scalar> observed_members = obs.h * ensemble;
    const Scalar observed = data[j][component];
    long below = 0;
    for (Index n = 0; n < members; ++n) {
      const Vec<Scalar> noise = gamma_factor * rng.normal_vector<Scalar>(gamma.rows());
      if (observed_members(component, n) + noise[component] < observed) ++below;
    }
    ++out.counts[static_cast<std::size_t>(below)];
    ++out.steps;
  }
  return out;
}

// Chi-square statistic of the histogram against the uniform law; dof is
// bins - 1.
inline double rank_uniformity_chi2(const RankHistogram& hist) {
  const double expected =
      static_cast<double>(hist.steps) / static_cast<double>(hist.counts.size());
  double stat = 0;
  for (const long c : hist.counts) {
    const double d = static_cast<double>(c) - expected;
    stat += d * d / expected;
  }
  return stat;
}

// ---------------------------------------------------------------------------
// Cross-filter comparison on a shared scenario.

inline const char* filter_kind_name(FilterKind kind) {
  switch (kind) {
    case FilterKind::Kalman: return "kf";
    case FilterKind::ThreeDVar: return "3dvar";
    case FilterKind::ExtendedKalman: return "exkf";
    case FilterKind::EnsembleKalman: return "enkf";
    case FilterKind::EnsembleTransform: return "etkf";
    case FilterKind::Sirs: return "sirs";
    case FilterKind::SirsOptimal: return "sirs_op";
    case FilterKind::Synchronization: return "sync";
  }
  return "unknown";
}

template <class Scalar>
struct FilterComparisonRow {
  FilterKind kind = FilterKind::Kalman;
  std::string label;
  WindowSummary<Scalar> summary;
  bool blew_up = false;
};

// Tail-window error statistics for filters run against the same truth and
// data. The scenario fingerprint guards against comparing across different
// data streams.
template <class Scalar>
std::vector<FilterComparisonRow<Scalar>> compare_filters(
    const std::vector<FilterRunResult<Scalar>>& runs, long window_begin = -1) {
  if (runs.empty()) throw EmptySamples("compare_filters: no runs");
  std::vector<FilterComparisonRow<Scalar>> rows;
  rows.reserve(runs.size());
  for (const auto& run : runs) {
    if (run.scenario_fingerprint != runs.front().scenario_fingerprint)
      throw ConfigMismatch("compare_filters: runs saw different truth/data streams");
    FilterComparisonRow<Scalar> row;
    row.kind = run.kind;
    row.label = filter_kind_name(run.kind);
    row.summary = window_summary(run.error, window_begin);
    row.blew_up = run.blew_up;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dakit
