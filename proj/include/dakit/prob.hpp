#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "dakit/gaussian.hpp"
#include "dakit/rng.hpp"
#include "dakit/types.hpp"

namespace dakit {

template <class Scalar>
Scalar trapezoid_integral(const Vec<Scalar>& grid, const Vec<Scalar>& values) {
  require(grid.size() == values.size(), "trapezoid_integral: grid/value sizes");
  if (grid.size() < 2) throw GridMismatch("trapezoid_integral: need at least two nodes");
  Scalar total = Scalar(0);
  for (Index i = 0; i + 1 < grid.size(); ++i)
    total += Scalar(0.5) * (grid[i + 1] - grid[i]) * (values[i] + values[i + 1]);
  return total;
}

// A probability density sampled on a strictly increasing grid, normalized so
// the trapezoid rule integrates it to one.
template <class Scalar>
struct GriddedDensity1D {
  Vec<Scalar> grid;
  Vec<Scalar> values;
};

template <class Scalar>
GriddedDensity1D<Scalar> make_density(Vec<Scalar> grid, Vec<Scalar> values) {
  require(grid.size() == values.size(), "make_density: grid/value sizes");
  if (grid.size() < 2) throw GridMismatch("make_density: need at least two nodes");
  for (Index i = 0; i + 1 < grid.size(); ++i)
    if (!(grid[i] < grid[i + 1]))
      throw GridMismatch("make_density: grid not strictly increasing");
  if (!all_finite(values)) throw DegeneratePosterior("make_density: values not finite");
  const Scalar floor = -Scalar(1e-12) * std::max(values.maxCoeff(), Scalar(1));
  for (Index i = 0; i < values.size(); ++i) {
    if (values[i] < floor) throw DegeneratePosterior("make_density: negative density value");
    if (values[i] < Scalar(0)) values[i] = Scalar(0);
  }
  const Scalar mass = trapezoid_integral(grid, values);
  if (!(mass > Scalar(0)) || !std::isfinite(mass))
    throw DegeneratePosterior("make_density: zero or non-finite total mass");
  values /= mass;
  return GriddedDensity1D<Scalar>{std::move(grid), std::move(values)};
}

template <class Scalar>
void check_shared_grid(const GriddedDensity1D<Scalar>& p, const GriddedDensity1D<Scalar>& q) {
  if (p.grid.size() != q.grid.size())
    throw GridMismatch("densities live on grids of different sizes");
  for (Index i = 0; i < p.grid.size(); ++i) {
    const Scalar tol = Scalar(1e-12) * std::max(Scalar(1), std::abs(p.grid[i]));
    if (std::abs(p.grid[i] - q.grid[i]) > tol)
      throw GridMismatch("densities live on different grids");
  }
}

template <class Scalar>
Scalar tv_distance_grid(const GriddedDensity1D<Scalar>& p, const GriddedDensity1D<Scalar>& q) {
  check_shared_grid(p, q);
  return Scalar(0.5) *
         trapezoid_integral<Scalar>(p.grid, (p.values - q.values).cwiseAbs().eval());
}

template <class Scalar>
Scalar hellinger_distance_grid(const GriddedDensity1D<Scalar>& p,
                               const GriddedDensity1D<Scalar>& q) {
  check_shared_grid(p, q);
  const Vec<Scalar> diff = p.values.cwiseSqrt() - q.values.cwiseSqrt();
  const Scalar half_sq = Scalar(0.5) * trapezoid_integral<Scalar>(p.grid, diff.cwiseAbs2().eval());
  return std::sqrt(std::max(half_sq, Scalar(0)));
}

template <class Scalar>
Scalar grid_mean(const GriddedDensity1D<Scalar>& p) {
  return trapezoid_integral<Scalar>(p.grid, p.grid.cwiseProduct(p.values).eval());
}

template <class Scalar>
Scalar grid_variance(const GriddedDensity1D<Scalar>& p) {
  const Scalar m = grid_mean(p);
  const Vec<Scalar> centered = (p.grid.array() - m).matrix();
  return trapezoid_integral<Scalar>(p.grid, centered.cwiseAbs2().cwiseProduct(p.values).eval());
}

template <class Scalar>
GriddedDensity1D<Scalar> gaussian_density_on_grid(Scalar mean, Scalar variance,
                                                  Vec<Scalar> grid) {
  if (!(variance > Scalar(0))) throw InvalidVariance("gaussian_density_on_grid: variance <= 0");
  Vec<Scalar> values(grid.size());
  for (Index i = 0; i < grid.size(); ++i) {
    const Scalar z = grid[i] - mean;
    values[i] = std::exp(-z * z / (Scalar(2) * variance));
  }
  return make_density(std::move(grid), std::move(values));
}

// Hellinger distance between N(m1, v1) and N(m2, v2).
template <class Scalar>
Scalar hellinger_gaussian_1d(Scalar m1, Scalar v1, Scalar m2, Scalar v2) {
  if (!(v1 > Scalar(0)) || !(v2 > Scalar(0)))
    throw InvalidVariance("hellinger_gaussian_1d: variance <= 0");
  const Scalar s1 = std::sqrt(v1), s2 = std::sqrt(v2);
  const Scalar sum = v1 + v2;
  const Scalar dm = m1 - m2;
  const Scalar h2 =
      Scalar(1) - std::sqrt(std::exp(-dm * dm / (Scalar(2) * sum)) * Scalar(2) * s1 * s2 / sum);
  return std::sqrt(std::max(h2, Scalar(0)));
}

// KL(N(m1, v1) || N(m2, v2)).
template <class Scalar>
Scalar kl_gaussian_1d(Scalar m1, Scalar v1, Scalar m2, Scalar v2) {
  if (!(v1 > Scalar(0)) || !(v2 > Scalar(0)))
    throw InvalidVariance("kl_gaussian_1d: variance <= 0");
  const Scalar dm = m1 - m2;
  return Scalar(0.5) * (std::log(v2 / v1) + v1 / v2 - Scalar(1) + dm * dm / v2);
}

template <class Scalar>
Scalar normal_cdf(Scalar x, Scalar mean, Scalar variance) {
  if (!(variance > Scalar(0))) throw InvalidVariance("normal_cdf: variance <= 0");
  return Scalar(0.5) * (Scalar(1) + std::erf((x - mean) / std::sqrt(Scalar(2) * variance)));
}

// Total variation distance between N(m1, v1) and N(m2, v2). With equal
// variances the densities cross once at the midpoint; otherwise the crossing
// points solve a quadratic and the distance is read off the CDF differences
// between crossings.
template <class Scalar>
Scalar tv_gaussian_1d(Scalar m1, Scalar v1, Scalar m2, Scalar v2) {
  if (!(v1 > Scalar(0)) || !(v2 > Scalar(0)))
    throw InvalidVariance("tv_gaussian_1d: variance <= 0");
  if (std::abs(v1 - v2) <= Scalar(1e-14) * std::max(v1, v2)) {
    const Scalar v = Scalar(0.5) * (v1 + v2);
    return std::erf(std::abs(m1 - m2) / (Scalar(2) * std::sqrt(Scalar(2) * v)));
  }
  const Scalar a = Scalar(1) / (Scalar(2) * v2) - Scalar(1) / (Scalar(2) * v1);
  const Scalar b = m1 / v1 - m2 / v2;
  const Scalar c =
      m2 * m2 / (Scalar(2) * v2) - m1 * m1 / (Scalar(2) * v1) - Scalar(0.5) * std::log(v1 / v2);
  // Two crossings always exist for distinct variances.
  const Scalar disc = std::max(b * b - Scalar(4) * a * c, Scalar(0));
  const Scalar root = std::sqrt(disc);
  const Scalar q = -Scalar(0.5) * (b + (b >= Scalar(0) ? root : -root));
  Scalar x1, x2;
  if (q != Scalar(0)) {
    x1 = q / a;
    x2 = c / q;
  } else {
    x1 = Scalar(0);
    x2 = -b / a;
  }
  if (x1 > x2) std::swap(x1, x2);
  const Scalar d1 = normal_cdf(x1, m1, v1) - normal_cdf(x1, m2, v2);
  const Scalar d2 = normal_cdf(x2, m1, v1) - normal_cdf(x2, m2, v2);
  const Scalar tv = Scalar(0.5) * (std::abs(d1) + std::abs(d2 - d1) + std::abs(d2));
  return std::min(std::max(tv, Scalar(0)), Scalar(1));
}

// Empirical density from scalar samples: counting bins centered on the given
// nodes (edges at midpoints, the two end bins absorbing the half-lines),
// normalized by the trapezoid rule on the node grid.
template <class Scalar>
GriddedDensity1D<Scalar> empirical_density(const std::vector<Scalar>& samples,
                                           const Vec<Scalar>& centers) {
  if (samples.empty()) throw EmptySamples("empirical_density: no samples");
  if (centers.size() < 2) throw GridMismatch("empirical_density: need at least two centers");
  std::vector<Scalar> edges(static_cast<std::size_t>(centers.size()) - 1);
  for (Index i = 0; i + 1 < centers.size(); ++i) {
    if (!(centers[i] < centers[i + 1]))
      throw GridMismatch("empirical_density: centers not strictly increasing");
    edges[static_cast<std::size_t>(i)] = Scalar(0.5) * (centers[i] + centers[i + 1]);
  }
  Vec<Scalar> counts = Vec<Scalar>::Zero(centers.size());
  for (const Scalar x : samples) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), x);
    counts[static_cast<Index>(it - edges.begin())] += Scalar(1);
  }
  return make_density(centers, std::move(counts));
}

// An empirical measure sum_n w_n delta_{x_n}.
template <class Scalar>
struct WeightedSamples {
  std::vector<Vec<Scalar>> points;
  Vec<Scalar> weights;

  std::size_t size() const { return points.size(); }
};

template <class Scalar>
WeightedSamples<Scalar> make_equal_weights(std::vector<Vec<Scalar>> points) {
  if (points.empty()) throw EmptySamples("make_equal_weights: no points");
  const Index n = static_cast<Index>(points.size());
  return WeightedSamples<Scalar>{std::move(points),
                                 Vec<Scalar>::Constant(n, Scalar(1) / Scalar(n))};
}

// Normalize log weights with the max shifted out first, so a single surviving
// particle keeps weight one instead of everything underflowing to 0/0.
template <class Scalar>
Vec<Scalar> normalize_log_weights(const Vec<Scalar>& log_weights) {
  if (log_weights.size() == 0) throw EmptySamples("normalize_log_weights: no weights");
  Scalar max_log = -std::numeric_limits<Scalar>::infinity();
  for (Index i = 0; i < log_weights.size(); ++i) {
    const Scalar lw = std::isnan(log_weights[i])
                          ? -std::numeric_limits<Scalar>::infinity()
                          : log_weights[i];
    max_log = std::max(max_log, lw);
  }
  if (!std::isfinite(max_log))
    throw ZeroWeightSum("normalize_log_weights: all weights vanished");
  Vec<Scalar> w(log_weights.size());
  for (Index i = 0; i < w.size(); ++i) {
    const Scalar lw = std::isnan(log_weights[i])
                          ? -std::numeric_limits<Scalar>::infinity()
                          : log_weights[i];
    w[i] = std::exp(lw - max_log);
  }
  const Scalar total = w.sum();
  if (!(total > Scalar(0))) throw ZeroWeightSum("normalize_log_weights: zero weight sum");
  return w / total;
}

// Multinomial draw against the cumulative weights: index n* is the first with
// cumulative weight strictly greater than u, i.e. W_{n*-1} <= u < W_{n*}.
template <class Scalar>
std::vector<Index> multinomial_indices(const Vec<Scalar>& weights, Index draws,
                                       RngStream& rng) {
  if (weights.size() == 0) throw EmptySamples("multinomial_indices: no weights");
  Vec<Scalar> cumulative(weights.size());
  Scalar running = Scalar(0);
  for (Index i = 0; i < weights.size(); ++i) {
    if (weights[i] < Scalar(0) || !std::isfinite(weights[i]))
      throw ZeroWeightSum("multinomial_indices: invalid weight");
    running += weights[i];
    cumulative[i] = running;
  }
  if (!(running > Scalar(0))) throw ZeroWeightSum("multinomial_indices: zero weight sum");
  std::vector<Index> picked(static_cast<std::size_t>(draws));
  for (Index d = 0; d < draws; ++d) {
    const Scalar u = static_cast<Scalar>(rng.uniform01()) * running;
    Index lo = 0, hi = weights.size() - 1;
    while (lo < hi) {
      const Index mid = lo + (hi - lo) / 2;
      if (cumulative[mid] > u)
        hi = mid;
      else
        lo = mid + 1;
    }
    picked[static_cast<std::size_t>(d)] = lo;
  }
  return picked;
}

// The sampling operator S^N: replace a measure by the empirical measure of N
// equal-weight draws from it.
template <class Scalar>
WeightedSamples<Scalar> sampling_operator(const WeightedSamples<Scalar>& mu, Index n,
                                          RngStream& rng) {
  if (n < 1) throw EmptySamples("sampling_operator: need n >= 1");
  const std::vector<Index> picked = multinomial_indices(mu.weights, n, rng);
  std::vector<Vec<Scalar>> points;
  points.reserve(static_cast<std::size_t>(n));
  for (const Index i : picked) points.push_back(mu.points[static_cast<std::size_t>(i)]);
  return make_equal_weights(std::move(points));
}

template <class Scalar>
WeightedSamples<Scalar> sampling_operator(const GaussianState<Scalar>& mu, Index n,
                                          RngStream& rng) {
  if (n < 1) throw EmptySamples("sampling_operator: need n >= 1");
  const Mat<Scalar> factor = cholesky_factor(mu.cov);
  std::vector<Vec<Scalar>> points;
  points.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    points.push_back(sample_gaussian_prefactored(mu.mean, factor, rng));
  return make_equal_weights(std::move(points));
}

// Inverse-CDF draw from a gridded density (the CDF is piecewise quadratic on
// each cell since the density is piecewise linear).
template <class Scalar>
Scalar sample_gridded(const GriddedDensity1D<Scalar>& p, RngStream& rng) {
  const Index n = p.grid.size();
  Vec<Scalar> cdf(n);
  cdf[0] = Scalar(0);
  for (Index i = 0; i + 1 < n; ++i)
    cdf[i + 1] = cdf[i] + Scalar(0.5) * (p.grid[i + 1] - p.grid[i]) *
                              (p.values[i] + p.values[i + 1]);
  const Scalar u = static_cast<Scalar>(rng.uniform01()) * cdf[n - 1];
  Index lo = 0, hi = n - 2;
  while (lo < hi) {
    const Index mid = lo + (hi - lo) / 2;
    if (cdf[mid + 1] > u)
      hi = mid;
    else
      lo = mid + 1;
  }
  const Scalar x0 = p.grid[lo], x1 = p.grid[lo + 1];
  const Scalar p0 = p.values[lo], p1 = p.values[lo + 1];
  const Scalar target = u - cdf[lo];
  const Scalar width = x1 - x0;
  const Scalar slope = (p1 - p0) / width;
  if (std::abs(slope) * width < Scalar(1e-12) * std::max(p0, Scalar(1e-300))) {
    return p0 > Scalar(0) ? x0 + target / p0 : x0;
  }
  // Solve 0.5 * slope * t^2 + p0 * t = target for t in [0, width].
  const Scalar disc = std::max(p0 * p0 + Scalar(2) * slope * target, Scalar(0));
  Scalar t;
  if (slope > Scalar(0)) {
    t = (-p0 + std::sqrt(disc)) / slope;
  } else {
    t = Scalar(2) * target / (p0 + std::sqrt(disc));
  }
  return x0 + std::min(std::max(t, Scalar(0)), width);
}

// Density of map(X) for X ~ p and a map monotone on the support grid,
// evaluated on a fresh uniform grid over the image by the change of
// variables rho(x) = p(v(x)) |dv/dx|.
template <class Scalar>
GriddedDensity1D<Scalar> pushforward_grid(const GriddedDensity1D<Scalar>& p,
                                          const std::function<Scalar(Scalar)>& map,
                                          Index out_nodes = 0) {
  const Index n = p.grid.size();
  if (out_nodes <= 1) out_nodes = n;
  Vec<Scalar> image(n);
  for (Index i = 0; i < n; ++i) image[i] = map(p.grid[i]);
  if (!all_finite(image)) throw NonInvertibleMap("pushforward_grid: image not finite");
  const bool increasing = image[n - 1] > image[0];
  const Scalar span = std::abs(image[n - 1] - image[0]);
  if (!(span > Scalar(0))) throw NonInvertibleMap("pushforward_grid: flat image");
  for (Index i = 0; i + 1 < n; ++i) {
    const Scalar step = increasing ? image[i + 1] - image[i] : image[i] - image[i + 1];
    if (!(step > Scalar(1e-12) * span))
      throw NonInvertibleMap("pushforward_grid: map not strictly monotone on grid");
  }
  const Scalar lo = increasing ? image[0] : image[n - 1];
  const Scalar hi = increasing ? image[n - 1] : image[0];
  Vec<Scalar> out_grid(out_nodes), out_values(out_nodes);
  Index cell = 0;
  for (Index i = 0; i < out_nodes; ++i) {
    const Scalar x = lo + (hi - lo) * Scalar(i) / Scalar(out_nodes - 1);
    out_grid[i] = x;
    // Locate the source cell whose image contains x.
    auto cell_lo = [&](Index c) { return increasing ? image[c] : image[c + 1]; };
    auto cell_hi = [&](Index c) { return increasing ? image[c + 1] : image[c]; };
    while (cell + 2 < n && x > cell_hi(cell)) ++cell;
    while (cell > 0 && x < cell_lo(cell)) --cell;
    const Scalar y0 = image[cell], y1 = image[cell + 1];
    const Scalar s = (x - y0) / (y1 - y0);
    const Scalar v = p.grid[cell] + s * (p.grid[cell + 1] - p.grid[cell]);
    const Scalar density_at_v = p.values[cell] + s * (p.values[cell + 1] - p.values[cell]);
    const Scalar jacobian = std::abs((p.grid[cell + 1] - p.grid[cell]) / (y1 - y0));
    out_values[i] = density_at_v * jacobian;
  }
  return make_density(std::move(out_grid), std::move(out_values));
}

template <class Scalar>
Scalar sample_mean(const std::vector<Scalar>& xs) {
  if (xs.empty()) throw EmptySamples("sample_mean: no samples");
  Scalar s = Scalar(0);
  for (const Scalar x : xs) s += x;
  return s / Scalar(xs.size());
}

template <class Scalar>
Scalar sample_variance(const std::vector<Scalar>& xs) {
  if (xs.size() < 2) throw EmptySamples("sample_variance: need at least two samples");
  const Scalar m = sample_mean(xs);
  Scalar s = Scalar(0);
  for (const Scalar x : xs) s += (x - m) * (x - m);
  return s / Scalar(xs.size() - 1);
}

}  // namespace dakit
