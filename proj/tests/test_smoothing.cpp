#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "dakit/filters.hpp"
#include "dakit/mcmc.hpp"
#include "dakit/rng.hpp"
#include "dakit/smoothing.hpp"

using namespace dakit;

namespace {

Vecd vec1(double x) {
  Vecd v(1);
  v[0] = x;
  return v;
}

Matd mat1(double x) {
  Matd m(1, 1);
  m << x;
  return m;
}

SmoothingProblem<double> scalar_problem(double lambda, std::optional<double> sigma2,
                                        double gamma2, double m0, double c0,
                                        const std::vector<double>& data) {
  SmoothingProblem<double> p;
  p.model = LinearScalarMap<double>{lambda};
  p.obs = ObservationOperator<double>::identity(1);
  if (sigma2) p.sigma = mat1(*sigma2);
  p.gamma = mat1(gamma2);
  p.prior = GaussianState<double>(vec1(m0), mat1(c0));
  for (double y : data) p.data.push_back(vec1(y));
  return p;
}

SmoothingProblem<double> sin_problem(long steps, unsigned seed) {
  SmoothingProblem<double> p;
  p.model = SinMap<double>{2.5};
  p.obs = ObservationOperator<double>::identity(1);
  p.sigma = mat1(1.0);
  p.gamma = mat1(1.0);
  p.prior = GaussianState<double>(vec1(0.0), mat1(1.0));
  RngStream rng(seed, 0);
  const auto truth = simulate(p.model, vec1(0.2), steps, p.sigma, rng);
  RngStream obs_rng(seed, 1);
  p.data = generate_data(p.obs, truth, p.gamma, obs_rng);
  return p;
}

Trajectory<double> random_path(const SmoothingProblem<double>& p, RngStream& rng) {
  Trajectory<double> path(static_cast<std::size_t>(p.steps()) + 1);
  for (auto& v : path) v = rng.normal_vector(p.dim());
  return path;
}

}  // namespace

TEST_SUITE("problem") {
  TEST_CASE("flatten and unflatten are inverse") {
    RngStream rng(71, 0);
    Trajectory<double> path(4);
    for (auto& v : path) v = rng.normal_vector(2);
    const Vecd flat = flatten(path);
    REQUIRE(flat.size() == 8);
    const auto back = unflatten(flat, 2);
    REQUIRE(back.size() == 4);
    for (std::size_t j = 0; j < 4; ++j) CHECK((back[j] - path[j]).norm() == 0.0);
  }

  TEST_CASE("validate_problem rejects inconsistent shapes") {
    auto p = scalar_problem(0.5, 1.0, 1.0, 0.0, 1.0, {1.0});
    p.prior = GaussianState<double>(Vecd::Zero(2), Matd::Identity(2, 2));
    CHECK_THROWS_AS(validate_problem(p), ValidationError);

    auto q = scalar_problem(0.5, 1.0, 1.0, 0.0, 1.0, {1.0});
    q.gamma = Matd::Identity(2, 2);
    CHECK_THROWS_AS(validate_problem(q), ValidationError);
  }
}

TEST_SUITE("potentials") {
  TEST_CASE("hand-checked misfit and background on a two-state path") {
    const auto p = scalar_problem(1.0, 1.0, 1.0, 0.0, 1.0, {2.0});
    PotentialEvaluator<double> eval(p);

    Trajectory<double> path = {vec1(1.0), vec1(2.0)};
    CHECK(eval.misfit(path) == doctest::Approx(0.0));
    CHECK(eval.background(path) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(eval.neg_log_posterior(path) == doctest::Approx(1.0).epsilon(1e-14));

    Trajectory<double> zero = {vec1(0.0), vec1(0.0)};
    CHECK(eval.misfit(zero) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(eval.background(zero) == doctest::Approx(0.0));
  }

  TEST_CASE("deterministic potential sums prior and orbit misfits") {
    auto p = scalar_problem(0.0, std::nullopt, 0.04, 0.5, 0.01, {0.4, 0.5});
    p.model = LogisticMap<double>{2.0};
    PotentialEvaluator<double> eval(p);
    const double v0 = 0.3, v1 = 2.0 * 0.3 * 0.7, v2 = 2.0 * v1 * (1.0 - v1);
    const double expected = 0.5 * (0.3 - 0.5) * (0.3 - 0.5) / 0.01 +
                            0.5 * (0.4 - v1) * (0.4 - v1) / 0.04 +
                            0.5 * (0.5 - v2) * (0.5 - v2) / 0.04;
    CHECK(eval.neg_log_posterior_det(vec1(v0)) == doctest::Approx(expected).epsilon(1e-13));
  }

  TEST_CASE("non-finite paths cost plus infinity instead of throwing") {
    const auto p = scalar_problem(1.0, 1.0, 1.0, 0.0, 1.0, {2.0});
    PotentialEvaluator<double> eval(p);
    Trajectory<double> path = {vec1(0.0), vec1(std::numeric_limits<double>::infinity())};
    CHECK(std::isinf(eval.misfit(path)));
    CHECK(std::isinf(eval.background(path)));
    CHECK(std::isinf(eval.neg_log_posterior(path)));
  }

  TEST_CASE("background needs stochastic dynamics") {
    const auto p = scalar_problem(0.5, std::nullopt, 1.0, 0.0, 1.0, {1.0});
    PotentialEvaluator<double> eval(p);
    CHECK_THROWS_AS((void)eval.background({vec1(0.0), vec1(0.0)}), ZeroModelNoise);
  }

  TEST_CASE("partial observations weight only the observed component") {
    SmoothingProblem<double> p;
    p.model = LinearMap2D<double>{quarter_rotation_2d<double>()};
    p.obs = ObservationOperator<double>::first_component(2);
    p.sigma = Matd::Identity(2, 2);
    p.gamma = mat1(0.25);
    p.prior = GaussianState<double>(Vecd::Zero(2), Matd::Identity(2, 2));
    p.data = {vec1(1.0)};
    PotentialEvaluator<double> eval(p);
    Vecd v1(2);
    v1 << 2.0, 5.0;
    const Trajectory<double> path = {Vecd::Zero(2), v1};
    CHECK(eval.misfit(path) == doctest::Approx(0.5 * 1.0 / 0.25).epsilon(1e-14));
  }
}

TEST_SUITE("noise_coordinates") {
  TEST_CASE("signal and noise coordinates are inverse maps") {
    const auto p = sin_problem(10, 72);
    PotentialEvaluator<double> eval(p);
    RngStream rng(72, 2);
    const auto path = random_path(p, rng);
    const Vecd xi = eval.signal_to_noise(path);
    const auto back = eval.noise_to_signal(xi);
    REQUIRE(back.size() == path.size());
    for (std::size_t j = 0; j < path.size(); ++j)
      CHECK((back[j] - path[j]).norm() < 1e-12);
  }

  TEST_CASE("potentials agree term by term across the change of variables") {
    const auto p = sin_problem(10, 73);
    PotentialEvaluator<double> eval(p);
    RngStream rng(73, 2);
    for (int rep = 0; rep < 5; ++rep) {
      const Vecd xi = rng.normal_vector((p.steps() + 1) * p.dim());
      const auto path = eval.noise_to_signal(xi);
      CHECK(eval.misfit_noise(xi) == doctest::Approx(eval.misfit(path)).epsilon(1e-10));
      CHECK(eval.background_noise(xi) ==
            doctest::Approx(eval.background(path)).epsilon(1e-10));
      CHECK(eval.neg_log_posterior_noise(xi) ==
            doctest::Approx(eval.neg_log_posterior(path)).epsilon(1e-10));
    }
  }
}

TEST_SUITE("reference_offset") {
  TEST_CASE("hand value for the identity map on a two-state path") {
    const auto p = scalar_problem(1.0, 1.0, 1.0, 0.0, 1.0, {2.0});
    const Trajectory<double> path = {vec1(1.0), vec1(2.0)};
    CHECK(compute_F(p, path) == doctest::Approx(-1.5).epsilon(1e-14));
  }

  TEST_CASE("vanishes when the map is identically zero") {
    const auto p = scalar_problem(0.0, 1.0, 1.0, 0.0, 1.0, {2.0});
    RngStream rng(74, 0);
    const auto path = random_path(p, rng);
    CHECK(compute_F(p, path) == doctest::Approx(0.0));
  }

  TEST_CASE("background splits into the gaussian quadratic plus the offset") {
    const auto p = sin_problem(10, 75);
    PotentialEvaluator<double> eval(p);
    RngStream rng(75, 2);
    for (int rep = 0; rep < 5; ++rep) {
      const auto path = random_path(p, rng);
      double quadratic = half_weighted_squared_norm(p.prior.cov,
                                                    (path[0] - p.prior.mean).eval());
      for (Index j = 0; j < p.steps(); ++j)
        quadratic +=
            half_weighted_squared_norm(*p.sigma, path[static_cast<std::size_t>(j) + 1]);
      CHECK(eval.background(path) - quadratic - eval.reference_offset(path) ==
            doctest::Approx(0.0).epsilon(1e-10));
    }
  }
}

TEST_SUITE("block_tridiagonal") {
  TEST_CASE("solution and final schur complement match a dense factorization") {
    RngStream rng(76, 0);
    const Index blocks = 4, n = 2;
    BlockTridiagonal<double> a;
    for (Index b = 0; b < blocks; ++b) {
      Matd m(n, n);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) m(i, j) = rng.normal();
      a.diag.push_back((m * m.transpose() + 6.0 * Matd::Identity(n, n)).eval());
    }
    for (Index b = 0; b + 1 < blocks; ++b) {
      Matd m(n, n);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) m(i, j) = rng.normal();
      a.sub.push_back(m);
    }
    std::vector<Vecd> rhs;
    for (Index b = 0; b < blocks; ++b) rhs.push_back(rng.normal_vector(n));

    const auto sol = solve_block_tridiagonal(a, rhs);
    const Matd dense = a.dense();
    Vecd rhs_flat(blocks * n);
    for (Index b = 0; b < blocks; ++b) rhs_flat.segment(b * n, n) = rhs[static_cast<std::size_t>(b)];
    const Vecd x_dense = dense.ldlt().solve(rhs_flat);
    for (Index b = 0; b < blocks; ++b)
      CHECK((sol.x[static_cast<std::size_t>(b)] - x_dense.segment(b * n, n)).norm() < 1e-10);

    const Matd dense_inv = dense.inverse();
    const Matd last_block = dense_inv.block((blocks - 1) * n, (blocks - 1) * n, n, n);
    const Matd schur_inv = sol.last_schur.inverse();
    CHECK((schur_inv - last_block).norm() < 1e-10 * last_block.norm());
  }

  TEST_CASE("an indefinite system raises SingularPrecision") {
    BlockTridiagonal<double> a;
    a.diag = {Matd::Zero(1, 1), Matd::Identity(1, 1)};
    a.sub = {Matd::Identity(1, 1)};
    const std::vector<Vecd> rhs = {vec1(1.0), vec1(1.0)};
    CHECK_THROWS_AS((void)solve_block_tridiagonal(a, rhs), SingularPrecision);
  }
}

TEST_SUITE("smoother") {
  TEST_CASE("hand-checked two-block system") {
    const auto p = scalar_problem(1.0, 1.0, 1.0, 0.0, 1.0, {2.0});
    const auto result = kalman_smoother(p);
    REQUIRE(result.mean.size() == 2);
    CHECK(result.mean[0][0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(result.mean[1][0] == doctest::Approx(4.0 / 3.0).epsilon(1e-14));
    CHECK(result.precision.diag[0](0, 0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(result.precision.diag[1](0, 0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(result.precision.sub[0](0, 0) == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(result.last_marginal.mean[0] == doctest::Approx(4.0 / 3.0).epsilon(1e-14));
    CHECK(result.last_marginal.cov(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  }

  TEST_CASE("mean solves the assembled normal equations") {
    SmoothingProblem<double> p;
    p.model = LinearMap2D<double>{quarter_rotation_2d<double>()};
    p.obs = ObservationOperator<double>::first_component(2);
    p.sigma = (0.5 * Matd::Identity(2, 2)).eval();
    p.gamma = mat1(0.25);
    Matd c0(2, 2);
    c0 << 1.0, 0.0, 0.0, 2.0;
    Vecd m0(2);
    m0 << 0.3, -0.2;
    p.prior = GaussianState<double>(m0, c0);
    RngStream rng(77, 0);
    for (int j = 0; j < 6; ++j) p.data.push_back(rng.normal_vector(1));

    const auto result = kalman_smoother(p);
    const Matd dense = result.precision.dense();
    Vecd rhs = Vecd::Zero(dense.rows());
    rhs.segment(0, 2) = c0.inverse() * m0;
    const Matd ht_gamma_inv = p.obs.h.transpose() * p.gamma.inverse();
    for (Index b = 1; b <= p.steps(); ++b)
      rhs.segment(2 * b, 2) = ht_gamma_inv * p.data[static_cast<std::size_t>(b - 1)];
    CHECK((dense * flatten(result.mean) - rhs).norm() < 1e-10);
  }

  TEST_CASE("precision equals the finite-difference hessian of the path potential") {
    SmoothingProblem<double> p;
    p.model = LinearMap2D<double>{quarter_rotation_2d<double>()};
    p.obs = ObservationOperator<double>::first_component(2);
    p.sigma = (0.5 * Matd::Identity(2, 2)).eval();
    p.gamma = mat1(0.25);
    p.prior = GaussianState<double>(Vecd::Zero(2), Matd::Identity(2, 2));
    RngStream rng(78, 0);
    for (int j = 0; j < 3; ++j) p.data.push_back(rng.normal_vector(1));

    const auto result = kalman_smoother(p);
    const Matd dense = result.precision.dense();
    PotentialEvaluator<double> eval(p);
    auto potential = [&](const Vecd& flat) { return eval.neg_log_posterior(unflatten(flat, 2)); };

    const Index total = dense.rows();
    const Vecd base = rng.normal_vector(total);
    const double h = 1e-5;
    for (Index i = 0; i < total; ++i) {
      for (Index j = 0; j < total; ++j) {
        Vecd pp = base, pm = base, mp = base, mm = base;
        pp[i] += h; pp[j] += h;
        pm[i] += h; pm[j] -= h;
        mp[i] -= h; mp[j] += h;
        mm[i] -= h; mm[j] -= h;
        const double fd =
            (potential(pp) - potential(pm) - potential(mp) + potential(mm)) / (4 * h * h);
        CHECK(dense(i, j) == doctest::Approx(fd).epsilon(1e-4));
      }
    }
  }

  TEST_CASE("final smoother marginal matches the filter, scalar and 2d") {
    {
      SmoothingProblem<double> p = scalar_problem(0.9, 0.5, 0.2, 0.1, 1.0, {});
      RngStream rng(79, 0);
      const auto truth = simulate(p.model, vec1(0.0), 50, p.sigma, rng);
      RngStream obs_rng(79, 1);
      p.data = generate_data(p.obs, truth, p.gamma, obs_rng);

      const auto smoothed = kalman_smoother(p);
      const auto filtered = kalman_filter_pass(p);
      REQUIRE(filtered.size() == 51);
      CHECK(std::abs(smoothed.last_marginal.mean[0] - filtered.back().mean[0]) < 1e-8);
      CHECK(std::abs(smoothed.last_marginal.cov(0, 0) - filtered.back().cov(0, 0)) < 1e-8);
    }
    {
      SmoothingProblem<double> p;
      p.model = LinearMap2D<double>{quarter_rotation_2d<double>()};
      p.obs = ObservationOperator<double>::first_component(2);
      p.sigma = (0.3 * Matd::Identity(2, 2)).eval();
      p.gamma = mat1(0.5);
      Matd c0(2, 2);
      c0 << 1.0, 0.0, 0.0, 0.5;
      p.prior = GaussianState<double>(Vecd::Zero(2), c0);
      RngStream rng(80, 0);
      const auto truth = simulate(p.model, Vecd::Zero(2).eval(), 50, p.sigma, rng);
      RngStream obs_rng(80, 1);
      p.data = generate_data(p.obs, truth, p.gamma, obs_rng);

      const auto smoothed = kalman_smoother(p);
      const auto filtered = kalman_filter_pass(p);
      CHECK((smoothed.last_marginal.mean - filtered.back().mean).norm() < 1e-8);
      CHECK((smoothed.last_marginal.cov - filtered.back().cov).norm() < 1e-8);
    }
  }

  TEST_CASE("smoother demands noise and linearity") {
    CHECK_THROWS_AS((void)kalman_smoother(scalar_problem(0.5, std::nullopt, 1.0, 0.0, 1.0, {1.0})),
                    ZeroModelNoise);
    auto p = sin_problem(3, 81);
    CHECK_THROWS_AS((void)kalman_smoother(p), ValidationError);
  }
}

TEST_SUITE("deterministic_smoother") {
  TEST_CASE("matches the geometric-series posterior for a scalar linear map") {
    for (const double lambda : {0.8, 1.0}) {
      SmoothingProblem<double> p =
          scalar_problem(lambda, std::nullopt, 0.25, 0.4, 2.0, {});
      RngStream rng(82, 0);
      const auto truth = simulate(p.model, vec1(0.7), 10, p.sigma, rng);
      RngStream obs_rng(82, 1);
      p.data = generate_data(p.obs, truth, p.gamma, obs_rng);

      double precision = 1.0 / 2.0;
      double rhs = 0.4 / 2.0;
      double power = 1.0;
      for (Index j = 0; j < p.steps(); ++j) {
        power *= lambda;
        precision += power * power / 0.25;
        rhs += power * p.data[static_cast<std::size_t>(j)][0] / 0.25;
      }
      const double var = 1.0 / precision;
      const double mean = var * rhs;

      const auto posterior = kalman_smoother_det(p);
      CHECK(posterior.mean[0] == doctest::Approx(mean).epsilon(1e-10));
      CHECK(posterior.cov(0, 0) == doctest::Approx(var).epsilon(1e-10));
    }
  }

  TEST_CASE("grid posterior agrees with the closed form") {
    SmoothingProblem<double> p = scalar_problem(0.8, std::nullopt, 0.25, 0.4, 2.0, {});
    RngStream rng(83, 0);
    const auto truth = simulate(p.model, vec1(0.7), 10, p.sigma, rng);
    RngStream obs_rng(83, 1);
    p.data = generate_data(p.obs, truth, p.gamma, obs_rng);

    const auto exact = kalman_smoother_det(p);
    const double sd = std::sqrt(exact.cov(0, 0));
    Vecd grid(4001);
    for (Index i = 0; i < grid.size(); ++i)
      grid[i] = exact.mean[0] + sd * (-6.0 + 12.0 * double(i) / 4000.0);
    const auto density = grid_posterior_1d(p, grid);
    CHECK(trapezoid_integral(density.grid, density.values) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(grid_mean(density) == doctest::Approx(exact.mean[0]).epsilon(1e-6));
    CHECK(grid_variance(density) == doctest::Approx(exact.cov(0, 0)).epsilon(1e-6));
  }

  TEST_CASE("grid posterior survives potentials in the thousands") {
    SmoothingProblem<double> p = scalar_problem(0.9, std::nullopt, 1e-6, 0.0, 1.0, {});
    RngStream rng(84, 0);
    const auto truth = simulate(p.model, vec1(0.5), 5, p.sigma, rng);
    RngStream obs_rng(84, 1);
    p.data = generate_data(p.obs, truth, p.gamma, obs_rng);

    Vecd grid(2001);
    for (Index i = 0; i < grid.size(); ++i) grid[i] = 0.4 + 0.2 * double(i) / 2000.0;
    const auto density = grid_posterior_1d(p, grid);
    CHECK(all_finite(density.values));
    CHECK(trapezoid_integral(density.grid, density.values) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(grid_mean(density) == doctest::Approx(0.5).epsilon(1e-3));
  }

  TEST_CASE("deterministic-only and scalar-only guards") {
    CHECK_THROWS_AS((void)kalman_smoother_det(scalar_problem(0.5, 1.0, 1.0, 0.0, 1.0, {1.0})),
                    ValidationError);
    Vecd grid(3);
    grid << 0.1, 0.2, 0.3;
    CHECK_THROWS_AS((void)grid_posterior_1d(scalar_problem(0.5, 1.0, 1.0, 0.0, 1.0, {1.0}), grid),
                    ValidationError);
  }
}
