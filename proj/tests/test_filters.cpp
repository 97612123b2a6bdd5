#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <optional>
#include <vector>

#include "dakit/filters.hpp"

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

Matd random_spd(Index n, RngStream& rng, double ridge = 0.5) {
  Matd a(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) a(i, j) = rng.normal();
  return (a * a.transpose() + ridge * Matd::Identity(n, n)).eval();
}

const std::optional<Matd> kNoNoise{};

}  // namespace

TEST_SUITE("kalman") {
  TEST_CASE("prediction pushes moments through the linear map") {
    GaussianState<double> state(vec1(0.4), mat1(1.0));
    const auto predicted = kf_predict(mat1(2.0), std::optional<Matd>(mat1(3.0)), state);
    CHECK(predicted.mean[0] == doctest::Approx(0.8).epsilon(1e-14));
    CHECK(predicted.cov(0, 0) == doctest::Approx(7.0).epsilon(1e-14));

    const auto no_noise = kf_predict(mat1(2.0), kNoNoise, state);
    CHECK(no_noise.cov(0, 0) == doctest::Approx(4.0).epsilon(1e-14));

    RngStream rng(301, 0);
    double sum = 0, sum2 = 0;
    const long n = 100000;
    for (long i = 0; i < n; ++i) {
      const double x = 0.4 + rng.normal();
      const double y = 2.0 * x + std::sqrt(3.0) * rng.normal();
      sum += y;
      sum2 += y * y;
    }
    const double mc_var = sum2 / n - (sum / n) * (sum / n);
    CHECK(std::abs(sum / n - 0.8) < 3.0 * std::sqrt(7.0 / n));
    CHECK(std::abs(mc_var - 7.0) < 3.0 * 7.0 * std::sqrt(2.0 / n));
  }

  TEST_CASE("scalar update with unit pieces") {
    GaussianState<double> predicted(vec1(0.0), mat1(1.0));
    const auto obs = ObservationOperator<double>::identity(1);
    const auto up = kf_update(predicted, obs, mat1(1.0), vec1(2.0));
    CHECK(up.innovation[0] == doctest::Approx(2.0));
    CHECK(up.innovation_cov(0, 0) == doctest::Approx(2.0));
    CHECK(up.gain(0, 0) == doctest::Approx(0.5));
    CHECK(up.posterior.mean[0] == doctest::Approx(1.0));
    CHECK(up.posterior.cov(0, 0) == doctest::Approx(0.5));
  }

  TEST_CASE("gain form and precision form agree") {
    RngStream rng(302, 0);
    for (int rep = 0; rep < 100; ++rep) {
      const Index n = 1 + static_cast<Index>(rng.uniform_below(6));
      const Index m = 1 + static_cast<Index>(std::min<std::uint64_t>(rng.uniform_below(3),
                                                                     std::uint64_t(n - 1)));
      GaussianState<double> predicted(rng.normal_vector<double>(n), random_spd(n, rng));
      Matd h(m, n);
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < n; ++j) h(i, j) = rng.normal();
      const auto obs = ObservationOperator<double>::from_matrix(h);
      const Matd gamma = random_spd(m, rng);
      const Vecd y = rng.normal_vector<double>(m);

      const auto via_gain = kf_update(predicted, obs, gamma, y).posterior;
      const auto via_precision = kf_update_precision(predicted, obs, gamma, y);
      CHECK((via_gain.mean - via_precision.mean).norm() < 1e-10);
      CHECK((via_gain.cov - via_precision.cov).norm() < 1e-10);
    }
  }

  TEST_CASE("an uninformative observation leaves the prediction alone") {
    GaussianState<double> predicted(vec1(0.7), mat1(1.2));
    const auto obs = ObservationOperator<double>::identity(1);
    const auto nearly = kf_update_precision(predicted, obs, mat1(1e12), vec1(100.0));
    CHECK(nearly.mean[0] == doctest::Approx(0.7).epsilon(1e-6));
    CHECK(nearly.cov(0, 0) == doctest::Approx(1.2).epsilon(1e-6));

    ObservationOperator<double> zero_obs{Matd::Zero(1, 2)};
    GaussianState<double> p2(Vecd::Zero(2), Matd::Identity(2, 2));
    const auto up = kf_update(p2, zero_obs, mat1(0.5), vec1(3.0));
    CHECK((up.posterior.mean - p2.mean).norm() == 0.0);
    CHECK((up.posterior.cov - p2.cov).norm() < 1e-14);
  }

  TEST_CASE("the filter pass reproduces a manual recursion") {
    SmoothingProblem<double> p;
    p.model = LinearScalarMap<double>{0.9};
    p.obs = ObservationOperator<double>::identity(1);
    p.sigma = mat1(0.5);
    p.gamma = mat1(0.2);
    p.prior = GaussianState<double>(vec1(0.4), mat1(2.0));
    RngStream rng(303, 0);
    const auto truth = simulate(p.model, vec1(0.7), 20, p.sigma, rng);
    RngStream obs_rng(303, 1);
    p.data = generate_data(p.obs, truth, p.gamma, obs_rng);

    const auto pass = kalman_filter_pass(p);
    REQUIRE(pass.size() == 21);
    CHECK((pass[0].mean - p.prior.mean).norm() == 0.0);

    GaussianState<double> state = p.prior;
    for (std::size_t j = 0; j < 20; ++j) {
      const auto predicted = kf_predict(mat1(0.9), p.sigma, state);
      state = kf_update(predicted, p.obs, p.gamma, p.data[j]).posterior;
      CHECK(std::abs(pass[j + 1].mean[0] - state.mean[0]) < 1e-14);
      CHECK(std::abs(pass[j + 1].cov(0, 0) - state.cov(0, 0)) < 1e-14);
    }
  }
}

TEST_SUITE("threedvar") {
  TEST_CASE("the step blends the forecast with the innovation") {
    const ModelSpec<double> model = LinearScalarMap<double>{0.5};
    const auto obs = ObservationOperator<double>::identity(1);
    const Vecd next = threedvar_step(model, obs, mat1(0.25), vec1(2.0), vec1(3.0));
    // forecast 1, innovation 2, gain 0.25
    CHECK(next[0] == doctest::Approx(1.5).epsilon(1e-14));

    const Vecd frozen = threedvar_step(model, obs, mat1(0.0), vec1(2.0), vec1(3.0));
    CHECK(frozen[0] == doctest::Approx(1.0).epsilon(1e-14));
  }

  TEST_CASE("isotropic covariances give the scalar trust weight") {
    const auto obs = ObservationOperator<double>::identity(2);
    const double eta2 = 0.01;
    const Matd gain =
        threedvar_gain((Matd::Identity(2, 2) * 1.0).eval(), obs,
                       (Matd::Identity(2, 2) * eta2).eval());
    const double expected = 1.0 / (1.0 + eta2);
    CHECK((gain - expected * Matd::Identity(2, 2)).norm() < 1e-12);
  }

  TEST_CASE("a singular innovation covariance is rejected") {
    const auto obs = ObservationOperator<double>::identity(1);
    CHECK_THROWS_AS((void)threedvar_gain(mat1(0.0), obs, mat1(0.0)), SingularS);
  }

  TEST_CASE("a strong gain contracts the error of an unstable mode") {
    TwinExperiment<double> ex;
    ex.model = diagonal_map_2d(1.02, 0.5);
    ex.obs = ObservationOperator<double>::first_component(2);
    ex.gamma = mat1(1e-4);
    ex.truth_prior = GaussianState<double>(Vecd::Zero(2), Matd::Identity(2, 2));
    Vecd t0(2);
    t0 << 1.0, 1.0;
    ex.truth_start = t0;
    ex.steps = 800;
    ex.seed = 304;

    FilterConfig<double> cfg;
    cfg.kind = FilterKind::ThreeDVar;
    Vecd init(2);
    init << 3.0, -2.0;
    cfg.init = GaussianState<double>(init, Matd::Identity(2, 2));
    cfg.fixed_cov = (0.01 * Matd::Identity(2, 2)).eval();

    const auto run = run_filter(ex, cfg);
    REQUIRE_FALSE(run.blew_up);
    const double a = 0.6, c_eps = 0.05;
    for (std::size_t j = 10; j + 1 < run.error.size(); ++j)
      CHECK(run.error[j + 1] <= a * run.error[j] + c_eps);
    double tail_max = 0;
    for (std::size_t j = run.error.size() / 2; j < run.error.size(); ++j)
      tail_max = std::max(tail_max, run.error[j]);
    CHECK(tail_max <= c_eps / (1.0 - a));
  }

  TEST_CASE("a tuned gain tracks the chaotic logistic orbit") {
    TwinExperiment<double> ex;
    ex.model = LogisticMap<double>{4.0};
    ex.obs = ObservationOperator<double>::identity(1);
    ex.gamma = mat1(1e-2);
    ex.truth_prior = GaussianState<double>(vec1(0.5), mat1(0.01));
    ex.truth_start = vec1(0.3);
    ex.steps = 1000;
    ex.seed = 305;

    FilterConfig<double> cfg;
    cfg.kind = FilterKind::ThreeDVar;
    cfg.init = GaussianState<double>(vec1(0.5), mat1(0.01));
    cfg.fixed_cov = mat1(1e-2 / 0.04);  // observation-to-background ratio 0.2

    const auto run = run_filter(ex, cfg);
    REQUIRE_FALSE(run.blew_up);
    double mse = 0;
    std::size_t count = 0;
    for (std::size_t j = run.error.size() / 2; j < run.error.size(); ++j) {
      mse += run.error[j] * run.error[j];
      ++count;
    }
    mse /= double(count);
    CHECK(mse > 3e-3);
    CHECK(mse < 3e-2);
  }
}

TEST_SUITE("extended_kalman") {
  TEST_CASE("linearized prediction through the sin map") {
    const ModelSpec<double> model = SinMap<double>{2.5};
    GaussianState<double> state(vec1(0.3), mat1(0.04));
    const auto predicted = exkf_predict(model, std::optional<Matd>(mat1(0.25)), state);
    const double deriv = 2.5 * std::cos(0.3);
    CHECK(predicted.mean[0] == doctest::Approx(2.5 * std::sin(0.3)).epsilon(1e-14));
    CHECK(predicted.cov(0, 0) ==
          doctest::Approx(deriv * 0.04 * deriv + 0.25).epsilon(1e-12));
  }

  TEST_CASE("matches the exact filter on linear dynamics") {
    TwinExperiment<double> ex;
    ex.model = LinearScalarMap<double>{0.9};
    ex.obs = ObservationOperator<double>::identity(1);
    ex.sigma = mat1(0.5);
    ex.gamma = mat1(0.2);
    ex.truth_prior = GaussianState<double>(vec1(0.4), mat1(2.0));
    ex.steps = 50;
    ex.seed = 306;

    FilterConfig<double> kf_cfg;
    kf_cfg.kind = FilterKind::Kalman;
    kf_cfg.init = GaussianState<double>(vec1(0.0), mat1(1.0));
    FilterConfig<double> ex_cfg = kf_cfg;
    ex_cfg.kind = FilterKind::ExtendedKalman;

    const auto kf = run_filter(ex, kf_cfg);
    const auto exkf = run_filter(ex, ex_cfg);
    CHECK(kf.scenario_fingerprint == exkf.scenario_fingerprint);
    REQUIRE(kf.mean.size() == exkf.mean.size());
    for (std::size_t j = 0; j < kf.mean.size(); ++j) {
      CHECK((kf.mean[j] - exkf.mean[j]).norm() < 1e-12);
      CHECK(std::abs(kf.cov_trace[j] - exkf.cov_trace[j]) < 1e-12);
    }
  }

  TEST_CASE("an overflowing forecast throws") {
    const ModelSpec<double> model = LogisticMap<double>{4.0};
    GaussianState<double> state(vec1(1e200), mat1(1.0));
    CHECK_THROWS_AS((void)exkf_predict(model, kNoNoise, state), NonFiniteState);
  }
}

TEST_SUITE("ensembles") {
  TEST_CASE("drawn ensembles carry the source moments") {
    CHECK_THROWS_AS((void)[] {
      GaussianState<double> g(vec1(0.0), mat1(1.0));
      RngStream rng(307, 0);
      return draw_ensemble(g, 1, rng);
    }(), EmptySamples);

    GaussianState<double> g(vec1(0.4), mat1(2.25));
    RngStream rng(307, 0);
    const Matd members = draw_ensemble(g, 20000, rng);
    const Vecd mean = ensemble_mean(members);
    const Matd cov = ensemble_covariance(members);
    CHECK(std::abs(mean[0] - 0.4) < 3.0 * std::sqrt(2.25 / 20000.0));
    CHECK(std::abs(cov(0, 0) - 2.25) < 3.0 * 2.25 * std::sqrt(2.0 / 20000.0));
  }

  TEST_CASE("sample moments use the unbiased divisor") {
    Matd members(1, 3);
    members << 1.0, 2.0, 6.0;
    CHECK(ensemble_mean(members)[0] == doctest::Approx(3.0));
    // squared deviations 4 + 1 + 9 over N - 1 = 2
    CHECK(ensemble_covariance(members)(0, 0) == doctest::Approx(7.0));
    CHECK_THROWS_AS((void)ensemble_mean(Matd(1, 0)), EmptySamples);
    CHECK_THROWS_AS((void)ensemble_covariance(Matd(1, 1)), EmptySamples);
  }

  TEST_CASE("a vague observation leaves the forecast ensemble alone") {
    const ModelSpec<double> model = SinMap<double>{2.5};
    const auto obs = ObservationOperator<double>::identity(1);
    RngStream rng(308, 0);
    GaussianState<double> g(vec1(0.2), mat1(1.0));
    Matd members = draw_ensemble(g, 50, rng);
    Matd predicted;
    enkf_step(model, obs, std::optional<Matd>(mat1(0.09)), mat1(1e12), vec1(0.0), members,
              rng, {}, &predicted);
    CHECK(members.rows() == 1);
    CHECK(members.cols() == 50);
    CHECK((members - predicted).cwiseAbs().maxCoeff() < 1e-3);
  }

  TEST_CASE("a collapsed ensemble stays collapsed without noise") {
    const ModelSpec<double> model = SinMap<double>{2.5};
    const auto obs = ObservationOperator<double>::identity(1);
    RngStream rng(309, 0);
    Matd members = Matd::Constant(1, 10, 0.3);
    enkf_step(model, obs, kNoNoise, mat1(0.25), vec1(1.0), members, rng);
    const double forecast = 2.5 * std::sin(0.3);
    for (Index c = 0; c < members.cols(); ++c)
      CHECK(members(0, c) == doctest::Approx(forecast).epsilon(1e-15));
  }

  TEST_CASE("a large ensemble reproduces the exact one-step update") {
    const ModelSpec<double> model = LinearScalarMap<double>{0.8};
    const auto obs = ObservationOperator<double>::identity(1);
    const std::optional<Matd> sigma(mat1(0.09));
    const Matd gamma = mat1(0.04);
    const Vecd y = vec1(0.3);
    GaussianState<double> prior(vec1(0.4), mat1(0.25));

    const auto exact_pred = kf_predict(mat1(0.8), sigma, prior);
    const auto exact = kf_update(exact_pred, obs, gamma, y).posterior;

    RngStream rng(310, 0);
    Matd members = draw_ensemble(prior, 20000, rng);
    enkf_step(model, obs, sigma, gamma, y, members, rng);
    const Vecd mean = ensemble_mean(members);
    const Matd cov = ensemble_covariance(members);
    CHECK(std::abs(mean[0] - exact.mean[0]) < 0.02);
    CHECK(cov(0, 0) == doctest::Approx(exact.cov(0, 0)).epsilon(0.1));
  }

  TEST_CASE("the transform update hits the exact analysis covariance every step") {
    const ModelSpec<double> model = SinMap<double>{2.5};
    const auto obs = ObservationOperator<double>::identity(1);
    const std::optional<Matd> sigma(mat1(0.09));
    const Matd gamma = mat1(0.04);

    RngStream truth_rng(311, 0);
    const auto truth = simulate(model, vec1(0.2), 100, sigma, truth_rng);
    RngStream obs_rng(311, 1);
    const auto data = generate_data(obs, truth, gamma, obs_rng);

    RngStream rng(311, 3);
    Matd members = draw_ensemble(GaussianState<double>(vec1(0.0), mat1(1.0)), 15, rng);
    double worst = 0;
    for (std::size_t j = 0; j < data.size(); ++j) {
      Matd predicted;
      etkf_step(model, obs, sigma, gamma, data[j], members, rng, {}, &predicted);
      const Matd c_hat = ensemble_covariance(predicted);
      const Matd s = obs.h * c_hat * obs.h.transpose() + gamma;
      const Matd gain = c_hat * obs.h.transpose() * s.inverse();
      const Matd expected_cov =
          (Matd::Identity(1, 1) - gain * obs.h) * c_hat;
      const Matd actual_cov = ensemble_covariance(members);
      worst = std::max(worst, (actual_cov - expected_cov).norm());
      CHECK((actual_cov - expected_cov).norm() < 1e-10);

      const Vecd pred_mean = ensemble_mean(predicted);
      const Vecd expected_mean =
          pred_mean + gain * (data[j] - obs.observe(pred_mean));
      CHECK((ensemble_mean(members) - expected_mean).norm() < 1e-12);
    }
    CHECK(worst < 1e-10);
  }
}

TEST_SUITE("particles") {
  TEST_CASE("resampling a point mass returns the point mass") {
    WeightedSamples<double> ws;
    ws.points = {vec1(1.0), vec1(2.0), vec1(3.0)};
    ws.weights = Vecd::Zero(3);
    ws.weights[1] = 1.0;
    RngStream rng(312, 0);
    const auto out = resample_multinomial(ws, rng);
    REQUIRE(out.points.size() == 3);
    for (const auto& pt : out.points) CHECK(pt[0] == 2.0);
    for (double w : out.weights) CHECK(w == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("bootstrap weights follow the observation density") {
    const ModelSpec<double> model = LinearScalarMap<double>{1.0};
    const auto obs = ObservationOperator<double>::identity(1);
    Matd particles(1, 3);
    particles << -1.0, 0.0, 1.0;
    RngStream prop(313, 0), res(313, 1);
    const auto step =
        sirs_step(model, obs, kNoNoise, mat1(4.0), vec1(0.0), particles, prop, res);

    const double side = std::exp(-1.0 / 8.0);
    const double z = 1.0 + 2.0 * side;
    CHECK(step.max_weight == doctest::Approx(1.0 / z).epsilon(1e-12));
    CHECK(step.weighted_mean[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(step.weighted_cov(0, 0) == doctest::Approx(2.0 * side / z).epsilon(1e-12));
    for (Index c = 0; c < particles.cols(); ++c) {
      const double v = particles(0, c);
      CHECK((v == -1.0 || v == 0.0 || v == 1.0));
    }
  }

  TEST_CASE("a vague observation keeps the prior spread") {
    const ModelSpec<double> model = SinMap<double>{2.5};
    const auto obs = ObservationOperator<double>::identity(1);
    RngStream init(314, 0);
    Matd particles = draw_ensemble(GaussianState<double>(vec1(0.1), mat1(1.0)), 5000, init);
    RngStream prop(314, 2), res(314, 3);
    Matd predicted;
    const auto step = sirs_step(model, obs, std::optional<Matd>(mat1(0.25)), mat1(1e12),
                                vec1(0.0), particles, prop, res, &predicted);
    CHECK(step.max_weight < 1.5 / 5000.0);
    CHECK(std::abs(step.weighted_mean[0] - ensemble_mean(predicted)[0]) < 1e-6);
  }

  TEST_CASE("the optimal proposal is the exact conditional for linear gaussian steps") {
    const ModelSpec<double> model = LinearScalarMap<double>{0.8};
    const auto obs = ObservationOperator<double>::identity(1);
    const std::optional<Matd> sigma(mat1(1.0));
    const Matd gamma = mat1(1.0);
    const double v = 0.5, y = 1.7;
    const double forecast = 0.8 * v;
    const double m_star = 0.5 * (forecast + y);

    const Index n = 20000;
    Matd particles = Matd::Constant(1, n, v);
    RngStream prop(315, 0), res(315, 1);
    const auto step =
        sirs_optimal_step(model, obs, sigma, gamma, vec1(y), particles, prop, res);

    CHECK(step.max_weight == doctest::Approx(1.0 / double(n)).epsilon(1e-12));
    CHECK(step.weighted_mean[0] == doctest::Approx(m_star).epsilon(0.05));
    double sum = 0, sum2 = 0;
    for (Index c = 0; c < n; ++c) {
      sum += particles(0, c);
      sum2 += particles(0, c) * particles(0, c);
    }
    const double mean = sum / double(n);
    const double var = sum2 / double(n) - mean * mean;
    CHECK(std::abs(mean - m_star) < 3.0 * std::sqrt(0.5 / double(n)));
    CHECK(std::abs(var - 0.5) < 3.0 * 0.5 * std::sqrt(2.0 / double(n)));
  }

  TEST_CASE("without model noise the optimal step falls back to bootstrap") {
    const ModelSpec<double> model = SinMap<double>{2.5};
    const auto obs = ObservationOperator<double>::identity(1);
    RngStream init(316, 0);
    const Matd start = draw_ensemble(GaussianState<double>(vec1(0.0), mat1(1.0)), 64, init);

    Matd a = start, b = start;
    RngStream prop_a(316, 2), res_a(316, 3);
    RngStream prop_b(316, 2), res_b(316, 3);
    const auto boot = sirs_step(model, obs, kNoNoise, mat1(0.25), vec1(0.4), a, prop_a, res_a);
    const auto opt =
        sirs_optimal_step(model, obs, kNoNoise, mat1(0.25), vec1(0.4), b, prop_b, res_b);
    CHECK((a - b).norm() == 0.0);
    CHECK(boot.max_weight == opt.max_weight);
    CHECK((boot.weighted_mean - opt.weighted_mean).norm() == 0.0);
  }

  TEST_CASE("the optimal proposal resists weight collapse") {
    const ModelSpec<double> model = SinMap<double>{2.5};
    const auto obs = ObservationOperator<double>::identity(1);
    const std::optional<Matd> sigma(mat1(1.0));
    const Matd gamma = mat1(0.09);

    int optimal_wins = 0;
    RngStream scenario(317, 0);
    for (int rep = 0; rep < 100; ++rep) {
      Matd start(1, 100);
      for (Index c = 0; c < 100; ++c) start(0, c) = scenario.normal();
      const double truth_next = 2.5 * std::sin(start(0, 0)) + scenario.normal();
      const Vecd y = vec1(truth_next + 0.3 * scenario.normal());

      Matd a = start, b = start;
      RngStream prop_a(318 + unsigned(rep), 0), res_a(318 + unsigned(rep), 1);
      RngStream prop_b(318 + unsigned(rep), 2), res_b(318 + unsigned(rep), 3);
      const auto boot = sirs_step(model, obs, sigma, gamma, y, a, prop_a, res_a);
      const auto opt = sirs_optimal_step(model, obs, sigma, gamma, y, b, prop_b, res_b);
      if (opt.max_weight <= boot.max_weight) ++optimal_wins;
    }
    CHECK(optimal_wins >= 95);
  }
}

TEST_SUITE("synchronization") {
  TEST_CASE("observing every component copies the data") {
    const ModelSpec<double> model = SinMap<double>{2.5};
    const Vecd next = synchronization_step(model, {0}, vec1(0.7), vec1(0.42));
    CHECK(next[0] == 0.42);
  }

  TEST_CASE("unobserved components evolve under the model") {
    const ModelSpec<double> model = Lorenz63<double>{};
    Vecd m(3);
    m << 1.0, 2.0, 3.0;
    const Vecd forecast = apply_map(model, m);
    Vecd y(1);
    y << -5.0;
    const Vecd next = synchronization_step(model, {0}, m, y);
    CHECK(next[0] == -5.0);
    CHECK(next[1] == forecast[1]);
    CHECK(next[2] == forecast[2]);
  }

  TEST_CASE("projection detection") {
    const auto id3 = ObservationOperator<double>::identity(3);
    const auto comps = projection_components(id3);
    REQUIRE(comps.has_value());
    CHECK(comps->size() == 3);
    CHECK((*comps)[2] == 2);

    const auto first = ObservationOperator<double>::first_component(4);
    CHECK(projection_components(first)->at(0) == 0);

    Matd mix(1, 2);
    mix << 1.0, 1.0;
    CHECK_FALSE(projection_components(ObservationOperator<double>::from_matrix(mix)).has_value());
  }
}

TEST_SUITE("twin_experiments") {
  TEST_CASE("a perfect filter with perfect data never errs") {
    TwinExperiment<double> ex;
    ex.model = LinearScalarMap<double>{0.9};
    ex.obs = ObservationOperator<double>::identity(1);
    ex.gamma = mat1(1e-20);
    ex.truth_prior = GaussianState<double>(vec1(0.7), mat1(0.0));
    ex.truth_start = vec1(0.7);
    ex.steps = 100;
    ex.seed = 320;

    FilterConfig<double> cfg;
    cfg.kind = FilterKind::Kalman;
    cfg.init = GaussianState<double>(vec1(0.7), mat1(0.0));
    const auto run = run_filter(ex, cfg);
    REQUIRE_FALSE(run.blew_up);
    double worst = 0;
    for (double e : run.error) worst = std::max(worst, e);
    CHECK(worst < 1e-10);
  }

  TEST_CASE("the noise-free covariance recursion hits its algebraic fixed point") {
    TwinExperiment<double> ex;
    ex.model = LinearScalarMap<double>{2.0};
    ex.obs = ObservationOperator<double>::identity(1);
    ex.gamma = mat1(1.0);
    ex.truth_prior = GaussianState<double>(vec1(0.0), mat1(0.0));
    ex.truth_start = vec1(0.0);
    ex.steps = 200;
    ex.seed = 321;

    FilterConfig<double> cfg;
    cfg.kind = FilterKind::Kalman;
    cfg.init = GaussianState<double>(vec1(0.0), mat1(1.0));
    const auto run = run_filter(ex, cfg);
    REQUIRE_FALSE(run.blew_up);
    CHECK(std::abs(run.cov_trace.back() - 0.75) < 1e-10);
  }

  TEST_CASE("a neutrally stable noise-free filter accumulates information linearly") {
    TwinExperiment<double> ex;
    ex.model = LinearScalarMap<double>{1.0};
    ex.obs = ObservationOperator<double>::identity(1);
    ex.gamma = mat1(0.25);
    ex.truth_prior = GaussianState<double>(vec1(0.0), mat1(0.0));
    ex.truth_start = vec1(0.0);
    ex.steps = 100;
    ex.seed = 322;

    FilterConfig<double> cfg;
    cfg.kind = FilterKind::Kalman;
    cfg.init = GaussianState<double>(vec1(0.0), mat1(2.0));
    const auto run = run_filter(ex, cfg);
    for (std::size_t j = 0; j < run.cov_trace.size(); ++j) {
      const double expected = 1.0 / (0.5 + double(j) / 0.25);
      CHECK(std::abs(run.cov_trace[j] - expected) < 1e-12);
    }
  }

  TEST_CASE("divergence is recorded rather than fatal") {
    TwinExperiment<double> ex;
    ex.model = LogisticMap<double>{4.0};
    ex.obs = ObservationOperator<double>::identity(1);
    ex.gamma = mat1(1e12);  // data too vague to pull the forecast back
    ex.truth_prior = GaussianState<double>(vec1(0.3), mat1(0.0));
    ex.truth_start = vec1(0.3);
    ex.steps = 50;
    ex.seed = 323;

    FilterConfig<double> cfg;
    cfg.kind = FilterKind::ExtendedKalman;
    cfg.init = GaussianState<double>(vec1(5.0), mat1(1.0));
    const auto run = run_filter(ex, cfg);
    CHECK(run.blew_up);
    CHECK(run.blow_up_step >= 1);
    CHECK(run.mean.size() == static_cast<std::size_t>(run.blow_up_step));
    CHECK(run.error.size() == run.mean.size());
  }

  TEST_CASE("every filter on one seed sees one scenario") {
    TwinExperiment<double> ex;
    ex.model = SinMap<double>{2.5};
    ex.obs = ObservationOperator<double>::identity(1);
    ex.sigma = mat1(0.09);
    ex.gamma = mat1(0.04);
    ex.truth_prior = GaussianState<double>(vec1(0.0), mat1(1.0));
    ex.steps = 30;
    ex.seed = 324;

    FilterConfig<double> a;
    a.kind = FilterKind::ExtendedKalman;
    a.init = GaussianState<double>(vec1(0.0), mat1(1.0));
    FilterConfig<double> b = a;
    b.kind = FilterKind::EnsembleKalman;
    b.ensemble_size = 10;

    const auto run_a = run_filter(ex, a);
    const auto run_b = run_filter(ex, b);
    CHECK(run_a.scenario_fingerprint == run_b.scenario_fingerprint);
    for (std::size_t j = 0; j < run_a.truth.size(); ++j)
      CHECK((run_a.truth[j] - run_b.truth[j]).norm() == 0.0);

    TwinExperiment<double> other = ex;
    other.seed = 325;
    CHECK(run_filter(other, a).scenario_fingerprint != run_a.scenario_fingerprint);
  }

  TEST_CASE("recorded forecast ensembles have one block per step") {
    TwinExperiment<double> ex;
    ex.model = SinMap<double>{2.5};
    ex.obs = ObservationOperator<double>::identity(1);
    ex.sigma = mat1(0.09);
    ex.gamma = mat1(0.04);
    ex.truth_prior = GaussianState<double>(vec1(0.0), mat1(1.0));
    ex.steps = 12;
    ex.seed = 326;

    FilterConfig<double> cfg;
    cfg.kind = FilterKind::EnsembleKalman;
    cfg.init = GaussianState<double>(vec1(0.0), mat1(1.0));
    cfg.ensemble_size = 7;
    cfg.record_ensembles = true;
    const auto run = run_filter(ex, cfg);
    REQUIRE(run.predicted_ensembles.size() == 12);
    for (const auto& block : run.predicted_ensembles) {
      CHECK(block.rows() == 1);
      CHECK(block.cols() == 7);
    }

    cfg.kind = FilterKind::Kalman;
    CHECK_THROWS_AS((void)run_filter(ex, cfg), NonEnsembleFilter);
  }

  TEST_CASE("synchronization locks onto a fully observed orbit") {
    TwinExperiment<double> ex;
    ex.model = Lorenz63<double>{};
    ex.obs = ObservationOperator<double>::identity(3);
    ex.gamma = (1e-20 * Matd::Identity(3, 3)).eval();
    Vecd t0(3);
    t0 << 1.0, 2.0, 3.0;
    ex.truth_prior = GaussianState<double>(t0, Matd::Zero(3, 3));
    ex.truth_start = t0;
    ex.steps = 20;
    ex.seed = 327;

    FilterConfig<double> cfg;
    cfg.kind = FilterKind::Synchronization;
    Vecd init(3);
    init << -4.0, 7.0, 20.0;
    cfg.init = GaussianState<double>(init, Matd::Identity(3, 3));
    const auto run = run_filter(ex, cfg);
    CHECK(run.error[0] > 1.0);
    CHECK(run.error[1] < 1e-8);
    CHECK(run.error.back() < 1e-8);
    CHECK(std::isnan(run.cov_trace.back()));
  }

  TEST_CASE("configuration mistakes are rejected up front") {
    TwinExperiment<double> ex;
    ex.model = SinMap<double>{2.5};
    ex.obs = ObservationOperator<double>::identity(1);
    ex.sigma = mat1(0.09);
    ex.gamma = mat1(0.04);
    ex.truth_prior = GaussianState<double>(vec1(0.0), mat1(1.0));
    ex.steps = 5;
    ex.seed = 328;

    FilterConfig<double> cfg;
    cfg.kind = FilterKind::Kalman;
    cfg.init = GaussianState<double>(vec1(0.0), mat1(1.0));
    CHECK_THROWS_AS((void)run_filter(ex, cfg), ValidationError);  // nonlinear dynamics

    cfg.kind = FilterKind::ExtendedKalman;
    TwinExperiment<double> bad = ex;
    bad.steps = 0;
    CHECK_THROWS_AS((void)run_filter(bad, cfg), ValidationError);

    bad = ex;
    bad.obs = ObservationOperator<double>::identity(2);
    CHECK_THROWS_AS((void)run_filter(bad, cfg), ValidationError);

    bad = ex;
    bad.gamma = Matd::Identity(2, 2);
    CHECK_THROWS_AS((void)run_filter(bad, cfg), ValidationError);

    FilterConfig<double> bad_cfg = cfg;
    bad_cfg.init = GaussianState<double>(Vecd::Zero(2), Matd::Identity(2, 2));
    CHECK_THROWS_AS((void)run_filter(ex, bad_cfg), ValidationError);

    bad = ex;
    bad.obs = ObservationOperator<double>::from_matrix((Matd(1, 1) << 2.0).finished());
    FilterConfig<double> sync_cfg;
    sync_cfg.kind = FilterKind::Synchronization;
    sync_cfg.init = GaussianState<double>(vec1(0.0), mat1(1.0));
    CHECK_THROWS_AS((void)run_filter(bad, sync_cfg), ValidationError);
  }

  TEST_CASE("particle filters report a covariance trace") {
    TwinExperiment<double> ex;
    ex.model = SinMap<double>{2.5};
    ex.obs = ObservationOperator<double>::identity(1);
    ex.sigma = mat1(0.09);
    ex.gamma = mat1(0.04);
    ex.truth_prior = GaussianState<double>(vec1(0.0), mat1(1.0));
    ex.steps = 200;
    ex.seed = 329;

    FilterConfig<double> cfg;
    cfg.kind = FilterKind::Sirs;
    cfg.init = GaussianState<double>(vec1(0.0), mat1(1.0));
    cfg.ensemble_size = 200;
    const auto run = run_filter(ex, cfg);
    REQUIRE_FALSE(run.blew_up);
    for (std::size_t j = 1; j < run.cov_trace.size(); ++j) {
      CHECK(std::isfinite(run.cov_trace[j]));
      CHECK(run.cov_trace[j] >= 0.0);
    }
    double tail_err = 0;
    for (std::size_t j = run.error.size() / 2; j < run.error.size(); ++j)
      tail_err = std::max(tail_err, run.error[j]);
    CHECK(tail_err < 2.0);
  }
}
