#include "presets.hpp"

#include <cmath>
#include <sstream>

namespace dakit::cli {

namespace {

PresetCheck in_range(const std::string& key, double lo, double hi) {
  return {key + " in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]",
          [key, lo, hi](const RunOutput& out) {
            const double v = summary_value(out, key);
            return std::isfinite(v) && v >= lo && v <= hi;
          }};
}

PresetCheck below(const std::string& key, double hi) {
  return {key + " < " + std::to_string(hi), [key, hi](const RunOutput& out) {
            const double v = summary_value(out, key);
            return std::isfinite(v) && v < hi;
          }};
}

PresetCheck is_zero(const std::string& key) {
  return {key + " == 0",
          [key](const RunOutput& out) { return summary_value(out, key) == 0.0; }};
}

PresetCheck decreasing(const std::string& early, const std::string& late) {
  return {late + " < " + early, [early, late](const RunOutput& out) {
            return summary_value(out, late) < summary_value(out, early);
          }};
}

PresetCheck at_least(const std::string& key, double lo) {
  return {key + " >= " + std::to_string(lo), [key, lo](const RunOutput& out) {
            return summary_value(out, key) >= lo;
          }};
}

std::vector<Preset> make_presets() {
  std::vector<Preset> presets;

  presets.push_back(
      {"p1_sin_sim", "noisy sin-map trajectory",
       "experiment.name = p1_sin_sim\n"
       "experiment.kind = simulate\n"
       "experiment.seed = 101\n"
       "experiment.steps = 10000\n"
       "model.kind = sin\n"
       "model.alpha = 2.5\n"
       "noise.sigma = 0.25\n"
       "prior.mean = 0\n"
       "prior.cov = 1\n"
       "truth.init = prior\n",
       {below("max_abs_state", 10.0), is_zero("logistic_escape")}});

  presets.push_back(
      {"p2_posterior_logistic", "grid posterior for the logistic map, r = 2",
       "experiment.name = p2_posterior_logistic\n"
       "experiment.kind = grid_posterior\n"
       "experiment.seed = 102\n"
       "experiment.steps = 1000\n"
       "model.kind = logistic\n"
       "model.r = 2\n"
       "obs.kind = identity\n"
       "noise.sigma = 0\n"
       "noise.gamma = 0.1\n"
       "prior.mean = 0.4\n"
       "prior.cov = 0.01\n"
       "truth.init = 0.1\n"
       "grid.min = 0.01\n"
       "grid.max = 0.99\n"
       "grid.step = 0.0005\n",
       {in_range("mass", 1.0 - 1e-8, 1.0 + 1e-8), in_range("mean", 0.0, 1.0)}});

  presets.push_back(
      {"p3_rwm_logistic", "random-walk chain vs the exact grid posterior, r = 4",
       "experiment.name = p3_rwm_logistic\n"
       "experiment.kind = mcmc\n"
       "experiment.seed = 103\n"
       "experiment.steps = 5\n"
       "model.kind = logistic\n"
       "model.r = 4\n"
       "obs.kind = identity\n"
       "noise.sigma = 0\n"
       "noise.gamma = 0.2\n"
       "prior.mean = 0.5\n"
       "prior.cov = 0.01\n"
       "truth.init = 0.3\n"
       "grid.min = 0.01\n"
       "grid.max = 0.99\n"
       "grid.step = 0.0005\n"
       "mcmc.sampler = rwm\n"
       "mcmc.beta = 4\n"
       "mcmc.samples = 100000\n"
       "mcmc.burn_in = -1\n"
       "mcmc.thin = 1\n"
       "mcmc.init = truth\n",
       {in_range("acceptance_rate", 0.02, 0.9), below("tv_hist_posterior", 0.15)}});

  const char* sin_mcmc_common =
      "experiment.steps = 10\n"
      "model.kind = sin\n"
      "model.alpha = 2.5\n"
      "obs.kind = identity\n"
      "noise.sigma = 1\n"
      "noise.gamma = 1\n"
      "prior.mean = 0\n"
      "prior.cov = 1\n"
      "truth.init = prior\n"
      "mcmc.samples = 100000\n"
      "mcmc.burn_in = -1\n"
      "mcmc.thin = 1\n"
      "mcmc.init = truth\n";

  presets.push_back({"p4_ids_sin", "independence dynamics sampler on the noisy sin map",
                     std::string("experiment.name = p4_ids_sin\n"
                                 "experiment.kind = mcmc\n"
                                 "experiment.seed = 104\n") +
                         sin_mcmc_common +
                         "mcmc.sampler = ids\n"
                         "mcmc.beta = 1\n",
                     {in_range("acceptance_rate", 1e-3, 0.9)}});

  presets.push_back({"p5_pcn_sin", "preconditioned Crank-Nicolson sampler on the noisy sin map",
                     std::string("experiment.name = p5_pcn_sin\n"
                                 "experiment.kind = mcmc\n"
                                 "experiment.seed = 105\n") +
                         sin_mcmc_common +
                         "mcmc.sampler = pcn\n"
                         "mcmc.beta = 0.2\n",
                     {in_range("acceptance_rate", 0.1, 0.9)}});

  presets.push_back({"p6_pcnd_sin", "Crank-Nicolson dynamics sampler on the noisy sin map",
                     std::string("experiment.name = p6_pcnd_sin\n"
                                 "experiment.kind = mcmc\n"
                                 "experiment.seed = 106\n") +
                         sin_mcmc_common +
                         "mcmc.sampler = pcn_dynamics\n"
                         "mcmc.beta = 0.2\n",
                     {in_range("acceptance_rate", 0.1, 0.9)}});

  presets.push_back(
      {"p7_w4dvar_sin", "weak-constraint minimization, multiple local minimizers",
       "experiment.name = p7_w4dvar_sin\n"
       "experiment.kind = variational\n"
       "experiment.seed = 107\n"
       "experiment.steps = 5\n"
       "model.kind = sin\n"
       "model.alpha = 2.5\n"
       "obs.kind = identity\n"
       "noise.sigma = 0.1\n"
       "noise.gamma = 0.1\n"
       "prior.mean = 0\n"
       "prior.cov = 1\n"
       "truth.init = prior\n"
       "variational.mode = weak\n"
       "variational.start_kind = random\n"
       "variational.random_starts = 20\n"
       "variational.iterations = 10000\n"
       "variational.restarts = 3\n",
       {at_least("distinct_values", 2.0), is_zero("failed_count"),
        at_least("converged_count", 1.0)}});

  presets.push_back(
      {"p8_kf_linear2d", "Kalman filter on a rotating plane, first component observed",
       "experiment.name = p8_kf_linear2d\n"
       "experiment.kind = filter\n"
       "experiment.seed = 308\n"
       "experiment.steps = 1000\n"
       "model.kind = linear_2d\n"
       "model.a11 = 0\n"
       "model.a12 = 1\n"
       "model.a21 = -1\n"
       "model.a22 = 0\n"
       "obs.kind = first_component\n"
       "noise.sigma = 1\n"
       "noise.gamma = 1\n"
       "prior.mean = 0\n"
       "prior.cov = 1\n"
       "truth.init = prior\n"
       "filter.kind = kf\n"
       "filter.init = spread\n"
       "filter.init_spread = 10\n",
       {is_zero("blew_up"), decreasing("initial_trace", "final_trace"),
        decreasing("err_mean_first20", "err_mean_last100")}});

  presets.push_back(
      {"p9_3dvar_logistic", "3DVAR tracking the deterministic logistic map, r = 4",
       "experiment.name = p9_3dvar_logistic\n"
       "experiment.kind = filter\n"
       "experiment.seed = 109\n"
       "experiment.steps = 10000\n"
       "model.kind = logistic\n"
       "model.r = 4\n"
       "obs.kind = identity\n"
       "noise.sigma = 0\n"
       "noise.gamma = 0.1\n"
       "prior.mean = 0.5\n"
       "prior.cov = 0.01\n"
       "truth.init = uniform01\n"
       "filter.kind = 3dvar\n"
       "filter.eta = 0.2\n"
       "filter.init = uniform01\n",
       {is_zero("blew_up"), in_range("mse_second_half", 3e-3, 3e-2)}});

  const char* sin_filter_common =
      "experiment.steps = 10000\n"
      "model.kind = sin\n"
      "model.alpha = 2.5\n"
      "obs.kind = identity\n"
      "noise.sigma = 0.3\n"
      "noise.gamma = 1\n"
      "prior.mean = 0\n"
      "prior.cov = 1\n"
      "truth.init = prior\n"
      "filter.init = spread\n"
      "filter.init_spread = 10\n";

  auto sin_filter = [&](const std::string& name, std::uint64_t seed,
                        const std::string& filter_block, const std::string& description) {
    return Preset{name, description,
                  "experiment.name = " + name +
                      "\n"
                      "experiment.kind = filter\n"
                      "experiment.seed = " +
                      std::to_string(seed) + "\n" + sin_filter_common + filter_block,
                  {is_zero("blew_up"), below("err_mean_second_half", 1.0)}};
  };

  presets.push_back(sin_filter("p10_3dvar_sin", 110,
                               "filter.kind = 3dvar\n"
                               "filter.eta = 0.2\n",
                               "3DVAR with a fixed background covariance on the noisy sin map"));
  presets.push_back(sin_filter("p11_exkf_sin", 111, "filter.kind = exkf\n",
                               "extended Kalman filter on the noisy sin map"));
  presets.push_back(sin_filter("p12_enkf_sin", 112,
                               "filter.kind = enkf\n"
                               "filter.ensemble = 100\n"
                               "filter.prediction_noise = true\n"
                               "filter.sampled_gamma = false\n",
                               "ensemble Kalman filter with perturbed observations"));
  presets.push_back(sin_filter("p13_etkf_sin", 113,
                               "filter.kind = etkf\n"
                               "filter.ensemble = 100\n"
                               "filter.prediction_noise = true\n"
                               "filter.sampled_gamma = false\n",
                               "ensemble transform Kalman filter, square-root update"));
  presets.push_back(sin_filter("p14_sirs_sin", 114,
                               "filter.kind = sirs\n"
                               "filter.ensemble = 100\n",
                               "bootstrap particle filter with multinomial resampling"));
  presets.push_back(sin_filter("p15_sirsop_sin", 115,
                               "filter.kind = sirs_op\n"
                               "filter.ensemble = 100\n",
                               "particle filter with the optimal Gaussian proposal"));

  presets.push_back({"p16_lorenz63_sim", "chaotic orbit of the shifted three-mode system",
                     "experiment.name = p16_lorenz63_sim\n"
                     "experiment.kind = simulate\n"
                     "experiment.seed = 116\n"
                     "experiment.steps = 10000\n"
                     "model.kind = lorenz63\n"
                     "model.a = 10\n"
                     "model.b = 2.6666666666666665\n"
                     "model.rho = 28\n"
                     "model.tau = 0.01\n"
                     "model.substeps = 20\n"
                     "noise.sigma = 0\n"
                     "prior.mean = 0\n"
                     "prior.cov = 1\n"
                     "truth.init = prior\n",
                     {below("max_abs_state", 100.0)}});

  presets.push_back({"p17_lorenz96_sim", "chaotic orbit of the cyclic forty-mode system",
                     "experiment.name = p17_lorenz96_sim\n"
                     "experiment.kind = simulate\n"
                     "experiment.seed = 117\n"
                     "experiment.steps = 10000\n"
                     "model.kind = lorenz96\n"
                     "model.k = 40\n"
                     "model.f = 8\n"
                     "model.tau = 0.01\n"
                     "model.substeps = 20\n"
                     "noise.sigma = 0\n"
                     "prior.mean = 8\n"
                     "prior.cov = 1\n"
                     "truth.init = prior\n",
                     {below("max_abs_state", 50.0)}});

  return presets;
}

}  // namespace

const std::vector<Preset>& all_presets() {
  static const std::vector<Preset> presets = make_presets();
  return presets;
}

const Preset* find_preset(const std::string& name) {
  for (const auto& p : all_presets())
    if (p.name == name) return &p;
  return nullptr;
}

std::string apply_overrides(const std::string& config,
                            const std::vector<std::string>& overrides) {
  auto trim = [](const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };

  std::vector<std::pair<std::string, std::string>> replacements;
  for (const auto& item : overrides) {
    auto eq = item.find('=');
    if (eq == std::string::npos)
      throw ParseError("override '" + item + "': expected section.key=value");
    replacements.emplace_back(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
  }

  std::ostringstream out;
  std::istringstream in(config);
  std::string line;
  std::vector<bool> used(replacements.size(), false);
  while (std::getline(in, line)) {
    std::string stripped = line;
    auto hash = stripped.find('#');
    if (hash != std::string::npos) stripped = stripped.substr(0, hash);
    auto eq = stripped.find('=');
    bool replaced = false;
    if (eq != std::string::npos) {
      const std::string key = trim(stripped.substr(0, eq));
      for (std::size_t i = 0; i < replacements.size(); ++i) {
        if (replacements[i].first == key) {
          out << key << " = " << replacements[i].second << "\n";
          used[i] = true;
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out << line << "\n";
  }
  for (std::size_t i = 0; i < replacements.size(); ++i)
    if (!used[i]) out << replacements[i].first << " = " << replacements[i].second << "\n";
  return out.str();
}

}  // namespace dakit::cli
