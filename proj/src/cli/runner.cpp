#include "runner.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dakit/diagnostics.hpp"
#include "dakit/smoothing.hpp"
#include "dakit/variational.hpp"

namespace dakit::cli {

namespace {

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// CSV writer: versioned schema comment, header row, then data rows.
// '.' decimal point, 17 significant digits, LF line endings.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& schema,
            const std::vector<std::string>& columns)
      : out_(path, std::ios::binary) {
    if (!out_) throw ValidationError("cannot open output file " + path.string());
    out_ << "# " << schema << "\n";
    for (std::size_t i = 0; i < columns.size(); ++i)
      out_ << (i ? "," : "") << columns[i];
    out_ << "\n";
    width_ = columns.size();
  }

  void row(const std::vector<double>& values) {
    if (values.size() != width_) throw ValidationError("csv row width mismatch");
    for (std::size_t i = 0; i < values.size(); ++i)
      out_ << (i ? "," : "") << fmt(values[i]);
    out_ << "\n";
  }

 private:
  std::ofstream out_;
  std::size_t width_ = 0;
};

void write_summary(const std::filesystem::path& path, const std::string& kind,
                   const std::vector<std::pair<std::string, double>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open output file " + path.string());
  out << "# dakit " << kind << " summary v1\n";
  out << "name,value\n";
  for (const auto& [name, value] : rows) out << name << "," << fmt(value) << "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open output file " + path.string());
  out << text;
}

GaussianState<double> build_prior(const ExperimentConfig& cfg) {
  const Index n = config_state_dim(cfg);
  return make_isotropic_gaussian(Vec<double>::Constant(n, cfg.prior_mean).eval(),
                                 cfg.prior_cov);
}

std::optional<Mat<double>> build_sigma(const ExperimentConfig& cfg) {
  if (cfg.sigma == 0) return std::nullopt;
  const Index n = config_state_dim(cfg);
  return (cfg.sigma * cfg.sigma * Mat<double>::Identity(n, n)).eval();
}

Mat<double> build_gamma(const ExperimentConfig& cfg, Index obs_dim) {
  return (cfg.gamma * cfg.gamma * Mat<double>::Identity(obs_dim, obs_dim)).eval();
}

// Initial truth for the non-filter kinds (run_filter draws its own when the
// config asks for a prior draw).
Vec<double> draw_truth_init(const ExperimentConfig& cfg) {
  const Index n = config_state_dim(cfg);
  RngStream rng(cfg.seed, stream::truth_init);
  switch (cfg.truth_init_kind) {
    case TruthInitKind::Value:
      return Vec<double>::Constant(n, cfg.truth_value);
    case TruthInitKind::Uniform01: {
      Vec<double> v(1);
      v[0] = rng.uniform01();
      return v;
    }
    case TruthInitKind::Prior:
      return sample_gaussian(build_prior(cfg), rng);
  }
  return Vec<double>::Zero(n);
}

// Truth path plus observations y_1..y_J for the smoothing-based kinds.
struct Scenario {
  Trajectory<double> truth;
  SmoothingProblem<double> problem;
};

Scenario make_scenario(const ExperimentConfig& cfg) {
  Scenario s;
  auto model = build_model(cfg);
  auto obs = build_observation(cfg);
  const Mat<double> gamma = build_gamma(cfg, obs.obs_dim());
  RngStream model_rng(cfg.seed, stream::model_noise);
  s.truth = simulate(model, draw_truth_init(cfg), cfg.steps, build_sigma(cfg), model_rng);
  RngStream obs_rng(cfg.seed, stream::observation_noise);
  auto data = generate_data(obs, s.truth, gamma, obs_rng);
  s.problem = SmoothingProblem<double>{std::move(model), std::move(obs), build_sigma(cfg),
                                       gamma, build_prior(cfg), std::move(data)};
  validate_problem(s.problem);
  return s;
}

Vec<double> make_grid(const ExperimentConfig& cfg) {
  std::vector<double> nodes;
  for (long i = 0;; ++i) {
    const double v = cfg.grid_min + static_cast<double>(i) * cfg.grid_step;
    if (v > cfg.grid_max + 1e-12 * std::abs(cfg.grid_max)) break;
    nodes.push_back(v);
  }
  Vec<double> grid(static_cast<Index>(nodes.size()));
  for (std::size_t i = 0; i < nodes.size(); ++i) grid[static_cast<Index>(i)] = nodes[i];
  return grid;
}

std::string plot_preamble(const ExperimentConfig& cfg) {
  std::ostringstream gp;
  gp << "# gnuplot script for experiment '" << cfg.name << "' (" << kind_name(cfg.kind)
     << ")\n";
  gp << "set datafile separator \",\"\n";
  gp << "set key outside\n";
  gp << "set grid\n";
  return gp.str();
}

// ---------------------------------------------------------------------------
// simulate

RunOutput run_simulate(const ExperimentConfig& cfg, RunOutput out) {
  auto model = build_model(cfg);
  RngStream model_rng(cfg.seed, stream::model_noise);
  SimulateDiagnostics diag;
  const auto truth =
      simulate(model, draw_truth_init(cfg), cfg.steps, build_sigma(cfg), model_rng, &diag);
  const Index n = state_dim(model);

  std::vector<std::string> cols = {"j"};
  for (Index c = 0; c < n; ++c) cols.push_back("v_" + std::to_string(c));
  CsvWriter csv(out.series_path, "dakit simulate series v1", cols);
  double max_abs = 0, sum0 = 0, sum0_sq = 0;
  for (std::size_t j = 0; j < truth.size(); ++j) {
    std::vector<double> row = {static_cast<double>(j)};
    for (Index c = 0; c < n; ++c) row.push_back(truth[j][c]);
    csv.row(row);
    max_abs = std::max(max_abs, truth[j].cwiseAbs().maxCoeff());
    sum0 += truth[j][0];
    sum0_sq += truth[j][0] * truth[j][0];
  }
  const double count = static_cast<double>(truth.size());
  const double mean0 = sum0 / count;

  out.summary = {{"steps", static_cast<double>(cfg.steps)},
                 {"dim", static_cast<double>(n)},
                 {"max_abs_state", max_abs},
                 {"mean_first", mean0},
                 {"var_first", sum0_sq / count - mean0 * mean0},
                 {"logistic_escape", diag.logistic_escape ? 1.0 : 0.0},
                 {"first_escape_step", static_cast<double>(diag.first_escape_step)}};

  std::ostringstream gp;
  gp << plot_preamble(cfg);
  gp << "set xlabel \"j\"\n";
  gp << "set ylabel \"state\"\n";
  gp << "plot \"" << out.series_path.filename().string()
     << "\" using 1:2 with lines title \"v_0\"\n";
  write_text(out.plot_path, gp.str());
  return out;
}

// ---------------------------------------------------------------------------
// grid_posterior

RunOutput run_grid_posterior(const ExperimentConfig& cfg, RunOutput out) {
  Scenario s = make_scenario(cfg);
  const auto posterior = grid_posterior_1d(s.problem, make_grid(cfg));

  CsvWriter csv(out.series_path, "dakit grid_posterior series v1", {"v", "posterior"});
  Index argmax = 0;
  for (Index i = 0; i < posterior.grid.size(); ++i) {
    csv.row({posterior.grid[i], posterior.values[i]});
    if (posterior.values[i] > posterior.values[argmax]) argmax = i;
  }

  out.summary = {{"nodes", static_cast<double>(posterior.grid.size())},
                 {"mass", trapezoid_integral(posterior.grid, posterior.values)},
                 {"mean", grid_mean(posterior)},
                 {"variance", grid_variance(posterior)},
                 {"argmax", posterior.grid[argmax]},
                 {"truth_init", s.truth.front()[0]}};

  std::ostringstream gp;
  gp << plot_preamble(cfg);
  gp << "set xlabel \"v_0\"\n";
  gp << "set ylabel \"density\"\n";
  gp << "plot \"" << out.series_path.filename().string()
     << "\" using 1:2 with lines title \"posterior\"\n";
  write_text(out.plot_path, gp.str());
  return out;
}

// ---------------------------------------------------------------------------
// mcmc

Vec<double> deterministic_path_from(const SmoothingProblem<double>& p, double m0) {
  Trajectory<double> path;
  Vec<double> v(1);
  v[0] = m0;
  path.push_back(v);
  for (Index j = 0; j < p.steps(); ++j) path.push_back(apply_map(p.model, path.back()));
  return flatten(path);
}

RunOutput run_mcmc(const ExperimentConfig& cfg, RunOutput out) {
  Scenario s = make_scenario(cfg);
  const bool path_sampler = cfg.sampler != SamplerKind::RandomWalk;

  SamplerConfig<double> sampler;
  sampler.kind = cfg.sampler;
  sampler.beta = cfg.beta;
  sampler.steps = cfg.samples;
  sampler.thin = cfg.thin;
  sampler.burn_in = cfg.burn_in;
  if (cfg.burn_in == -1 && cfg.mcmc_init == McmcInitKind::Truth) sampler.burn_in = 0;

  RngStream chain_rng(cfg.seed, stream::algorithm);
  Vec<double> init;
  switch (cfg.mcmc_init) {
    case McmcInitKind::Truth:
      init = path_sampler ? flatten(s.truth) : s.truth.front();
      break;
    case McmcInitKind::PriorDraw:
      init = path_sampler ? draw_prior_path(s.problem, chain_rng)
                          : sample_gaussian(s.problem.prior, chain_rng);
      break;
    case McmcInitKind::Mean:
      init = path_sampler ? deterministic_path_from(s.problem, cfg.prior_mean)
                          : s.problem.prior.mean;
      break;
  }
  const auto chain = run_chain(s.problem, sampler, init, chain_rng);

  out.summary = {{"acceptance_rate", chain.acceptance_rate},
                 {"accepted", static_cast<double>(chain.accepted)},
                 {"proposals", static_cast<double>(chain.proposals)},
                 {"rejected_nonfinite", static_cast<double>(chain.rejected_nonfinite)},
                 {"emitted", static_cast<double>(chain.samples.cols())},
                 {"burn_in_used", static_cast<double>(
                                      sampler.burn_in >= 0 ? sampler.burn_in
                                                           : sampler.steps / 10)},
                 {"running_mean_last", chain.running_mean_first.back()}};

  std::ostringstream gp;
  gp << plot_preamble(cfg);

  if (!path_sampler) {
    // Scalar chain: histogram against the exact grid posterior.
    const auto posterior = grid_posterior_1d(s.problem, make_grid(cfg));
    std::vector<double> draws(static_cast<std::size_t>(chain.samples.cols()));
    for (Index i = 0; i < chain.samples.cols(); ++i)
      draws[static_cast<std::size_t>(i)] = chain.samples(0, i);
    const auto hist = empirical_density(draws, posterior.grid);

    CsvWriter csv(out.series_path, "dakit mcmc series v1", {"v", "posterior", "histogram"});
    Index argmax_post = 0, argmax_hist = 0;
    for (Index i = 0; i < posterior.grid.size(); ++i) {
      csv.row({posterior.grid[i], posterior.values[i], hist.values[i]});
      if (posterior.values[i] > posterior.values[argmax_post]) argmax_post = i;
      if (hist.values[i] > hist.values[argmax_hist]) argmax_hist = i;
    }

    out.summary.push_back({"chain_mean", sample_mean(draws)});
    out.summary.push_back({"chain_sd", std::sqrt(sample_variance(draws))});
    out.summary.push_back({"posterior_mean", grid_mean(posterior)});
    out.summary.push_back({"posterior_sd", std::sqrt(grid_variance(posterior))});
    out.summary.push_back({"tv_hist_posterior", tv_distance_grid(hist, posterior)});
    out.summary.push_back({"argmax_posterior", posterior.grid[argmax_post]});
    out.summary.push_back({"argmax_hist", posterior.grid[argmax_hist]});

    gp << "set xlabel \"v_0\"\n";
    gp << "set ylabel \"density\"\n";
    gp << "plot \"" << out.series_path.filename().string()
       << "\" using 1:2 with lines title \"posterior\", \\\n     \"\" using 1:3 with boxes "
          "title \"chain histogram\"\n";
  } else {
    // Path sampler on a scalar state: per-position posterior mean and spread.
    const Index path_len = chain.samples.rows();
    CsvWriter csv(out.series_path, "dakit mcmc series v1", {"j", "truth", "mean", "sd"});
    double mean0 = 0, sd0 = 0;
    for (Index j = 0; j < path_len; ++j) {
      const double m = chain.samples.row(j).mean();
      const double sq = chain.samples.row(j).cwiseAbs2().mean();
      const double sd = std::sqrt(std::max(0.0, sq - m * m));
      csv.row({static_cast<double>(j), s.truth[static_cast<std::size_t>(j)][0], m, sd});
      if (j == 0) {
        mean0 = m;
        sd0 = sd;
      }
    }
    out.summary.push_back({"chain_mean", mean0});
    out.summary.push_back({"chain_sd", sd0});

    gp << "set xlabel \"j\"\n";
    gp << "set ylabel \"state\"\n";
    gp << "plot \"" << out.series_path.filename().string()
       << "\" using 1:2 with linespoints title \"truth\", \\\n     \"\" using 1:3 with "
          "linespoints title \"posterior mean\", \\\n     \"\" using 1:($3-2*$4):($3+2*$4) "
          "with filledcurves fs transparent solid 0.2 title \"2 sd band\"\n";
  }
  write_text(out.plot_path, gp.str());
  return out;
}

// ---------------------------------------------------------------------------
// variational

RunOutput run_variational(const ExperimentConfig& cfg, RunOutput out) {
  Scenario s = make_scenario(cfg);
  const Index n = s.problem.dim();
  const bool weak = cfg.var_mode == VariationalMode::Weak;
  const Index start_dim = weak ? n * (s.problem.steps() + 1) : n;

  RngStream rng(cfg.seed, stream::algorithm);
  std::vector<Vec<double>> starts;
  switch (cfg.start_kind) {
    case VariationalStartKind::List:
      for (double x : cfg.starts) {
        if (weak) {
          starts.push_back(deterministic_path_from(s.problem, x));
        } else {
          Vec<double> v(1);
          v[0] = x;
          starts.push_back(v);
        }
      }
      break;
    case VariationalStartKind::Random:
      for (long i = 0; i < cfg.random_starts; ++i)
        starts.push_back(rng.normal_vector<double>(start_dim));
      break;
    case VariationalStartKind::Truth:
      starts.push_back(weak ? flatten(s.truth) : s.truth.front());
      break;
  }

  OptimizerOptions<double> opt;
  opt.max_iterations = cfg.var_iterations;
  opt.restarts = static_cast<int>(cfg.var_restarts);
  const auto results = weak ? w4dvar(s.problem, starts, opt) : fourdvar(s.problem, starts, opt);

  std::vector<std::string> cols = {"rank", "value", "converged", "iterations"};
  for (Index c = 0; c < n; ++c) cols.push_back("start_" + std::to_string(c));
  for (Index c = 0; c < n; ++c) cols.push_back("min_" + std::to_string(c));
  CsvWriter csv(out.series_path, "dakit variational series v1", cols);

  long converged = 0, failed = 0;
  std::vector<double> distinct;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& res = results[i];
    std::vector<double> row = {static_cast<double>(i), res.value,
                               res.converged ? 1.0 : 0.0,
                               static_cast<double>(res.iterations)};
    for (Index c = 0; c < n; ++c) row.push_back(res.start[c]);
    for (Index c = 0; c < n; ++c) row.push_back(res.minimizer[c]);
    csv.row(row);
    if (res.converged) ++converged;
    if (!std::isfinite(res.value)) {
      ++failed;
      continue;
    }
    bool seen = false;
    for (double v : distinct)
      if (std::abs(v - res.value) <= 1e-6 * std::max(1.0, std::abs(v))) seen = true;
    if (!seen) distinct.push_back(res.value);
  }

  out.summary = {{"n_starts", static_cast<double>(results.size())},
                 {"best_value", results.front().value},
                 {"converged_count", static_cast<double>(converged)},
                 {"failed_count", static_cast<double>(failed)},
                 {"distinct_values", static_cast<double>(distinct.size())}};
  for (Index c = 0; c < n; ++c)
    out.summary.push_back({"best_min_" + std::to_string(c), results.front().minimizer[c]});

  std::ostringstream gp;
  gp << plot_preamble(cfg);
  gp << "set xlabel \"start rank\"\n";
  gp << "set ylabel \"objective\"\n";
  gp << "plot \"" << out.series_path.filename().string()
     << "\" using 1:2 with points pt 7 title \"local minimum value\"\n";
  write_text(out.plot_path, gp.str());
  return out;
}

// ---------------------------------------------------------------------------
// filter

RunOutput run_filter_experiment(const ExperimentConfig& cfg, RunOutput out) {
  const Index n = config_state_dim(cfg);
  TwinExperiment<double> experiment;
  experiment.model = build_model(cfg);
  experiment.obs = build_observation(cfg);
  experiment.sigma = build_sigma(cfg);
  experiment.gamma = build_gamma(cfg, experiment.obs.obs_dim());
  experiment.truth_prior = build_prior(cfg);
  experiment.steps = cfg.steps;
  experiment.seed = cfg.seed;
  if (cfg.truth_init_kind != TruthInitKind::Prior)
    experiment.truth_start = draw_truth_init(cfg);

  FilterConfig<double> filter;
  filter.kind = cfg.filter_kind;
  filter.ensemble_size = cfg.ensemble;
  filter.prediction_noise = cfg.prediction_noise;
  filter.sampled_gamma = cfg.sampled_gamma;

  RngStream init_rng(cfg.seed, stream::filter_init);
  switch (cfg.filter_init_kind) {
    case FilterInitKind::Prior:
      filter.init = build_prior(cfg);
      break;
    case FilterInitKind::Spread: {
      const double scale = cfg.init_spread * cfg.init_spread * cfg.prior_cov;
      GaussianState<double> wide = make_isotropic_gaussian(
          Vec<double>::Constant(n, cfg.prior_mean).eval(), scale);
      filter.init = GaussianState<double>{sample_gaussian(wide, init_rng), wide.cov};
      break;
    }
    case FilterInitKind::Uniform01: {
      Vec<double> m(1);
      m[0] = init_rng.uniform01();
      filter.init = make_isotropic_gaussian(m, cfg.prior_cov);
      break;
    }
  }
  if (cfg.filter_kind == FilterKind::ThreeDVar) {
    const double scale =
        cfg.chat_given ? cfg.chat : cfg.gamma * cfg.gamma / cfg.eta;
    filter.fixed_cov = scale * Mat<double>::Identity(n, n);
  }

  const auto run = run_filter(experiment, filter);

  std::vector<std::string> cols = {"j"};
  for (Index c = 0; c < n; ++c) cols.push_back("truth_" + std::to_string(c));
  for (Index c = 0; c < n; ++c) cols.push_back("mean_" + std::to_string(c));
  cols.push_back("trace_cov");
  cols.push_back("error");
  CsvWriter csv(out.series_path, "dakit filter series v1", cols);
  for (std::size_t j = 0; j < run.mean.size(); ++j) {
    std::vector<double> row = {static_cast<double>(j)};
    for (Index c = 0; c < n; ++c) row.push_back(run.truth[j][c]);
    for (Index c = 0; c < n; ++c) row.push_back(run.mean[j][c]);
    row.push_back(run.cov_trace[j]);
    row.push_back(run.error[j]);
    csv.row(row);
  }

  const auto err = error_series(run);
  const std::size_t steps_recorded = run.error.size();
  const std::size_t half = steps_recorded / 2;
  double first_half = 0, second_half = 0, second_half_sq = 0;
  for (std::size_t j = 0; j < steps_recorded; ++j) {
    if (j < half) {
      first_half += run.error[j];
    } else {
      second_half += run.error[j];
      second_half_sq += run.error[j] * run.error[j];
    }
  }
  if (half > 0) first_half /= static_cast<double>(half);
  const double tail = static_cast<double>(steps_recorded - half);
  second_half /= tail;
  second_half_sq /= tail;
  const auto tail_summary = window_summary(run.error);

  // Transient vs settled behaviour: the opening steps against the closing ones.
  const std::size_t head_count = std::min<std::size_t>(20, steps_recorded);
  const std::size_t last_count = std::min<std::size_t>(100, steps_recorded);
  double head_mean = 0, last_mean = 0;
  for (std::size_t j = 0; j < head_count; ++j) head_mean += run.error[j];
  head_mean /= static_cast<double>(head_count);
  for (std::size_t j = steps_recorded - last_count; j < steps_recorded; ++j)
    last_mean += run.error[j];
  last_mean /= static_cast<double>(last_count);

  out.summary = {
      {"steps_recorded", static_cast<double>(steps_recorded)},
      {"blew_up", run.blew_up ? 1.0 : 0.0},
      {"blow_up_step", static_cast<double>(run.blow_up_step)},
      {"initial_trace", run.cov_trace.front()},
      {"final_trace", run.cov_trace.back()},
      {"final_error", run.error.back()},
      {"err_mean_first_half", first_half},
      {"err_mean_second_half", second_half},
      {"err_mean_first20", head_mean},
      {"err_mean_last100", last_mean},
      {"mse_second_half", second_half_sq},
      {"err_sd_second_half", tail_summary.sd},
      {"excess_kurtosis_second_half", tail_summary.excess_kurtosis},
      {"running_mean_final", err.running_mean.back()},
  };

  std::ostringstream gp;
  gp << plot_preamble(cfg);
  gp << "set xlabel \"j\"\n";
  const std::string file = out.series_path.filename().string();
  gp << "set multiplot layout 2,1\n";
  gp << "set ylabel \"first component\"\n";
  gp << "plot \"" << file << "\" using 1:2 with lines title \"truth\", \\\n     \"\" using 1:"
     << 2 + n << " with lines title \"filter mean\"\n";
  gp << "set ylabel \"error\"\n";
  gp << "set logscale y\n";
  gp << "plot \"" << file << "\" using 1:" << 2 * n + 3
     << " with lines title \"|mean - truth|\"\n";
  gp << "unset multiplot\n";
  write_text(out.plot_path, gp.str());
  return out;
}

}  // namespace

double summary_value(const RunOutput& out, const std::string& name) {
  for (const auto& [key, value] : out.summary)
    if (key == name) return value;
  throw ValidationError("summary has no entry '" + name + "'");
}

RunOutput run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);

  RunOutput out;
  out.series_path = dir / (cfg.name + "_series.csv");
  out.summary_path = dir / (cfg.name + "_summary.csv");
  out.plot_path = dir / (cfg.name + ".gp");
  out.echo_path = dir / (cfg.name + "_config_echo.txt");

  // The echo is written before the run starts so a blown-up run still leaves
  // a reproducible record of what was attempted.
  write_text(out.echo_path, serialize_config(cfg));

  switch (cfg.kind) {
    case ExperimentKind::Simulate:
      out = run_simulate(cfg, std::move(out));
      break;
    case ExperimentKind::GridPosterior:
      out = run_grid_posterior(cfg, std::move(out));
      break;
    case ExperimentKind::Mcmc:
      out = run_mcmc(cfg, std::move(out));
      break;
    case ExperimentKind::Variational:
      out = run_variational(cfg, std::move(out));
      break;
    case ExperimentKind::Filter:
      out = run_filter_experiment(cfg, std::move(out));
      break;
  }
  write_summary(out.summary_path, kind_name(cfg.kind), out.summary);
  return out;
}

}  // namespace dakit::cli
