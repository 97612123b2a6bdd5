#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace dakit::cli {

namespace {

std::string trim(const std::string& s) {
  auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

struct RawEntry {
  std::string value;
  int line = 0;
};

using RawConfig = std::map<std::string, RawEntry>;

// Everything the grammar accepts; anything else is a ParseError.
const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "experiment.name", "experiment.kind", "experiment.seed", "experiment.steps",
      "model.kind", "model.lambda", "model.a11", "model.a12", "model.a21",
      "model.a22", "model.alpha", "model.r", "model.a", "model.b", "model.rho",
      "model.k", "model.f", "model.tau", "model.substeps",
      "obs.kind", "obs.components",
      "noise.sigma", "noise.gamma",
      "prior.mean", "prior.cov",
      "truth.init",
      "grid.min", "grid.max", "grid.step",
      "mcmc.sampler", "mcmc.beta", "mcmc.samples", "mcmc.burn_in", "mcmc.thin",
      "mcmc.init",
      "variational.mode", "variational.start_kind", "variational.starts",
      "variational.random_starts", "variational.iterations", "variational.restarts",
      "filter.kind", "filter.ensemble", "filter.eta", "filter.chat",
      "filter.init", "filter.init_spread", "filter.prediction_noise",
      "filter.sampled_gamma",
      "output.dir"};
  return keys;
}

RawConfig tokenize(const std::string& text) {
  RawConfig raw;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("line " + std::to_string(line_no) + ": expected 'section.key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    auto dot = key.find('.');
    if (dot == std::string::npos || key.find('.', dot + 1) != std::string::npos)
      throw ParseError("line " + std::to_string(line_no) + ": key '" + key +
                       "' must have exactly one dot");
    if (!known_keys().count(key))
      throw ParseError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (value.empty())
      throw ParseError("line " + std::to_string(line_no) + ": empty value for '" + key + "'");
    if (raw.count(key))
      throw ParseError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    raw[key] = RawEntry{value, line_no};
  }
  return raw;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& detail) {
  throw ValidationError(key + ": " + detail);
}

double to_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(value, &used);
  } catch (const std::exception&) {
    bad_value(key, "expected a number, got '" + value + "'");
  }
  if (used != value.size()) bad_value(key, "trailing characters in '" + value + "'");
  return x;
}

long to_long(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long x = 0;
  try {
    x = std::stol(value, &used);
  } catch (const std::exception&) {
    bad_value(key, "expected an integer, got '" + value + "'");
  }
  if (used != value.size()) bad_value(key, "trailing characters in '" + value + "'");
  return x;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(value, &used);
  } catch (const std::exception&) {
    bad_value(key, "expected a non-negative integer, got '" + value + "'");
  }
  if (used != value.size() || value[0] == '-')
    bad_value(key, "expected a non-negative integer, got '" + value + "'");
  return static_cast<std::uint64_t>(x);
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  bad_value(key, "expected true or false, got '" + value + "'");
}

std::vector<double> to_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::istringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) bad_value(key, "empty list element");
    out.push_back(to_double(key, item));
  }
  if (out.empty()) bad_value(key, "expected a comma-separated list");
  return out;
}

std::vector<long> to_long_list(const std::string& key, const std::string& value) {
  std::vector<long> out;
  for (double x : to_double_list(key, value)) {
    if (x != static_cast<double>(static_cast<long>(x)))
      bad_value(key, "expected integers");
    out.push_back(static_cast<long>(x));
  }
  return out;
}

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

ExperimentKind parse_kind(const std::string& value) {
  if (value == "simulate") return ExperimentKind::Simulate;
  if (value == "grid_posterior") return ExperimentKind::GridPosterior;
  if (value == "mcmc") return ExperimentKind::Mcmc;
  if (value == "variational") return ExperimentKind::Variational;
  if (value == "filter") return ExperimentKind::Filter;
  bad_value("experiment.kind",
            "expected simulate|grid_posterior|mcmc|variational|filter, got '" + value + "'");
}

ModelKind parse_model_kind(const std::string& value) {
  if (value == "linear_scalar") return ModelKind::LinearScalar;
  if (value == "linear_2d") return ModelKind::Linear2D;
  if (value == "sin") return ModelKind::Sin;
  if (value == "logistic") return ModelKind::Logistic;
  if (value == "lorenz63") return ModelKind::Lorenz63;
  if (value == "lorenz96") return ModelKind::Lorenz96;
  bad_value("model.kind",
            "expected linear_scalar|linear_2d|sin|logistic|lorenz63|lorenz96, got '" +
                value + "'");
}

ObsKind parse_obs_kind(const std::string& value) {
  if (value == "identity") return ObsKind::Identity;
  if (value == "first_component") return ObsKind::FirstComponent;
  if (value == "components") return ObsKind::Components;
  bad_value("obs.kind", "expected identity|first_component|components, got '" + value + "'");
}

SamplerKind parse_sampler(const std::string& value) {
  if (value == "rwm") return SamplerKind::RandomWalk;
  if (value == "ids") return SamplerKind::IndependenceDynamics;
  if (value == "pcn") return SamplerKind::CrankNicolson;
  if (value == "pcn_dynamics") return SamplerKind::CrankNicolsonDynamics;
  bad_value("mcmc.sampler", "expected rwm|ids|pcn|pcn_dynamics, got '" + value + "'");
}

McmcInitKind parse_mcmc_init(const std::string& value) {
  if (value == "truth") return McmcInitKind::Truth;
  if (value == "prior_draw") return McmcInitKind::PriorDraw;
  if (value == "mean") return McmcInitKind::Mean;
  bad_value("mcmc.init", "expected truth|prior_draw|mean, got '" + value + "'");
}

VariationalMode parse_var_mode(const std::string& value) {
  if (value == "strong") return VariationalMode::Strong;
  if (value == "weak") return VariationalMode::Weak;
  bad_value("variational.mode", "expected strong|weak, got '" + value + "'");
}

VariationalStartKind parse_start_kind(const std::string& value) {
  if (value == "list") return VariationalStartKind::List;
  if (value == "random") return VariationalStartKind::Random;
  if (value == "truth") return VariationalStartKind::Truth;
  bad_value("variational.start_kind", "expected list|random|truth, got '" + value + "'");
}

FilterKind parse_filter_kind(const std::string& value) {
  if (value == "kf") return FilterKind::Kalman;
  if (value == "3dvar") return FilterKind::ThreeDVar;
  if (value == "exkf") return FilterKind::ExtendedKalman;
  if (value == "enkf") return FilterKind::EnsembleKalman;
  if (value == "etkf") return FilterKind::EnsembleTransform;
  if (value == "sirs") return FilterKind::Sirs;
  if (value == "sirs_op") return FilterKind::SirsOptimal;
  if (value == "sync") return FilterKind::Synchronization;
  bad_value("filter.kind",
            "expected kf|3dvar|exkf|enkf|etkf|sirs|sirs_op|sync, got '" + value + "'");
}

FilterInitKind parse_filter_init(const std::string& value) {
  if (value == "prior") return FilterInitKind::Prior;
  if (value == "spread") return FilterInitKind::Spread;
  if (value == "uniform01") return FilterInitKind::Uniform01;
  bad_value("filter.init", "expected prior|spread|uniform01, got '" + value + "'");
}

std::string sampler_name(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::RandomWalk: return "rwm";
    case SamplerKind::IndependenceDynamics: return "ids";
    case SamplerKind::CrankNicolson: return "pcn";
    case SamplerKind::CrankNicolsonDynamics: return "pcn_dynamics";
  }
  return "rwm";
}

std::string obs_kind_name(ObsKind kind) {
  switch (kind) {
    case ObsKind::Identity: return "identity";
    case ObsKind::FirstComponent: return "first_component";
    case ObsKind::Components: return "components";
  }
  return "identity";
}

// Names match filter_kind_name() in diagnostics.hpp; duplicated here so the
// config layer does not depend on the diagnostics header.
std::string config_filter_name(FilterKind kind) {
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
  return "kf";
}

// Keys that are meaningful for this fully-parsed configuration.  Setting
// anything outside the set is a validation error, and serialize_config()
// emits exactly the set, so echo files are minimal and round-trip.
std::set<std::string> active_keys(const ExperimentConfig& cfg) {
  std::set<std::string> keys = {"experiment.name", "experiment.kind", "experiment.seed",
                                "experiment.steps", "model.kind", "noise.sigma",
                                "prior.mean", "prior.cov", "truth.init", "output.dir"};
  switch (cfg.model_kind) {
    case ModelKind::LinearScalar:
      keys.insert("model.lambda");
      break;
    case ModelKind::Linear2D:
      keys.insert({"model.a11", "model.a12", "model.a21", "model.a22"});
      break;
    case ModelKind::Sin:
      keys.insert("model.alpha");
      break;
    case ModelKind::Logistic:
      keys.insert("model.r");
      break;
    case ModelKind::Lorenz63:
      keys.insert({"model.a", "model.b", "model.rho", "model.tau", "model.substeps"});
      break;
    case ModelKind::Lorenz96:
      keys.insert({"model.k", "model.f", "model.tau", "model.substeps"});
      break;
  }
  const bool observes = cfg.kind != ExperimentKind::Simulate;
  if (observes) {
    keys.insert({"obs.kind", "noise.gamma"});
    if (cfg.obs_kind == ObsKind::Components) keys.insert("obs.components");
  }
  if (cfg.kind == ExperimentKind::GridPosterior ||
      (cfg.kind == ExperimentKind::Mcmc && cfg.sampler == SamplerKind::RandomWalk))
    keys.insert({"grid.min", "grid.max", "grid.step"});
  if (cfg.kind == ExperimentKind::Mcmc)
    keys.insert({"mcmc.sampler", "mcmc.beta", "mcmc.samples", "mcmc.burn_in",
                 "mcmc.thin", "mcmc.init"});
  if (cfg.kind == ExperimentKind::Variational) {
    keys.insert({"variational.mode", "variational.start_kind", "variational.iterations",
                 "variational.restarts"});
    if (cfg.start_kind == VariationalStartKind::List) keys.insert("variational.starts");
    if (cfg.start_kind == VariationalStartKind::Random)
      keys.insert("variational.random_starts");
  }
  if (cfg.kind == ExperimentKind::Filter) {
    keys.insert({"filter.kind", "filter.init"});
    if (cfg.filter_kind == FilterKind::ThreeDVar) {
      if (cfg.chat_given)
        keys.insert("filter.chat");
      else
        keys.insert("filter.eta");
    }
    if (is_ensemble_kind(cfg.filter_kind)) keys.insert("filter.ensemble");
    if (cfg.filter_kind == FilterKind::EnsembleKalman ||
        cfg.filter_kind == FilterKind::EnsembleTransform)
      keys.insert({"filter.prediction_noise", "filter.sampled_gamma"});
    if (cfg.filter_init_kind == FilterInitKind::Spread) keys.insert("filter.init_spread");
  }
  return keys;
}

void validate(ExperimentConfig& cfg, const RawConfig& raw) {
  if (cfg.name.empty()) bad_value("experiment.name", "required");
  for (char c : cfg.name)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
      bad_value("experiment.name", "use letters, digits, '_' or '-'");
  if (!raw.count("experiment.seed")) bad_value("experiment.seed", "required");
  if (cfg.steps < 1) bad_value("experiment.steps", "must be >= 1");

  switch (cfg.model_kind) {
    case ModelKind::Logistic:
      if (cfg.r <= 0) bad_value("model.r", "must be > 0");
      break;
    case ModelKind::Sin:
      if (cfg.alpha <= 0) bad_value("model.alpha", "must be > 0");
      break;
    case ModelKind::Lorenz63:
      if (cfg.l63_a <= 0 || cfg.l63_b <= 0) bad_value("model.a", "a and b must be > 0");
      break;
    case ModelKind::Lorenz96:
      if (cfg.l96_k < 4) bad_value("model.k", "needs at least 4 components");
      break;
    default:
      break;
  }
  if (cfg.model_kind == ModelKind::Lorenz63 || cfg.model_kind == ModelKind::Lorenz96) {
    if (cfg.tau <= 0) bad_value("model.tau", "must be > 0");
    if (cfg.substeps < 1) bad_value("model.substeps", "must be >= 1");
  }

  const long dim = config_state_dim(cfg);
  if (cfg.obs_kind == ObsKind::Components) {
    if (cfg.obs_components.empty()) bad_value("obs.components", "required for obs.kind=components");
    for (std::size_t i = 0; i < cfg.obs_components.size(); ++i) {
      long c = cfg.obs_components[i];
      if (c < 0 || c >= dim) bad_value("obs.components", "index out of range");
      if (i > 0 && cfg.obs_components[i] <= cfg.obs_components[i - 1])
        bad_value("obs.components", "must be strictly increasing");
    }
  }

  if (cfg.sigma < 0) bad_value("noise.sigma", "must be >= 0");
  if (cfg.kind != ExperimentKind::Simulate && cfg.gamma <= 0)
    bad_value("noise.gamma", "must be > 0");
  if (cfg.prior_cov <= 0) bad_value("prior.cov", "must be > 0");
  if (cfg.truth_init_kind == TruthInitKind::Uniform01 && dim != 1)
    bad_value("truth.init", "uniform01 needs a scalar state");

  if (cfg.kind == ExperimentKind::GridPosterior ||
      (cfg.kind == ExperimentKind::Mcmc && cfg.sampler == SamplerKind::RandomWalk)) {
    if (cfg.grid_step <= 0) bad_value("grid.step", "must be > 0");
    if (cfg.grid_min >= cfg.grid_max) bad_value("grid.min", "must be below grid.max");
    if ((cfg.grid_max - cfg.grid_min) / cfg.grid_step < 1)
      bad_value("grid.step", "grid needs at least two nodes");
  }
  if (cfg.kind == ExperimentKind::GridPosterior) {
    if (cfg.sigma != 0) bad_value("noise.sigma", "grid posteriors need deterministic dynamics");
    if (dim != 1) bad_value("model.kind", "grid posteriors need a scalar state");
  }

  if (cfg.kind == ExperimentKind::Mcmc) {
    if (dim != 1) bad_value("model.kind", "mcmc experiments need a scalar state");
    if (cfg.samples < 1) bad_value("mcmc.samples", "must be >= 1");
    if (cfg.thin < 1) bad_value("mcmc.thin", "must be >= 1");
    if (cfg.burn_in < -1) bad_value("mcmc.burn_in", "must be >= -1");
    const bool pcn_like = cfg.sampler == SamplerKind::CrankNicolson ||
                          cfg.sampler == SamplerKind::CrankNicolsonDynamics;
    if (pcn_like && (cfg.beta <= 0 || cfg.beta > 1))
      bad_value("mcmc.beta", "must lie in (0, 1]");
    if (!pcn_like && cfg.beta <= 0) bad_value("mcmc.beta", "must be > 0");
    if (cfg.sampler == SamplerKind::RandomWalk && cfg.sigma != 0)
      bad_value("noise.sigma", "rwm targets the deterministic posterior");
    if (cfg.sampler != SamplerKind::RandomWalk && cfg.sigma == 0)
      bad_value("noise.sigma", "path samplers need stochastic dynamics");
  }

  if (cfg.kind == ExperimentKind::Variational) {
    if (cfg.var_mode == VariationalMode::Strong && cfg.sigma != 0)
      bad_value("noise.sigma", "strong-constraint minimization needs deterministic dynamics");
    if (cfg.var_mode == VariationalMode::Weak && cfg.sigma == 0)
      bad_value("noise.sigma", "weak-constraint minimization needs stochastic dynamics");
    if (cfg.start_kind == VariationalStartKind::List) {
      if (cfg.starts.empty()) bad_value("variational.starts", "required for start_kind=list");
      if (dim != 1) bad_value("variational.starts", "scalar start lists need a scalar state");
    }
    if (cfg.start_kind == VariationalStartKind::Random && cfg.random_starts < 1)
      bad_value("variational.random_starts", "must be >= 1");
    if (cfg.var_iterations < 1) bad_value("variational.iterations", "must be >= 1");
    if (cfg.var_restarts < 0) bad_value("variational.restarts", "must be >= 0");
  }

  if (cfg.kind == ExperimentKind::Filter) {
    if (cfg.filter_kind == FilterKind::ThreeDVar) {
      if (cfg.eta_given == cfg.chat_given)
        bad_value("filter.eta", "3dvar needs exactly one of filter.eta, filter.chat");
      if (cfg.eta_given && cfg.eta <= 0) bad_value("filter.eta", "must be > 0");
      if (cfg.chat_given && cfg.chat <= 0) bad_value("filter.chat", "must be > 0");
    }
    if (is_ensemble_kind(cfg.filter_kind) && cfg.ensemble < 2)
      bad_value("filter.ensemble", "needs at least two members");
    if (cfg.filter_init_kind == FilterInitKind::Spread && cfg.init_spread <= 0)
      bad_value("filter.init_spread", "must be > 0");
    if (cfg.filter_init_kind == FilterInitKind::Uniform01 && dim != 1)
      bad_value("filter.init", "uniform01 needs a scalar state");
    if (cfg.filter_kind == FilterKind::Kalman || cfg.filter_kind == FilterKind::Synchronization) {
      const bool linear = cfg.model_kind == ModelKind::LinearScalar ||
                          cfg.model_kind == ModelKind::Linear2D;
      if (cfg.filter_kind == FilterKind::Kalman && !linear)
        bad_value("filter.kind", "kf needs linear dynamics");
    }
  }

  const auto active = active_keys(cfg);
  for (const auto& [key, entry] : raw) {
    if (!active.count(key))
      throw ValidationError(key + ": not applicable to this configuration (line " +
                            std::to_string(entry.line) + ")");
  }
}

}  // namespace

long config_state_dim(const ExperimentConfig& cfg) {
  switch (cfg.model_kind) {
    case ModelKind::LinearScalar:
    case ModelKind::Sin:
    case ModelKind::Logistic:
      return 1;
    case ModelKind::Linear2D:
      return 2;
    case ModelKind::Lorenz63:
      return 3;
    case ModelKind::Lorenz96:
      return cfg.l96_k;
  }
  return 1;
}

ModelSpec<double> build_model(const ExperimentConfig& cfg) {
  switch (cfg.model_kind) {
    case ModelKind::LinearScalar:
      return LinearScalarMap<double>{cfg.lambda};
    case ModelKind::Linear2D: {
      LinearMap2D<double> m;
      m.a << cfg.a11, cfg.a12, cfg.a21, cfg.a22;
      return m;
    }
    case ModelKind::Sin:
      return SinMap<double>{cfg.alpha};
    case ModelKind::Logistic:
      return LogisticMap<double>{cfg.r};
    case ModelKind::Lorenz63: {
      Lorenz63<double> m;
      m.a = cfg.l63_a;
      m.b = cfg.l63_b;
      m.r = cfg.l63_r;
      m.tau = cfg.tau;
      m.substeps = static_cast<int>(cfg.substeps);
      return m;
    }
    case ModelKind::Lorenz96: {
      Lorenz96<double> m;
      m.k = static_cast<int>(cfg.l96_k);
      m.f = cfg.l96_f;
      m.tau = cfg.tau;
      m.substeps = static_cast<int>(cfg.substeps);
      return m;
    }
  }
  return LinearScalarMap<double>{cfg.lambda};
}

ObservationOperator<double> build_observation(const ExperimentConfig& cfg) {
  const Index dim = config_state_dim(cfg);
  switch (cfg.obs_kind) {
    case ObsKind::Identity:
      return ObservationOperator<double>::identity(dim);
    case ObsKind::FirstComponent:
      return ObservationOperator<double>::first_component(dim);
    case ObsKind::Components: {
      std::vector<Index> idx(cfg.obs_components.begin(), cfg.obs_components.end());
      return ObservationOperator<double>::projection(idx, dim);
    }
  }
  return ObservationOperator<double>::identity(dim);
}

std::string kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Simulate: return "simulate";
    case ExperimentKind::GridPosterior: return "grid_posterior";
    case ExperimentKind::Mcmc: return "mcmc";
    case ExperimentKind::Variational: return "variational";
    case ExperimentKind::Filter: return "filter";
  }
  return "simulate";
}

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::LinearScalar: return "linear_scalar";
    case ModelKind::Linear2D: return "linear_2d";
    case ModelKind::Sin: return "sin";
    case ModelKind::Logistic: return "logistic";
    case ModelKind::Lorenz63: return "lorenz63";
    case ModelKind::Lorenz96: return "lorenz96";
  }
  return "linear_scalar";
}

ExperimentConfig parse_config(const std::string& text) {
  RawConfig raw = tokenize(text);
  ExperimentConfig cfg;

  auto get = [&](const char* key) -> const std::string* {
    auto it = raw.find(key);
    return it == raw.end() ? nullptr : &it->second.value;
  };

  if (const auto* v = get("experiment.name")) cfg.name = *v;
  if (const auto* v = get("experiment.kind")) cfg.kind = parse_kind(*v);
  else bad_value("experiment.kind", "required");
  if (const auto* v = get("experiment.seed")) cfg.seed = to_u64("experiment.seed", *v);
  if (const auto* v = get("experiment.steps")) cfg.steps = to_long("experiment.steps", *v);
  else bad_value("experiment.steps", "required");

  if (const auto* v = get("model.kind")) cfg.model_kind = parse_model_kind(*v);
  else bad_value("model.kind", "required");
  if (const auto* v = get("model.lambda")) cfg.lambda = to_double("model.lambda", *v);
  if (const auto* v = get("model.a11")) cfg.a11 = to_double("model.a11", *v);
  if (const auto* v = get("model.a12")) cfg.a12 = to_double("model.a12", *v);
  if (const auto* v = get("model.a21")) cfg.a21 = to_double("model.a21", *v);
  if (const auto* v = get("model.a22")) cfg.a22 = to_double("model.a22", *v);
  if (const auto* v = get("model.alpha")) cfg.alpha = to_double("model.alpha", *v);
  if (const auto* v = get("model.r")) cfg.r = to_double("model.r", *v);
  if (const auto* v = get("model.a")) cfg.l63_a = to_double("model.a", *v);
  if (const auto* v = get("model.b")) cfg.l63_b = to_double("model.b", *v);
  if (const auto* v = get("model.rho")) cfg.l63_r = to_double("model.rho", *v);
  if (const auto* v = get("model.k")) cfg.l96_k = to_long("model.k", *v);
  if (const auto* v = get("model.f")) cfg.l96_f = to_double("model.f", *v);
  if (const auto* v = get("model.tau")) cfg.tau = to_double("model.tau", *v);
  if (const auto* v = get("model.substeps")) cfg.substeps = to_long("model.substeps", *v);

  if (const auto* v = get("obs.kind")) cfg.obs_kind = parse_obs_kind(*v);
  else if (cfg.kind != ExperimentKind::Simulate)
    cfg.obs_kind = config_state_dim(cfg) == 1 ? ObsKind::Identity : ObsKind::FirstComponent;
  if (const auto* v = get("obs.components"))
    cfg.obs_components = to_long_list("obs.components", *v);

  if (const auto* v = get("noise.sigma")) cfg.sigma = to_double("noise.sigma", *v);
  if (const auto* v = get("noise.gamma")) cfg.gamma = to_double("noise.gamma", *v);
  if (const auto* v = get("prior.mean")) cfg.prior_mean = to_double("prior.mean", *v);
  if (const auto* v = get("prior.cov")) cfg.prior_cov = to_double("prior.cov", *v);

  if (const auto* v = get("truth.init")) {
    if (*v == "prior") {
      cfg.truth_init_kind = TruthInitKind::Prior;
    } else if (*v == "uniform01") {
      cfg.truth_init_kind = TruthInitKind::Uniform01;
    } else {
      cfg.truth_init_kind = TruthInitKind::Value;
      cfg.truth_value = to_double("truth.init", *v);
    }
  }

  if (const auto* v = get("grid.min")) cfg.grid_min = to_double("grid.min", *v);
  if (const auto* v = get("grid.max")) cfg.grid_max = to_double("grid.max", *v);
  if (const auto* v = get("grid.step")) cfg.grid_step = to_double("grid.step", *v);

  if (const auto* v = get("mcmc.sampler")) cfg.sampler = parse_sampler(*v);
  if (const auto* v = get("mcmc.beta")) cfg.beta = to_double("mcmc.beta", *v);
  if (const auto* v = get("mcmc.samples")) cfg.samples = to_long("mcmc.samples", *v);
  if (const auto* v = get("mcmc.burn_in")) cfg.burn_in = to_long("mcmc.burn_in", *v);
  if (const auto* v = get("mcmc.thin")) cfg.thin = to_long("mcmc.thin", *v);
  if (const auto* v = get("mcmc.init")) cfg.mcmc_init = parse_mcmc_init(*v);

  if (const auto* v = get("variational.mode")) cfg.var_mode = parse_var_mode(*v);
  if (const auto* v = get("variational.start_kind")) cfg.start_kind = parse_start_kind(*v);
  if (const auto* v = get("variational.starts"))
    cfg.starts = to_double_list("variational.starts", *v);
  if (const auto* v = get("variational.random_starts"))
    cfg.random_starts = to_long("variational.random_starts", *v);
  if (const auto* v = get("variational.iterations"))
    cfg.var_iterations = to_long("variational.iterations", *v);
  if (const auto* v = get("variational.restarts"))
    cfg.var_restarts = to_long("variational.restarts", *v);

  if (const auto* v = get("filter.kind")) cfg.filter_kind = parse_filter_kind(*v);
  if (const auto* v = get("filter.ensemble")) cfg.ensemble = to_long("filter.ensemble", *v);
  if (const auto* v = get("filter.eta")) {
    cfg.eta = to_double("filter.eta", *v);
    cfg.eta_given = true;
  }
  if (const auto* v = get("filter.chat")) {
    cfg.chat = to_double("filter.chat", *v);
    cfg.chat_given = true;
  }
  if (const auto* v = get("filter.init")) cfg.filter_init_kind = parse_filter_init(*v);
  if (const auto* v = get("filter.init_spread"))
    cfg.init_spread = to_double("filter.init_spread", *v);
  if (const auto* v = get("filter.prediction_noise"))
    cfg.prediction_noise = to_bool("filter.prediction_noise", *v);
  if (const auto* v = get("filter.sampled_gamma"))
    cfg.sampled_gamma = to_bool("filter.sampled_gamma", *v);

  if (const auto* v = get("output.dir")) cfg.out_dir = *v;

  validate(cfg, raw);
  return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
  const auto active = active_keys(cfg);
  std::ostringstream out;
  auto emit = [&](const char* key, const std::string& value) {
    if (active.count(key)) out << key << " = " << value << "\n";
  };
  auto emit_d = [&](const char* key, double x) { emit(key, format_double(x)); };
  auto emit_l = [&](const char* key, long x) { emit(key, std::to_string(x)); };
  auto emit_b = [&](const char* key, bool x) { emit(key, x ? "true" : "false"); };

  emit("experiment.name", cfg.name);
  emit("experiment.kind", kind_name(cfg.kind));
  emit("experiment.seed", std::to_string(cfg.seed));
  emit_l("experiment.steps", cfg.steps);

  emit("model.kind", model_kind_name(cfg.model_kind));
  emit_d("model.lambda", cfg.lambda);
  emit_d("model.a11", cfg.a11);
  emit_d("model.a12", cfg.a12);
  emit_d("model.a21", cfg.a21);
  emit_d("model.a22", cfg.a22);
  emit_d("model.alpha", cfg.alpha);
  emit_d("model.r", cfg.r);
  emit_d("model.a", cfg.l63_a);
  emit_d("model.b", cfg.l63_b);
  emit_d("model.rho", cfg.l63_r);
  emit_l("model.k", cfg.l96_k);
  emit_d("model.f", cfg.l96_f);
  emit_d("model.tau", cfg.tau);
  emit_l("model.substeps", cfg.substeps);

  if (active.count("obs.kind")) emit("obs.kind", obs_kind_name(cfg.obs_kind));
  if (active.count("obs.components")) {
    std::string list;
    for (std::size_t i = 0; i < cfg.obs_components.size(); ++i) {
      if (i) list += ",";
      list += std::to_string(cfg.obs_components[i]);
    }
    emit("obs.components", list);
  }

  emit_d("noise.sigma", cfg.sigma);
  emit_d("noise.gamma", cfg.gamma);
  emit_d("prior.mean", cfg.prior_mean);
  emit_d("prior.cov", cfg.prior_cov);

  switch (cfg.truth_init_kind) {
    case TruthInitKind::Prior: emit("truth.init", "prior"); break;
    case TruthInitKind::Uniform01: emit("truth.init", "uniform01"); break;
    case TruthInitKind::Value: emit("truth.init", format_double(cfg.truth_value)); break;
  }

  emit_d("grid.min", cfg.grid_min);
  emit_d("grid.max", cfg.grid_max);
  emit_d("grid.step", cfg.grid_step);

  if (active.count("mcmc.sampler")) emit("mcmc.sampler", sampler_name(cfg.sampler));
  emit_d("mcmc.beta", cfg.beta);
  emit_l("mcmc.samples", cfg.samples);
  emit_l("mcmc.burn_in", cfg.burn_in);
  emit_l("mcmc.thin", cfg.thin);
  if (active.count("mcmc.init")) {
    const char* name = cfg.mcmc_init == McmcInitKind::Truth        ? "truth"
                       : cfg.mcmc_init == McmcInitKind::PriorDraw ? "prior_draw"
                                                                  : "mean";
    emit("mcmc.init", name);
  }

  if (active.count("variational.mode"))
    emit("variational.mode", cfg.var_mode == VariationalMode::Strong ? "strong" : "weak");
  if (active.count("variational.start_kind")) {
    const char* name = cfg.start_kind == VariationalStartKind::List    ? "list"
                       : cfg.start_kind == VariationalStartKind::Random ? "random"
                                                                        : "truth";
    emit("variational.start_kind", name);
  }
  if (active.count("variational.starts")) {
    std::string list;
    for (std::size_t i = 0; i < cfg.starts.size(); ++i) {
      if (i) list += ",";
      list += format_double(cfg.starts[i]);
    }
    emit("variational.starts", list);
  }
  emit_l("variational.random_starts", cfg.random_starts);
  emit_l("variational.iterations", cfg.var_iterations);
  emit_l("variational.restarts", cfg.var_restarts);

  if (active.count("filter.kind")) emit("filter.kind", config_filter_name(cfg.filter_kind));
  emit_l("filter.ensemble", cfg.ensemble);
  emit_d("filter.eta", cfg.eta);
  emit_d("filter.chat", cfg.chat);
  if (active.count("filter.init")) {
    const char* name = cfg.filter_init_kind == FilterInitKind::Prior    ? "prior"
                       : cfg.filter_init_kind == FilterInitKind::Spread ? "spread"
                                                                        : "uniform01";
    emit("filter.init", name);
  }
  emit_d("filter.init_spread", cfg.init_spread);
  emit_b("filter.prediction_noise", cfg.prediction_noise);
  emit_b("filter.sampled_gamma", cfg.sampled_gamma);

  emit("output.dir", cfg.out_dir);
  return out.str();
}

}  // namespace dakit::cli
