#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dakit/filters.hpp"
#include "dakit/mcmc.hpp"

namespace dakit::cli {

enum class ExperimentKind { Simulate, GridPosterior, Mcmc, Variational, Filter };

enum class ModelKind { LinearScalar, Linear2D, Sin, Logistic, Lorenz63, Lorenz96 };

enum class ObsKind { Identity, FirstComponent, Components };

enum class TruthInitKind { Prior, Value, Uniform01 };

enum class McmcInitKind { Truth, PriorDraw, Mean };

enum class VariationalMode { Strong, Weak };

enum class VariationalStartKind { List, Random, Truth };

enum class FilterInitKind { Prior, Spread, Uniform01 };

/// Flat, fully-resolved experiment description.  Every field has its
/// post-default value after parse_config(); serialize_config() emits the
/// effective keys for the experiment kind so that echo files round-trip.
struct ExperimentConfig {
  // experiment.*
  std::string name;
  ExperimentKind kind = ExperimentKind::Simulate;
  std::uint64_t seed = 0;
  long steps = 0;

  // model.*
  ModelKind model_kind = ModelKind::LinearScalar;
  double lambda = 0.5;                        // linear_scalar
  double a11 = 0.0, a12 = 1.0, a21 = -1.0, a22 = 0.0;  // linear_2d
  double alpha = 2.5;                         // sin
  double r = 2.0;                             // logistic
  double l63_a = 10.0, l63_b = 8.0 / 3.0, l63_r = 28.0;  // lorenz63
  long l96_k = 40;                            // lorenz96
  double l96_f = 8.0;
  double tau = 0.01;                          // continuous-time step
  long substeps = 20;

  // obs.*
  ObsKind obs_kind = ObsKind::Identity;
  std::vector<long> obs_components;

  // noise.* (standard deviations; sigma == 0 means deterministic dynamics)
  double sigma = 0.0;
  double gamma = 1.0;

  // prior.* (isotropic; mean broadcast across the state dimension)
  double prior_mean = 0.0;
  double prior_cov = 1.0;

  // truth.* (truth.init = prior | uniform01 | <number>)
  TruthInitKind truth_init_kind = TruthInitKind::Prior;
  double truth_value = 0.0;

  // grid.*
  double grid_min = 0.01;
  double grid_max = 0.99;
  double grid_step = 0.0005;

  // mcmc.*
  SamplerKind sampler = SamplerKind::RandomWalk;
  double beta = 0.5;
  long samples = 10000;
  long burn_in = -1;
  long thin = 1;
  McmcInitKind mcmc_init = McmcInitKind::Truth;

  // variational.*
  VariationalMode var_mode = VariationalMode::Strong;
  VariationalStartKind start_kind = VariationalStartKind::List;
  std::vector<double> starts;
  long random_starts = 20;
  long var_iterations = 10000;
  long var_restarts = 3;

  // filter.*
  FilterKind filter_kind = FilterKind::Kalman;
  long ensemble = 100;
  double eta = 0.0;   // 3dvar model-covariance ratio: fixed_cov = (gamma^2/eta) I
  double chat = 0.0;  // 3dvar model-covariance scale, set directly
  bool eta_given = false;
  bool chat_given = false;
  FilterInitKind filter_init_kind = FilterInitKind::Prior;
  double init_spread = 10.0;
  bool prediction_noise = true;
  bool sampled_gamma = false;

  // output.*
  std::string out_dir = "out";
};

/// Parses the `section.key = value` configuration grammar.  `#` starts a
/// comment, blank lines are skipped, keys have exactly one dot.  Unknown or
/// duplicate keys raise ParseError with the offending line number; bad values
/// or inconsistent combinations raise ValidationError naming the field.
ExperimentConfig parse_config(const std::string& text);

/// Canonical text form: every key relevant to the experiment kind, in schema
/// order, with effective (post-default) values.  parse_config(serialize_config(c))
/// reproduces c, and serializing again yields identical text.
std::string serialize_config(const ExperimentConfig& cfg);

std::string kind_name(ExperimentKind kind);
std::string model_kind_name(ModelKind kind);

/// State dimension implied by the model block.
long config_state_dim(const ExperimentConfig& cfg);

ModelSpec<double> build_model(const ExperimentConfig& cfg);
ObservationOperator<double> build_observation(const ExperimentConfig& cfg);

}  // namespace dakit::cli
