#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"

namespace dakit::cli {

/// What a finished run leaves behind: the four output files plus the summary
/// rows in memory (the same name/value pairs written to the summary CSV), so
/// preset checks can assert on results without re-reading files.
struct RunOutput {
  std::vector<std::pair<std::string, double>> summary;
  std::filesystem::path series_path;
  std::filesystem::path summary_path;
  std::filesystem::path plot_path;
  std::filesystem::path echo_path;
};

/// Looks up a summary value; throws ValidationError when absent.
double summary_value(const RunOutput& out, const std::string& name);

/// Runs one experiment end to end and writes <name>_series.csv,
/// <name>_summary.csv, <name>.gp and <name>_config_echo.txt into cfg.out_dir.
RunOutput run_experiment(const ExperimentConfig& cfg);

}  // namespace dakit::cli
