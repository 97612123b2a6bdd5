#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "presets.hpp"
#include "runner.hpp"

namespace {

namespace fs = std::filesystem;
using namespace dakit;
using namespace dakit::cli;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;   // parse or validation failure
constexpr int kExitRuntime = 3;  // the experiment itself failed
constexpr int kExitCheck = 4;    // a --check assertion failed

std::string error_type_name(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e)) return "ParseError";
  if (dynamic_cast<const ValidationError*>(&e)) return "ValidationError";
  if (dynamic_cast<const BlowUpLimit*>(&e)) return "BlowUpLimit";
  if (dynamic_cast<const NonFiniteState*>(&e)) return "NonFiniteState";
  if (dynamic_cast<const NonFiniteObjective*>(&e)) return "NonFiniteObjective";
  if (dynamic_cast<const ZeroModelNoise*>(&e)) return "ZeroModelNoise";
  if (dynamic_cast<const SingularPrecision*>(&e)) return "SingularPrecision";
  if (dynamic_cast<const SingularS*>(&e)) return "SingularS";
  if (dynamic_cast<const NotPositiveSemiDefinite*>(&e)) return "NotPositiveSemiDefinite";
  if (dynamic_cast<const DimensionMismatch*>(&e)) return "DimensionMismatch";
  if (dynamic_cast<const DegeneratePosterior*>(&e)) return "DegeneratePosterior";
  if (dynamic_cast<const InvalidVariance*>(&e)) return "InvalidVariance";
  if (dynamic_cast<const GridMismatch*>(&e)) return "GridMismatch";
  if (dynamic_cast<const EmptySamples*>(&e)) return "EmptySamples";
  if (dynamic_cast<const NonInvertibleMap*>(&e)) return "NonInvertibleMap";
  if (dynamic_cast<const ZeroWeightSum*>(&e)) return "ZeroWeightSum";
  if (dynamic_cast<const NonEnsembleFilter*>(&e)) return "NonEnsembleFilter";
  if (dynamic_cast<const ConfigMismatch*>(&e)) return "ConfigMismatch";
  return "Error";
}

// Machine-readable failure record next to where the outputs would have gone.
void write_error_record(const fs::path& path, const std::string& phase,
                        const std::string& type, const std::string& message,
                        int exit_code) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) return;
  out << "status = error\n";
  out << "phase = " << phase << "\n";
  out << "error_type = " << type << "\n";
  out << "message = " << message << "\n";
  out << "exit_code = " << exit_code << "\n";
}

struct WorkUnit {
  std::string label;          // what to call it in terminal output
  std::string config_text;    // full config, overrides already applied
  const Preset* preset = nullptr;  // set for preset runs (enables --check)
};

int execute_unit(const WorkUnit& unit, bool run_checks, const std::string& fallback_dir) {
  ExperimentConfig cfg;
  try {
    cfg = parse_config(unit.config_text);
  } catch (const std::exception& e) {
    const std::string type = error_type_name(e);
    std::cerr << "[" << unit.label << "] " << type << ": " << e.what() << "\n";
    write_error_record(fs::path(fallback_dir) / (unit.label + "_error.txt"),
                       type == "ParseError" ? "parse" : "validate", type, e.what(),
                       kExitConfig);
    return kExitConfig;
  }

  RunOutput out;
  try {
    out = run_experiment(cfg);
  } catch (const std::exception& e) {
    const std::string type = error_type_name(e);
    std::cerr << "[" << unit.label << "] " << type << ": " << e.what() << "\n";
    write_error_record(fs::path(cfg.out_dir) / (cfg.name + "_error.txt"), "run", type,
                       e.what(), kExitRuntime);
    return kExitRuntime;
  }

  std::cout << "[" << unit.label << "] wrote " << out.series_path.string() << "\n";

  if (run_checks && unit.preset) {
    std::vector<std::string> failures;
    for (const auto& check : unit.preset->checks) {
      const bool ok = check.ok(out);
      std::cout << "[" << unit.label << "] check " << (ok ? "pass" : "FAIL") << ": "
                << check.label << "\n";
      if (!ok) failures.push_back(check.label);
    }
    if (!failures.empty()) {
      std::string joined;
      for (const auto& f : failures) joined += (joined.empty() ? "" : "; ") + f;
      write_error_record(fs::path(cfg.out_dir) / (cfg.name + "_error.txt"), "check",
                         "CheckFailure", joined, kExitCheck);
      return kExitCheck;
    }
  }
  return kExitOk;
}

// Runs every unit, at most `jobs` at a time in child processes, and returns
// the worst exit code.  jobs <= 1 stays in-process.
int execute_all(const std::vector<WorkUnit>& units, long jobs, bool run_checks,
                const std::string& fallback_dir) {
  int worst = kExitOk;
  if (jobs <= 1 || units.size() <= 1) {
    for (const auto& unit : units)
      worst = std::max(worst, execute_unit(unit, run_checks, fallback_dir));
    return worst;
  }

  std::vector<pid_t> running;
  auto reap_one = [&]() {
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid > 0) {
      running.erase(std::remove(running.begin(), running.end(), pid), running.end());
      if (WIFEXITED(status)) worst = std::max(worst, WEXITSTATUS(status));
      else worst = std::max(worst, kExitRuntime);
    }
  };

  for (const auto& unit : units) {
    while (running.size() >= static_cast<std::size_t>(jobs)) reap_one();
    std::cout.flush();
    std::cerr.flush();
    const pid_t pid = fork();
    if (pid == 0) {
      std::exit(execute_unit(unit, run_checks, fallback_dir));
    } else if (pid > 0) {
      running.push_back(pid);
    } else {
      worst = std::max(worst, execute_unit(unit, run_checks, fallback_dir));
    }
  }
  while (!running.empty()) reap_one();
  return worst;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string label_for(const fs::path& path) {
  std::string stem = path.stem().string();
  return stem.empty() ? "config" : stem;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dakit: config-driven twin experiments for discrete-time data assimilation"};
  app.require_subcommand(1);

  std::vector<std::string> config_files;
  std::vector<std::string> preset_names;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string validate_file;
  long jobs = 1;
  bool all_presets_flag = false;
  bool check_flag = false;

  auto* run_cmd = app.add_subcommand("run", "run experiments from config files");
  run_cmd->add_option("configs", config_files, "config files")
      ->required()
      ->check(CLI::ExistingFile);
  run_cmd->add_option("--jobs", jobs, "parallel worker processes");
  run_cmd->add_option("--out", out_dir, "override output.dir");

  auto* preset_cmd = app.add_subcommand("preset", "run built-in presets");
  preset_cmd->add_option("names", preset_names, "preset names (see 'list')");
  preset_cmd->add_flag("--all", all_presets_flag, "run every preset");
  preset_cmd
      ->add_option("--override", overrides, "section.key=value applied to the preset")
      ->type_size(1);
  preset_cmd->add_flag("--check", check_flag, "evaluate the preset's acceptance checks");
  preset_cmd->add_option("--jobs", jobs, "parallel worker processes");
  preset_cmd->add_option("--out", out_dir, "base output directory (default out)");

  auto* list_cmd = app.add_subcommand("list", "list available presets");

  auto* validate_cmd = app.add_subcommand("validate", "parse and validate a config file");
  validate_cmd->add_option("config", validate_file, "config file")
      ->required()
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  if (list_cmd->parsed()) {
    for (const auto& preset : all_presets())
      std::cout << preset.name << "  -  " << preset.description << "\n";
    return kExitOk;
  }

  if (validate_cmd->parsed()) {
    try {
      const auto cfg = parse_config(read_file(validate_file));
      std::cout << "ok: " << cfg.name << " (" << kind_name(cfg.kind) << ")\n";
      return kExitOk;
    } catch (const std::exception& e) {
      std::cerr << error_type_name(e) << ": " << e.what() << "\n";
      return kExitConfig;
    }
  }

  const std::string base_out = out_dir.empty() ? "out" : out_dir;

  if (run_cmd->parsed()) {
    std::vector<WorkUnit> units;
    for (const auto& file : config_files) {
      WorkUnit unit;
      unit.label = label_for(file);
      try {
        unit.config_text = read_file(file);
      } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
      }
      if (!out_dir.empty())
        unit.config_text = apply_overrides(unit.config_text, {"output.dir=" + out_dir});
      units.push_back(std::move(unit));
    }
    return execute_all(units, jobs, false, base_out);
  }

  // preset subcommand
  if (preset_names.empty() && !all_presets_flag) {
    std::cerr << "preset: give preset names or --all (see 'dakit list')\n";
    return kExitConfig;
  }
  std::vector<const Preset*> chosen;
  if (all_presets_flag) {
    for (const auto& preset : all_presets()) chosen.push_back(&preset);
  } else {
    for (const auto& name : preset_names) {
      const Preset* preset = find_preset(name);
      if (!preset) {
        std::cerr << "unknown preset '" << name << "' (see 'dakit list')\n";
        return kExitConfig;
      }
      chosen.push_back(preset);
    }
  }

  std::vector<WorkUnit> units;
  for (const Preset* preset : chosen) {
    WorkUnit unit;
    unit.label = preset->name;
    unit.preset = preset;
    // Each preset gets its own directory so parallel batches never share
    // output files; the layout is identical with and without --jobs.
    std::vector<std::string> effective = {"output.dir=" + base_out + "/" + preset->name};
    effective.insert(effective.end(), overrides.begin(), overrides.end());
    unit.config_text = apply_overrides(preset->config, effective);
    units.push_back(std::move(unit));
  }
  return execute_all(units, jobs, check_flag, base_out);
}
