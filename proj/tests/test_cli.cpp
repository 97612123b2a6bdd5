#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "presets.hpp"
#include "runner.hpp"

using namespace dakit;
using namespace dakit::cli;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  REQUIRE(bool(out));
  out << text;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::path("cli_test_tmp") / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string dakit_bin() {
  const char* bin = std::getenv("DAKIT_BIN");
  REQUIRE(bin != nullptr);
  return bin;
}

int run_command(const std::string& args, const fs::path& stdout_file = {}) {
  std::string cmd = dakit_bin() + " " + args;
  if (stdout_file.empty())
    cmd += " >/dev/null 2>&1";
  else
    cmd += " >" + stdout_file.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  REQUIRE(raw != -1);
  return WEXITSTATUS(raw);
}

std::string simulate_config(const std::string& name, const fs::path& out_dir) {
  return "experiment.name = " + name +
         "\n"
         "experiment.kind = simulate\n"
         "experiment.seed = 7\n"
         "experiment.steps = 10\n"
         "model.kind = sin\n"
         "model.alpha = 2.5\n"
         "noise.sigma = 1\n"
         "prior.mean = 0\n"
         "prior.cov = 1\n"
         "truth.init = prior\n"
         "output.dir = " +
         out_dir.string() + "\n";
}

std::string blowup_config(const fs::path& out_dir) {
  return "experiment.name = t_blow\n"
         "experiment.kind = mcmc\n"
         "experiment.seed = 11\n"
         "experiment.steps = 20\n"
         "model.kind = logistic\n"
         "model.r = 4\n"
         "obs.kind = identity\n"
         "noise.sigma = 0\n"
         "noise.gamma = 0.2\n"
         "prior.mean = 0\n"
         "prior.cov = 100\n"
         "truth.init = 0.3\n"
         "mcmc.sampler = rwm\n"
         "mcmc.beta = 0.5\n"
         "mcmc.samples = 3000\n"
         "mcmc.init = truth\n"
         "output.dir = " +
         out_dir.string() + "\n";
}

}  // namespace

TEST_SUITE("config_grammar") {
  TEST_CASE("serialization round-trips for every preset") {
    for (const auto& preset : all_presets()) {
      INFO("preset ", preset.name);
      const auto cfg = parse_config(preset.config);
      CHECK(cfg.name == preset.name);
      const std::string once = serialize_config(cfg);
      const auto reparsed = parse_config(once);
      const std::string twice = serialize_config(reparsed);
      CHECK(once == twice);
    }
  }

  TEST_CASE("parse errors carry the offending line number") {
    const std::string base = "experiment.name = t\nexperiment.kind = simulate\n";

    const auto expect_parse_error = [](const std::string& text, const std::string& needle) {
      try {
        (void)parse_config(text);
        FAIL_CHECK("expected ParseError for: ", needle);
      } catch (const ParseError& e) {
        const std::string what = e.what();
        INFO("message: ", what);
        CHECK(what.find(needle) != std::string::npos);
      }
    };

    expect_parse_error(base + "experiment.bogus = 1\n", "line 3");
    expect_parse_error(base + "experiment.bogus = 1\n", "unknown key");
    expect_parse_error(base + "experiment.kind = mcmc\n", "duplicate key");
    expect_parse_error(base + "a.b.c = 1\n", "exactly one dot");
    expect_parse_error(base + "experiment.seed 5\n", "expected 'section.key = value'");
    expect_parse_error(base + "experiment.seed =\n", "empty value");
    expect_parse_error(base + "# comment only\n\nexperiment.seed = 1\nnoise.sigma\n",
                       "line 6");
  }

  TEST_CASE("validation errors name the field") {
    const auto dir = fresh_dir("grammar");
    const std::string good = simulate_config("t_sim", dir);

    const auto expect_validation_error = [](std::string text, const std::string& needle) {
      try {
        (void)parse_config(text);
        FAIL_CHECK("expected ValidationError mentioning: ", needle);
      } catch (const ValidationError& e) {
        const std::string what = e.what();
        INFO("message: ", what);
        CHECK(what.find(needle) != std::string::npos);
      }
    };

    expect_validation_error(apply_overrides(good, {"noise.sigma=-1"}), "noise.sigma");
    expect_validation_error(apply_overrides(good, {"model.kind=frobnicate"}), "model.kind");
    expect_validation_error(apply_overrides(good, {"experiment.steps=0"}),
                            "experiment.steps");

    // seed is mandatory
    std::string no_seed;
    std::istringstream in(good);
    std::string line;
    while (std::getline(in, line))
      if (line.find("experiment.seed") == std::string::npos) no_seed += line + "\n";
    expect_validation_error(no_seed, "experiment.seed");
  }

  TEST_CASE("keys outside the experiment kind are rejected") {
    const auto dir = fresh_dir("grammar_inapplicable");
    const std::string good = simulate_config("t_sim", dir);
    try {
      (void)parse_config(good + "mcmc.beta = 0.5\n");
      FAIL_CHECK("expected ValidationError for an inapplicable key");
    } catch (const ValidationError& e) {
      const std::string what = e.what();
      CHECK(what.find("mcmc.beta") != std::string::npos);
      CHECK(what.find("not applicable") != std::string::npos);
    }
  }

  TEST_CASE("overrides replace in place or append") {
    std::string text = "experiment.seed = 1\nnoise.gamma = 0.5\n";
    const std::string replaced = apply_overrides(text, {"noise.gamma=2.5"});
    CHECK(replaced.find("noise.gamma = 2.5") != std::string::npos);
    CHECK(replaced.find("0.5") == std::string::npos);

    const std::string appended = apply_overrides(text, {"noise.sigma=1.5"});
    CHECK(appended.find("noise.gamma = 0.5") != std::string::npos);
    CHECK(appended.find("noise.sigma = 1.5") != std::string::npos);
  }
}

TEST_SUITE("presets") {
  TEST_CASE("the preset table is populated and self-consistent") {
    const auto& presets = all_presets();
    CHECK(presets.size() >= 15);
    for (const auto& preset : presets) {
      INFO("preset ", preset.name);
      CHECK_FALSE(preset.name.empty());
      CHECK_FALSE(preset.description.empty());
      CHECK_FALSE(preset.checks.empty());
      const auto cfg = parse_config(preset.config);
      CHECK(cfg.name == preset.name);
      CHECK(find_preset(preset.name) == &preset);
    }
    CHECK(find_preset("no_such_preset") == nullptr);
  }
}

TEST_SUITE("runner") {
  TEST_CASE("a run leaves four files and an in-memory summary") {
    const auto dir = fresh_dir("runner_files");
    const auto cfg = parse_config(simulate_config("t_sim", dir));
    const auto out = run_experiment(cfg);

    CHECK(fs::exists(out.series_path));
    CHECK(fs::exists(out.summary_path));
    CHECK(fs::exists(out.plot_path));
    CHECK(fs::exists(out.echo_path));
    CHECK(out.series_path.filename() == "t_sim_series.csv");
    CHECK(out.summary_path.filename() == "t_sim_summary.csv");
    CHECK(out.plot_path.filename() == "t_sim.gp");
    CHECK(out.echo_path.filename() == "t_sim_config_echo.txt");

    CHECK_FALSE(out.summary.empty());
    CHECK(summary_value(out, out.summary.front().first) ==
          doctest::Approx(out.summary.front().second));
    CHECK_THROWS_AS((void)summary_value(out, "no_such_metric"), ValidationError);

    const std::string series = read_file(out.series_path);
    CHECK(series.rfind("# ", 0) == 0);
    CHECK(series.find("\nj,") != std::string::npos);
  }

  TEST_CASE("the echo file reproduces the effective configuration") {
    const auto dir = fresh_dir("runner_echo");
    const auto cfg = parse_config(simulate_config("t_echo", dir));
    const auto out = run_experiment(cfg);
    const std::string echo = read_file(out.echo_path);
    const auto reparsed = parse_config(echo);
    CHECK(serialize_config(reparsed) == echo);
    CHECK(reparsed.seed == cfg.seed);
    CHECK(reparsed.name == cfg.name);
  }

  TEST_CASE("one configuration always produces identical bytes") {
    const auto dir_a = fresh_dir("runner_rep_a");
    const auto dir_b = fresh_dir("runner_rep_b");
    const auto out_a = run_experiment(parse_config(simulate_config("t_rep", dir_a)));
    const auto out_b = run_experiment(parse_config(simulate_config("t_rep", dir_b)));
    CHECK(read_file(out_a.series_path) == read_file(out_b.series_path));
    CHECK(read_file(out_a.summary_path) == read_file(out_b.summary_path));
  }
}

TEST_SUITE("binary") {
  TEST_CASE("validate accepts good configs and rejects bad ones") {
    const auto dir = fresh_dir("bin_validate");
    const fs::path good = dir / "good.cfg";
    write_file(good, simulate_config("t_good", dir));
    CHECK(run_command("validate " + good.string()) == 0);

    const fs::path bad = dir / "bad.cfg";
    write_file(bad, "experiment.bogus = 1\n");
    CHECK(run_command("validate " + bad.string()) == 2);

    CHECK(run_command("validate " + (dir / "missing.cfg").string()) != 0);
  }

  TEST_CASE("run writes the full output set") {
    const auto dir = fresh_dir("bin_run");
    const fs::path cfg_file = dir / "sim.cfg";
    write_file(cfg_file, simulate_config("t_bin", dir / "out"));
    CHECK(run_command("run " + cfg_file.string()) == 0);
    CHECK(fs::exists(dir / "out" / "t_bin_series.csv"));
    CHECK(fs::exists(dir / "out" / "t_bin_summary.csv"));
    CHECK(fs::exists(dir / "out" / "t_bin.gp"));
    CHECK(fs::exists(dir / "out" / "t_bin_config_echo.txt"));
  }

  TEST_CASE("a runtime failure exits 3 and leaves an error record") {
    const auto dir = fresh_dir("bin_blowup");
    const fs::path cfg_file = dir / "blow.cfg";
    write_file(cfg_file, blowup_config(dir / "out"));
    CHECK(run_command("run " + cfg_file.string()) == 3);
    const fs::path record = dir / "out" / "t_blow_error.txt";
    REQUIRE(fs::exists(record));
    const std::string text = read_file(record);
    CHECK(text.find("status = error") != std::string::npos);
    CHECK(text.find("phase = run") != std::string::npos);
    CHECK(text.find("BlowUpLimit") != std::string::npos);
    CHECK(text.find("exit_code = 3") != std::string::npos);
  }

  TEST_CASE("a failing preset check exits 4") {
    const auto dir = fresh_dir("bin_check");
    const int code = run_command("preset p9_3dvar_logistic --check --override filter.eta=1e6 --out " +
                                 dir.string());
    CHECK(code == 4);
    const fs::path record = dir / "p9_3dvar_logistic" / "p9_3dvar_logistic_error.txt";
    REQUIRE(fs::exists(record));
    CHECK(read_file(record).find("phase = check") != std::string::npos);
  }

  TEST_CASE("list names every preset") {
    const auto dir = fresh_dir("bin_list");
    const fs::path listing_file = dir / "list.txt";
    CHECK(run_command("list", listing_file) == 0);
    const std::string listing = read_file(listing_file);
    for (const auto& preset : all_presets())
      CHECK(listing.find(preset.name) != std::string::npos);
  }

  TEST_CASE("an unknown preset name is a configuration error") {
    CHECK(run_command("preset no_such_preset") == 2);
  }
}
