#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dualsmooth/error.hpp"
#include "dualsmooth/io.hpp"
#include "dualsmooth/scenario.hpp"
#include "dualsmooth/verification.hpp"

namespace fs = std::filesystem;
using namespace dualsmooth;

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("dualsmooth");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("DUALSMOOTH_LOG")) {
    const std::string level = env;
    if (level == "error") spdlog::set_level(spdlog::level::err);
    else if (level == "info") spdlog::set_level(spdlog::level::info);
    else if (level == "debug") spdlog::set_level(spdlog::level::debug);
    else spdlog::warn("DUALSMOOTH_LOG={} not recognized (error|info|debug)", level);
  }
}

fs::path summary_path(const fs::path& csv) {
  fs::path p = csv;
  p.replace_extension(".summary.json");
  return p;
}

void finish(const nlohmann::json& summary, const fs::path& csv) {
  io::save_json(summary_path(csv), summary);
  std::cout << summary.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Fixed-interval smoothing by pathwise equations and by dual optimal control"};
  app.require_subcommand(1);

  std::string model_file, obs_file, out_file, out_dir = ".", threshold_file, fixtures_dir, scenario_file;
  std::uint64_t seed = 1;
  int substeps = 1, grid_n = 0, steps = 1000;
  double horizon = 1.0;
  bool zero_noise = false;

  auto* sim = app.add_subcommand("simulate", "Simulate an observation path from a model");
  sim->add_option("--model", model_file, "Model JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", out_file, "Observation path JSON")->required();
  sim->add_option("--seed", seed, "Random seed");
  sim->add_option("--T", horizon, "Horizon")->check(CLI::PositiveNumber);
  sim->add_option("--N", steps, "Observation steps")->check(CLI::PositiveNumber);
  sim->add_flag("--zero-noise", zero_noise, "Drop the observation noise");

  auto* fin = app.add_subcommand("smooth-finite", "Smooth a finite-state model");
  auto* grd = app.add_subcommand("smooth-grid", "Smooth a scalar diffusion on a grid");
  auto* lgs = app.add_subcommand("smooth-lg", "Minimum-energy estimate of a linear-Gaussian model");
  for (auto* sub : {fin, grd, lgs}) {
    sub->add_option("--model", model_file, "Model JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--obs", obs_file, "Observation path JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_file, "Solution CSV (summary goes next to it)")->required();
  }
  fin->add_option("--substeps", substeps, "Solver steps per observation interval")->check(CLI::Range(1, 10000));
  grd->add_option("--substeps", substeps, "Minimum solver steps per observation interval")->check(CLI::Range(1, 10000));
  grd->add_option("--grid-n", grid_n, "Number of grid cells (overrides the model)")->check(CLI::Range(8, 100000));

  auto* ver = app.add_subcommand("verify", "Run the verification checks over the bundled fixtures");
  ver->add_option("--fixtures", fixtures_dir, "Fixture directory")->check(CLI::ExistingDirectory);
  ver->add_option("--threshold-file", threshold_file, "JSON overriding check thresholds")->check(CLI::ExistingFile);
  ver->add_option("--out-dir", out_dir, "Directory for report.json");

  auto* plot = app.add_subcommand("plot-data", "Long-format plot table from a solution CSV");
  std::string plot_in;
  plot->add_option("input", plot_in, "Solution CSV")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", out_file, "Output CSV")->required();

  auto* run = app.add_subcommand("run", "Run a scenario file");
  std::optional<std::uint64_t> run_seed;
  std::optional<int> run_substeps, run_grid_n;
  run->add_option("scenario", scenario_file, "Scenario JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out-dir", out_dir, "Output directory");
  run->add_option("--seed", run_seed, "Override the scenario seed");
  run->add_option("--substeps", run_substeps, "Override solver substeps")->check(CLI::Range(1, 10000));
  run->add_option("--grid-n", run_grid_n, "Override grid size")->check(CLI::Range(8, 100000));
  run->add_flag("--zero-noise", zero_noise, "Drop the observation noise");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      const auto model = io::load_json(model_file);
      io::save_json(out_file, io::to_json(cli::simulate(model, horizon, steps, seed, zero_noise)));
    } else if (*fin) {
      const auto model = io::ctmc_from_json(io::load_json(model_file));
      const auto obs = io::observation_from_json(io::load_json(obs_file));
      finish(cli::solve_finite(model, obs, substeps, out_file), out_file);
    } else if (*grd) {
      auto mj = io::load_json(model_file);
      if (grid_n > 0) mj["n"] = grid_n;
      const auto model = io::diffusion_from_json(mj);
      const auto obs = io::observation_from_json(io::load_json(obs_file));
      grid::GridOptions options;
      options.substeps = substeps;
      finish(cli::solve_grid(model, obs, options, out_file), out_file);
    } else if (*lgs) {
      const auto model = io::gaussian_from_json(io::load_json(model_file));
      const auto obs = io::observation_from_json(io::load_json(obs_file));
      finish(cli::solve_lg(model, obs, out_file), out_file);
    } else if (*ver) {
      if (fixtures_dir.empty()) fixtures_dir = DUALSMOOTH_FIXTURES_DIR;
      const auto fx = verify::load_fixtures(fixtures_dir);
      const auto th = threshold_file.empty() ? verify::Thresholds{}
                                             : verify::Thresholds::from_json(io::load_json(threshold_file));
      const auto checks = verify::run_checks(fx, th);
      const auto rep = verify::report(checks);
      io::save_json(fs::path(out_dir) / "report.json", rep);
      std::cout << rep.dump(2) << '\n';
      return rep.at("pass").get<bool>() ? 0 : 2;
    } else if (*plot) {
      io::emit_plot_data(plot_in, out_file);
    } else if (*run) {
      cli::Overrides ov;
      ov.seed = run_seed;
      ov.substeps = run_substeps;
      ov.grid_n = run_grid_n;
      ov.zero_noise = zero_noise;
      return cli::run_scenario(scenario_file, out_dir, ov);
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
