#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "dualsmooth/finite_smoother.hpp"
#include "dualsmooth/gaussian_mee.hpp"
#include "dualsmooth/grid_smoother.hpp"
#include "dualsmooth/io.hpp"

namespace dualsmooth::cli {

using json = nlohmann::json;

// Command-line values that take precedence over the scenario file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> substeps;
  std::optional<int> grid_n;
  bool zero_noise = false;
};

// {"name", "model" | "model_file", "T", "N", "seed", "obs_file"?, "zero_noise"?,
//  "options": {"substeps", "grid_n"}, "thresholds": {...}}. File references are
// relative to the scenario file.
struct Scenario {
  std::string name;
  json model;
  io::ModelKind kind = io::ModelKind::Ctmc;
  double T = 1.0;
  int N = 1000;
  std::uint64_t seed = 1;
  bool zero_noise = false;
  int substeps = 1;
  std::optional<int> grid_n;
  std::optional<std::filesystem::path> obs_file;
  json thresholds = json::object();
};

Scenario load_scenario(const std::filesystem::path& path, const Overrides& overrides = {});

// Observation path simulated from any of the three model kinds.
ObservationPath simulate(const json& model, double T, int N, std::uint64_t seed, bool zero_noise);

// Solve, write the solution CSV and return the summary.
json solve_finite(const CtmcModel& model, const ObservationPath& obs, int substeps,
                  const std::filesystem::path& csv);
json solve_grid(const DiffusionModel1D& model, const ObservationPath& obs, const grid::GridOptions& options,
                const std::filesystem::path& csv);
json solve_lg(const lg::GaussianModel& model, const ObservationPath& obs, const std::filesystem::path& csv);

// Writes model.json, obs.json, sol.csv and summary.json into out_dir. Returns
// 0 on success, 2 when a scenario threshold is missed, 1 on bad input (the
// diagnostic goes to the log).
int run_scenario(const std::filesystem::path& path, const std::filesystem::path& out_dir,
                 const Overrides& overrides = {});

}  // namespace dualsmooth::cli
