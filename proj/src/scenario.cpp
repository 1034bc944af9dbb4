#include "dualsmooth/scenario.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dualsmooth/error.hpp"
#include "dualsmooth/oracles.hpp"

namespace dualsmooth::cli {

namespace {

[[noreturn]] void malformed(const std::string& what) { throw Error(ErrorKind::MalformedInput, what); }

DiffusionModel1D diffusion_with(const json& j, std::optional<int> grid_n) {
  json copy = j;
  if (grid_n) copy["n"] = *grid_n;
  return io::diffusion_from_json(copy);
}

struct Limit {
  const char* summary_key;
  const char* threshold_key;
  double fallback;
};

// Checks applied to each summary; scenario thresholds replace the fallbacks
// and a null threshold disables the check.
const std::vector<Limit>& limits(io::ModelKind kind) {
  static const std::vector<Limit> finite{{"route_equivalence_linf", "route_equivalence", 1e-6},
                                         {"normalizer_spread", "normalizer", 1e-6},
                                         {"cost_identity_error", "cost_identity", 1e-6},
                                         {"mass_error", "mass", 1e-8}};
  static const std::vector<Limit> grid{{"normalizer_spread", "normalizer", 1e-4},
                                       {"mass_error", "mass", 1e-8},
                                       {"route_equivalence_linf", "route_equivalence", -1.0},
                                       {"hjb_residual_max", "hjb_residual", -1.0}};
  static const std::vector<Limit> gaussian{{"rts_mean_error", "rts_mean", 1e-6}, {"ibp_gap", "ibp", 1e-6}};
  switch (kind) {
    case io::ModelKind::Ctmc: return finite;
    case io::ModelKind::Diffusion: return grid;
    default: return gaussian;
  }
}

double mass_error(const Trajectory& pi, double weight) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < pi.rows(); ++k) worst = std::max(worst, std::abs(pi.row(k).sum() * weight - 1.0));
  return worst;
}

}  // namespace

Scenario load_scenario(const std::filesystem::path& path, const Overrides& overrides) {
  const json j = io::load_json(path);
  if (!j.is_object()) malformed("scenario must be a JSON object");
  const auto base = path.parent_path();
  Scenario s;
  s.name = j.value("name", path.stem().string());
  if (j.contains("model")) {
    s.model = j.at("model");
  } else if (j.contains("model_file")) {
    const auto file = base / j.at("model_file").get<std::string>();
    if (!std::filesystem::exists(file)) malformed(fmt::format("model file {} not found", file.string()));
    s.model = io::load_json(file);
  } else {
    malformed("scenario needs \"model\" or \"model_file\"");
  }
  s.kind = io::model_kind(s.model);
  if (j.contains("T")) s.T = j.at("T").get<double>();
  if (j.contains("N")) s.N = j.at("N").get<int>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  s.zero_noise = j.value("zero_noise", false);
  if (j.contains("obs_file")) {
    s.obs_file = base / j.at("obs_file").get<std::string>();
    if (!std::filesystem::exists(*s.obs_file)) malformed(fmt::format("observation file {} not found", s.obs_file->string()));
  }
  if (j.contains("options")) {
    const auto& opt = j.at("options");
    s.substeps = opt.value("substeps", 1);
    if (opt.contains("grid_n")) s.grid_n = opt.at("grid_n").get<int>();
  }
  if (j.contains("thresholds")) s.thresholds = j.at("thresholds");

  if (overrides.seed) s.seed = *overrides.seed;
  if (overrides.substeps) s.substeps = *overrides.substeps;
  if (overrides.grid_n) s.grid_n = *overrides.grid_n;
  s.zero_noise = s.zero_noise || overrides.zero_noise;

  if (!(s.T > 0.0)) malformed("\"T\" must be positive");
  if (s.N < 1 || s.N > 10'000'000) malformed("\"N\" must lie in [1, 1e7]");
  if (s.substeps < 1 || s.substeps > 10'000) malformed("\"substeps\" must lie in [1, 1e4]");
  if (s.grid_n && (*s.grid_n < 8 || *s.grid_n > 100'000)) malformed("\"grid_n\" must lie in [8, 1e5]");
  return s;
}

ObservationPath simulate(const json& model, double T, int N, std::uint64_t seed, bool zero_noise) {
  switch (io::model_kind(model)) {
    case io::ModelKind::Ctmc: {
      const auto m = io::ctmc_from_json(model);
      return simulate_observations(simulate_ctmc(m, T, seed), m.h, N, seed, zero_noise);
    }
    case io::ModelKind::Diffusion: {
      const auto m = io::diffusion_from_json(model);
      return simulate_observations(simulate_diffusion(m, T, N, seed), m.h, N, seed, zero_noise);
    }
    case io::ModelKind::Gaussian:
      return lg::simulate_observations(io::gaussian_from_json(model), T, N, seed, zero_noise);
  }
  malformed("unknown model kind");
}

json solve_finite(const CtmcModel& model, const ObservationPath& obs, int substeps, const std::filesystem::path& csv) {
  const auto sol = finite::smooth(model, obs, {substeps});
  io::write_solution_csv(csv, sol);
  return {{"kind", "ctmc"},
          {"logC", sol.logC},
          {"J_opt", sol.J_opt},
          {"route_equivalence_linf", sol.route_equivalence_linf},
          {"normalizer_spread", sol.normalizer_spread},
          {"cost_identity_error", std::abs(sol.J_opt + sol.logC)},
          {"mass_drift", sol.mass_drift},
          {"mass_error", std::max({mass_error(sol.pi, 1.0), mass_error(sol.pi_controlled, 1.0), sol.mass_drift})},
          {"states", model.states()},
          {"N", obs.N}};
}

json solve_grid(const DiffusionModel1D& model, const ObservationPath& obs, const grid::GridOptions& options,
                const std::filesystem::path& csv) {
  const auto sol = grid::smooth(model, obs, options);
  io::write_solution_csv(csv, sol);
  const double dx = model.dx();
  return {{"kind", "diffusion"},
          {"logC", sol.logC},
          {"J_opt", sol.J_opt},
          {"hjb_residual_max", sol.hjb_residual_max},
          {"route_equivalence_linf", sol.route_equivalence_linf},
          {"mass_drift", sol.mass_drift},
          {"mass_error", std::max({mass_error(sol.pi, dx), mass_error(sol.pi_controlled, dx), sol.mass_drift})},
          {"normalizer_spread", sol.normalizer_spread},
          {"substeps", sol.substeps},
          {"n", model.n},
          {"N", obs.N}};
}

json solve_lg(const lg::GaussianModel& model, const ObservationPath& obs, const std::filesystem::path& csv) {
  const auto sol = lg::solve_min_energy(model, obs);
  io::write_solution_csv(csv, sol);
  const auto rts = oracles::kalman_rts(model, obs, 4);
  const auto forms = lg::cost_ibp_identity(model, sol.m, sol.u, obs);
  return {{"kind", "lg"},
          {"J_opt", sol.J},
          {"rts_mean_error", (sol.m - rts.mean).cwiseAbs().maxCoeff()},
          {"ibp_gap", std::abs(forms.form_a - forms.form_b)},
          {"dim", model.dim()},
          {"N", obs.N}};
}

int run_scenario(const std::filesystem::path& path, const std::filesystem::path& out_dir, const Overrides& overrides) {
  json summary;
  Scenario s;
  try {
    s = load_scenario(path, overrides);
    std::filesystem::create_directories(out_dir);
    ObservationPath obs = s.obs_file ? io::observation_from_json(io::load_json(*s.obs_file))
                                     : simulate(s.model, s.T, s.N, s.seed, s.zero_noise);
    io::save_json(out_dir / "obs.json", io::to_json(obs));
    const auto csv = out_dir / "sol.csv";
    switch (s.kind) {
      case io::ModelKind::Ctmc: {
        const auto model = io::ctmc_from_json(s.model);
        io::save_json(out_dir / "model.json", io::to_json(model));
        summary = solve_finite(model, obs, s.substeps, csv);
        break;
      }
      case io::ModelKind::Diffusion: {
        const auto model = diffusion_with(s.model, s.grid_n);
        io::save_json(out_dir / "model.json", io::to_json(model));
        grid::GridOptions options;
        options.substeps = s.substeps;
        summary = solve_grid(model, obs, options, csv);
        break;
      }
      case io::ModelKind::Gaussian: {
        const auto model = io::gaussian_from_json(s.model);
        io::save_json(out_dir / "model.json", io::to_json(model));
        summary = solve_lg(model, obs, csv);
        break;
      }
    }
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", path.string(), e.what());
    return 1;
  }

  json checks = json::array();
  bool all = true;
  for (const auto& limit : limits(s.kind)) {
    double threshold = limit.fallback;
    if (s.thresholds.contains(limit.threshold_key)) {
      const auto& t = s.thresholds.at(limit.threshold_key);
      threshold = t.is_number() ? t.get<double>() : -1.0;
    }
    if (threshold < 0.0) continue;
    const double measured = summary.at(limit.summary_key).get<double>();
    const bool pass = measured <= threshold;
    all = all && pass;
    checks.push_back({{"name", limit.summary_key}, {"measured", measured}, {"threshold", threshold}, {"pass", pass}});
    if (!pass) spdlog::error("{}: {} = {:.3e} exceeds {:.3e}", s.name, limit.summary_key, measured, threshold);
  }
  summary["scenario"] = s.name;
  summary["seed"] = s.seed;
  summary["checks"] = checks;
  summary["pass"] = all;
  io::save_json(out_dir / "summary.json", summary);
  return all ? 0 : 2;
}

}  // namespace dualsmooth::cli
