#include "dualsmooth/verification.hpp"

#include <chrono>
#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "dualsmooth/error.hpp"
#include "dualsmooth/finite_smoother.hpp"
#include "dualsmooth/grid_smoother.hpp"
#include "dualsmooth/io.hpp"
#include "dualsmooth/oracles.hpp"
#include "dualsmooth/rng.hpp"

namespace dualsmooth::verify {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double row_mass_error(const Trajectory& pi, double weight) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < pi.rows(); ++k) worst = std::max(worst, std::abs(pi.row(k).sum() * weight - 1.0));
  return worst;
}

finite::ControlPolicyF perturb(const CtmcModel& model, const finite::ControlPolicyF& policy, double eps, Rng& rng) {
  finite::ControlPolicyF out = policy;
  const int d = model.states();
  auto shake = [&](Matrix& u) {
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (i != j && model.A(i, j) != 0.0) u(i, j) *= std::exp(eps * rng.normal());
  };
  for (auto& u : out.nodes) shake(u);
  for (auto& u : out.midpoints) shake(u);
  return out;
}

}  // namespace

Fixtures load_fixtures(const std::filesystem::path& dir) {
  Fixtures fx;
  fx.ctmc = io::ctmc_from_json(io::load_json(dir / "ctmc_model.json"));
  fx.ctmc_obs = io::observation_from_json(io::load_json(dir / "ctmc_obs.json"));
  fx.lg = io::gaussian_from_json(io::load_json(dir / "lg_model.json"));
  fx.lg_obs = io::observation_from_json(io::load_json(dir / "lg_obs.json"));
  return fx;
}

Timed route_equivalence(const CtmcModel& model, const ObservationPath& obs) {
  const auto start = Clock::now();
  const auto sol = finite::smooth(model, obs);
  return {sol.route_equivalence_linf, since(start)};
}

Timed hmm_agreement(const CtmcModel& model, const ObservationPath& obs, double dt_fine) {
  const auto start = Clock::now();
  const auto sol = finite::smooth(model, obs);
  const auto ref = oracles::discrete_hmm_smoother(model, obs, dt_fine);
  double worst = 0.0;
  for (int k = 0; k <= obs.N; ++k)
    worst = std::max(worst, (sol.pi.row(k) - ref.pi.row(static_cast<Eigen::Index>(k) * ref.stride)).cwiseAbs().maxCoeff());
  return {worst, since(start)};
}

Optimality optimality(const CtmcModel& model, const ObservationPath& obs, int trials, double eps,
                      std::uint64_t seed) {
  const auto sol = finite::smooth(model, obs);
  const auto prior = finite::optimal_pi0(model.nu0, sol.lambda.row(0).transpose());
  Optimality out;
  out.J_opt = finite::cost_J(model, prior.pi0, sol.policy, obs);
  out.logC = prior.logC;
  out.identity_error = std::abs(out.J_opt + out.logC);
  out.min_control_gap = std::numeric_limits<double>::infinity();
  out.min_prior_gap = std::numeric_limits<double>::infinity();
  Rng rng(seed, 11);
  for (int t = 0; t < trials; ++t) {
    const auto policy = perturb(model, sol.policy, eps, rng);
    out.min_control_gap = std::min(out.min_control_gap, finite::cost_J(model, prior.pi0, policy, obs) - out.J_opt);
    ++out.control_trials;
  }
  for (int t = 0; t < trials; ++t) {
    Vector pi0 = prior.pi0;
    for (Eigen::Index i = 0; i < pi0.size(); ++i) pi0[i] *= std::exp(eps * rng.normal());
    pi0 /= pi0.sum();
    out.min_prior_gap = std::min(out.min_prior_gap, finite::cost_J(model, pi0, sol.policy, obs) - out.J_opt);
    ++out.prior_trials;
  }
  return out;
}

double unconditioned_reduction(const CtmcModel& model, double T, int N) {
  CtmcModel blind = model;
  blind.h.setZero();
  ObservationPath obs{T, N, Vector::Zero(N + 1)};
  const auto sol = finite::smooth(blind, obs);
  const auto ref = oracles::marginal_flow(blind, T, N);
  const Trajectory forward = sol.mu.array().exp();
  double worst = (forward - ref).cwiseAbs().maxCoeff();
  worst = std::max(worst, (sol.pi - ref).cwiseAbs().maxCoeff());
  worst = std::max(worst, (sol.pi_controlled - ref).cwiseAbs().maxCoeff());
  worst = std::max(worst, sol.lambda.cwiseAbs().maxCoeff());
  return worst;
}

LgCoincidence lg_coincidence(const lg::GaussianModel& model, const ObservationPath& obs) {
  const auto mee = lg::solve_min_energy(model, obs);
  const auto rts = oracles::kalman_rts(model, obs, 4);
  LgCoincidence out;
  out.mean_error = (mee.m - rts.mean).cwiseAbs().maxCoeff();
  const auto forms = lg::cost_ibp_identity(model, mee.m, mee.u, obs);
  out.form_a = forms.form_a;
  out.form_b = forms.form_b;
  out.ibp_gap = std::abs(forms.form_a - forms.form_b);
  return out;
}

GridStudy grid_study(const lg::GaussianModel& model, const ObservationPath& obs, const std::vector<int>& ns,
                     double half_width_in_std) {
  if (ns.size() < 2) throw Error(ErrorKind::InvalidArgument, "grid study needs at least two levels");
  const auto rts = oracles::kalman_rts(model, obs, 4);
  GridStudy study;
  for (int n : ns) {
    const auto start = Clock::now();
    const auto embedded = lg::embed_scalar(model, half_width_in_std, n);
    const auto sol = grid::smooth(embedded, obs);
    const double dx = embedded.dx();
    const Vector mean = grid::density_mean(sol.pi, sol.x, dx);
    GridLevel level;
    level.n = n;
    level.dx = dx;
    level.mean_error = (mean - rts.mean.col(0)).cwiseAbs().maxCoeff();
    level.hjb_interior = sol.hjb_residual_max;
    level.normalizer_spread = sol.normalizer_spread;
    level.mass_error = std::max({row_mass_error(sol.pi, dx), row_mass_error(sol.pi_controlled, dx), sol.mass_drift});
    level.seconds = since(start);
    study.levels.push_back(level);
  }
  // Least-squares slope of log(error) against log(dx).
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(study.levels.size());
  for (const auto& l : study.levels) {
    const double x = std::log(l.dx), y = std::log(l.mean_error);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  study.order = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  study.min_order = std::numeric_limits<double>::infinity();
  study.hjb_monotone = true;
  for (std::size_t i = 1; i < study.levels.size(); ++i) {
    const auto& a = study.levels[i - 1];
    const auto& b = study.levels[i];
    study.min_order = std::min(study.min_order, std::log(a.mean_error / b.mean_error) / std::log(a.dx / b.dx));
    if (!(b.hjb_interior < a.hjb_interior)) study.hjb_monotone = false;
  }
  return study;
}

RelativeEntropy relative_entropy(const CtmcModel& model, const ObservationPath& obs, int n_mc,
                                 std::uint64_t seed) {
  const auto sol = finite::smooth(model, obs);
  const auto prior = finite::optimal_pi0(model.nu0, sol.lambda.row(0).transpose());
  RelativeEntropy out;
  out.closed_form = finite::path_relative_entropy(model, prior.pi0, sol.policy);
  const auto mc = oracles::mc_relative_entropy(model, prior.pi0, sol.policy, n_mc, seed);
  out.mc_estimate = mc.estimate;
  out.mc_stderr = mc.stderr_;
  out.z_score = std::abs(mc.estimate - out.closed_form) / mc.stderr_;
  return out;
}

Conservation conservation(const Fixtures& fx, int grid_n, double half_width_in_std) {
  Conservation out;
  const auto fsol = finite::smooth(fx.ctmc, fx.ctmc_obs);
  out.finite_mass = std::max({row_mass_error(fsol.pi, 1.0), row_mass_error(fsol.pi_controlled, 1.0), fsol.mass_drift});
  out.finite_normalizer_spread = fsol.normalizer_spread;
  const auto embedded = lg::embed_scalar(fx.lg, half_width_in_std, grid_n);
  const auto gsol = grid::smooth(embedded, fx.lg_obs);
  const double dx = embedded.dx();
  out.grid_mass = std::max({row_mass_error(gsol.pi, dx), row_mass_error(gsol.pi_controlled, dx), gsol.mass_drift});
  out.grid_normalizer_spread = gsol.normalizer_spread;
  return out;
}

Thresholds Thresholds::from_json(const nlohmann::json& j) {
  Thresholds th;
  if (!j.is_object()) throw Error(ErrorKind::MalformedInput, "thresholds must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto num = [&](double& field) {
      if (!value.is_number()) throw Error(ErrorKind::MalformedInput, fmt::format("threshold \"{}\" must be a number", key));
      field = value.get<double>();
    };
    auto integer = [&](int& field) {
      if (!value.is_number_integer() || value.get<long>() < 1)
        throw Error(ErrorKind::MalformedInput, fmt::format("threshold \"{}\" must be a positive integer", key));
      field = value.get<int>();
    };
    if (key == "route_equivalence") num(th.route_equivalence);
    else if (key == "hmm_agreement") num(th.hmm_agreement);
    else if (key == "hmm_dt_fine") num(th.hmm_dt_fine);
    else if (key == "optimality_trials") integer(th.optimality_trials);
    else if (key == "optimality_eps") num(th.optimality_eps);
    else if (key == "optimality_identity") num(th.optimality_identity);
    else if (key == "unconditioned") num(th.unconditioned);
    else if (key == "lg_mean") num(th.lg_mean);
    else if (key == "lg_ibp") num(th.lg_ibp);
    else if (key == "grid_mean") num(th.grid_mean);
    else if (key == "grid_order") num(th.grid_order);
    else if (key == "hjb_finest") num(th.hjb_finest);
    else if (key == "mc_z") num(th.mc_z);
    else if (key == "mc_paths") integer(th.mc_paths);
    else if (key == "mass") num(th.mass);
    else if (key == "normalizer_finite") num(th.normalizer_finite);
    else if (key == "normalizer_grid") num(th.normalizer_grid);
    else if (key == "grid_half_width") num(th.grid_half_width);
    else if (key == "seed") {
      if (!value.is_number_unsigned()) throw Error(ErrorKind::MalformedInput, "threshold \"seed\" must be unsigned");
      th.seed = value.get<std::uint64_t>();
    } else if (key == "grid_levels") {
      if (!value.is_array() || value.size() < 2) throw Error(ErrorKind::MalformedInput, "\"grid_levels\" needs two or more sizes");
      th.grid_levels = value.get<std::vector<int>>();
    } else {
      throw Error(ErrorKind::MalformedInput, fmt::format("unknown threshold \"{}\"", key));
    }
  }
  return th;
}

std::vector<Check> run_checks(const Fixtures& fx, const Thresholds& th) {
  std::vector<Check> checks;
  auto upper = [&](std::string name, double measured, double threshold, double seconds = 0.0) {
    checks.push_back({std::move(name), measured, threshold, false, measured <= threshold, seconds});
  };
  auto lower = [&](std::string name, double measured, double threshold, double seconds = 0.0) {
    checks.push_back({std::move(name), measured, threshold, true, measured >= threshold, seconds});
  };

  const auto route = route_equivalence(fx.ctmc, fx.ctmc_obs);
  upper("finite_route_equivalence", route.value, th.route_equivalence, route.seconds);

  const auto hmm = hmm_agreement(fx.ctmc, fx.ctmc_obs, th.hmm_dt_fine);
  upper("finite_hmm_agreement", hmm.value, th.hmm_agreement, hmm.seconds);

  auto start = Clock::now();
  const auto opt = optimality(fx.ctmc, fx.ctmc_obs, th.optimality_trials, th.optimality_eps, th.seed);
  const double opt_s = since(start);
  upper("finite_cost_identity", opt.identity_error, th.optimality_identity, opt_s);
  lower("finite_control_perturbation_gap", opt.min_control_gap, 0.0);
  lower("finite_prior_perturbation_gap", opt.min_prior_gap, 0.0);

  start = Clock::now();
  const double blind = unconditioned_reduction(fx.ctmc, fx.ctmc_obs.T, fx.ctmc_obs.N);
  upper("finite_unconditioned_reduction", blind, th.unconditioned, since(start));

  start = Clock::now();
  const auto lgc = lg_coincidence(fx.lg, fx.lg_obs);
  const double lgc_s = since(start);
  upper("lg_mee_rts_mean", lgc.mean_error, th.lg_mean, lgc_s);
  upper("lg_ibp_identity", lgc.ibp_gap, th.lg_ibp);

  start = Clock::now();
  const auto study = grid_study(fx.lg, fx.lg_obs, th.grid_levels, th.grid_half_width);
  const double study_s = since(start);
  upper("grid_rts_mean", study.levels.back().mean_error, th.grid_mean, study_s);
  lower("grid_convergence_order", study.order, th.grid_order);
  lower("hjb_residual_monotone", study.hjb_monotone ? 1.0 : 0.0, 1.0);
  upper("hjb_residual_finest", study.levels.back().hjb_interior, th.hjb_finest);

  start = Clock::now();
  const auto re = relative_entropy(fx.ctmc, fx.ctmc_obs, th.mc_paths, th.seed);
  const double re_s = since(start);
  upper("relative_entropy_z_score", re.z_score, th.mc_z, re_s);

  start = Clock::now();
  const auto cons = conservation(fx, th.grid_levels.back(), th.grid_half_width);
  double grid_mass = cons.grid_mass;
  double grid_spread = cons.grid_normalizer_spread;
  for (const auto& l : study.levels) {
    grid_mass = std::max(grid_mass, l.mass_error);
    grid_spread = std::max(grid_spread, l.normalizer_spread);
  }
  const double cons_s = since(start);
  upper("mass_conservation", std::max(cons.finite_mass, grid_mass), th.mass, cons_s);
  upper("normalizer_constant_finite", cons.finite_normalizer_spread, th.normalizer_finite);
  upper("normalizer_constant_grid", grid_spread, th.normalizer_grid);
  return checks;
}

nlohmann::json report(const std::vector<Check>& checks) {
  nlohmann::json list = nlohmann::json::array();
  bool all = true;
  for (const auto& c : checks) {
    all = all && c.pass;
    list.push_back({{"name", c.name},
                    {"measured", c.measured},
                    {"threshold", c.threshold},
                    {"comparison", c.at_least ? ">=" : "<="},
                    {"pass", c.pass},
                    {"seconds", c.seconds}});
  }
  return {{"checks", list}, {"pass", all}};
}

}  // namespace dualsmooth::verify
