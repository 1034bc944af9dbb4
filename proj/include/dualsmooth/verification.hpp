#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualsmooth/gaussian_mee.hpp"
#include "dualsmooth/models.hpp"

// Measurements behind the verification report. Each function returns raw
// numbers; comparison against thresholds happens in run_checks (and, with its
// own pinned constants, in the acceptance tests).
namespace dualsmooth::verify {

struct Fixtures {
  CtmcModel ctmc;
  ObservationPath ctmc_obs;
  lg::GaussianModel lg;
  ObservationPath lg_obs;
};

// Reads ctmc_model.json, ctmc_obs.json, lg_model.json and lg_obs.json.
Fixtures load_fixtures(const std::filesystem::path& dir);

struct Timed {
  double value = 0.0;
  double seconds = 0.0;
};

// L-infinity distance between normalize(e^{mu+lambda}) and the controlled flow.
Timed route_equivalence(const CtmcModel& model, const ObservationPath& obs);

// L-infinity distance between the smoothed marginals and a fine-grid HMM
// forward-backward pass, compared at the observation times.
Timed hmm_agreement(const CtmcModel& model, const ObservationPath& obs, double dt_fine);

struct Optimality {
  double J_opt = 0.0;
  double logC = 0.0;
  double identity_error = 0.0;   // |J_opt + logC|
  double min_control_gap = 0.0;  // min over perturbations of J - J_opt
  double min_prior_gap = 0.0;
  int control_trials = 0;
  int prior_trials = 0;
};

// Multiplicative perturbations u_ij <- u_ij exp(eps g_ij) with g standard
// normal per (time node, i, j) and pi0 <- normalize(pi0 exp(eps g)).
Optimality optimality(const CtmcModel& model, const ObservationPath& obs, int trials, double eps,
                      std::uint64_t seed);

// h = 0: largest deviation of every route (mu, normalize(e^{mu+lambda}),
// controlled flow) from the matrix-exponential marginals, plus |lambda|.
double unconditioned_reduction(const CtmcModel& model, double T, int N);

struct LgCoincidence {
  double mean_error = 0.0;  // max |m_mee - m_rts|
  double form_a = 0.0;
  double form_b = 0.0;
  double ibp_gap = 0.0;
};

LgCoincidence lg_coincidence(const lg::GaussianModel& model, const ObservationPath& obs);

struct GridLevel {
  int n = 0;
  double dx = 0.0;
  double mean_error = 0.0;    // max over t of |grid mean - RTS mean|
  double hjb_interior = 0.0;  // max interior HJB residual
  double normalizer_spread = 0.0;
  double mass_error = 0.0;
  double seconds = 0.0;
};

struct GridStudy {
  std::vector<GridLevel> levels;
  double order = 0.0;      // least-squares slope of log error against log dx
  double min_order = 0.0;  // smallest order between consecutive levels
  bool hjb_monotone = false;
};

GridStudy grid_study(const lg::GaussianModel& model, const ObservationPath& obs, const std::vector<int>& ns,
                     double half_width_in_std);

struct RelativeEntropy {
  double closed_form = 0.0;
  double mc_estimate = 0.0;
  double mc_stderr = 0.0;
  double z_score = 0.0;
};

RelativeEntropy relative_entropy(const CtmcModel& model, const ObservationPath& obs, int n_mc,
                                 std::uint64_t seed);

struct Conservation {
  double finite_mass = 0.0;  // reported pi and the raw controlled flow
  double finite_normalizer_spread = 0.0;
  double grid_mass = 0.0;
  double grid_normalizer_spread = 0.0;
};

Conservation conservation(const Fixtures& fx, int grid_n, double half_width_in_std);

struct Thresholds {
  double route_equivalence = 1e-6;
  double hmm_agreement = 1e-3;
  double hmm_dt_fine = 1e-5;
  int optimality_trials = 100;
  double optimality_eps = 0.05;
  double optimality_identity = 1e-6;
  double unconditioned = 1e-8;
  double lg_mean = 1e-6;
  double lg_ibp = 1e-6;
  double grid_mean = 2e-2;
  double grid_order = 1.7;
  double hjb_finest = 1e-2;
  double mc_z = 3.0;
  int mc_paths = 10000;
  double mass = 1e-8;
  double normalizer_finite = 1e-6;
  double normalizer_grid = 1e-4;
  std::vector<int> grid_levels{100, 200, 400};
  double grid_half_width = 6.0;
  std::uint64_t seed = 1;

  // Fields present in `j` override the defaults; unknown keys are rejected.
  static Thresholds from_json(const nlohmann::json& j);
};

struct Check {
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  bool at_least = false;  // pass when measured >= threshold instead of <=
  bool pass = false;
  double seconds = 0.0;
};

std::vector<Check> run_checks(const Fixtures& fx, const Thresholds& th);

nlohmann::json report(const std::vector<Check>& checks);

}  // namespace dualsmooth::verify
