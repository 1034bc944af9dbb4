#pragma once

#include <utility>
#include <vector>

#include "dualsmooth/models.hpp"
#include "dualsmooth/types.hpp"

namespace dualsmooth::finite {

// Time-indexed jump-rate multipliers for the controlled chain. `nodes[k]` is
// the control at t_k; `midpoints[k]` the control at t_k + dt/2, which the
// fourth-order stepper needs. Entries on the diagonal and wherever A[i][j] = 0
// are exactly 1.
struct ControlPolicyF {
  double dt = 0.0;
  std::vector<Matrix> nodes;
  std::vector<Matrix> midpoints;

  int steps() const { return static_cast<int>(nodes.size()) - 1; }
  // Control at fraction s in {0, 0.5, 1} of step k.
  const Matrix& at(int k, double s) const;
};

struct SmoothOptions {
  // Each observation interval is split into this many solver steps (z is
  // interpolated linearly). Outputs stay on the observation grid.
  int substeps = 1;
};

struct SmoothingSolutionF {
  Vector timegrid;
  Trajectory mu;
  Trajectory lambda;
  Trajectory pi;                // normalize(e^{mu + lambda})
  Trajectory pi_controlled;     // controlled forward flow under (pi0*, u*)
  Vector log_normalizer;        // log sum_i e^{mu_k[i] + lambda_k[i]}, per k
  double logC = 0.0;
  double J_opt = 0.0;
  double route_equivalence_linf = 0.0;
  double normalizer_spread = 0.0;  // max_k |log_normalizer[k] - logC|
  double mass_drift = 0.0;         // largest per-step renormalization of pi_controlled
  ControlPolicyF policy;           // on the solver grid (substeps per observation interval)
};

// [A~(v)]_ij = A_ij v_ij off the diagonal, rows summing to zero.
Matrix controlled_generator(const Matrix& A, const Matrix& v);

// [C(v)]_i = sum_j A_ij v_ij (log v_ij - 1), summed over every j.
Vector control_cost(const Matrix& A, const Matrix& v);

// Backward variable lambda on the path grid, from lambda_N = z_N h.
Trajectory integrate_lambda_backward(const CtmcModel& model, const ObservationPath& obs);

// Forward variable mu on the path grid, from mu_0 = log nu0. Requires nu0 > 0.
Trajectory integrate_mu_forward(const CtmcModel& model, const ObservationPath& obs);

struct OptimalPrior {
  Vector pi0;
  double logC = 0.0;
};

// pi0 = nu0 e^{lambda0} / C with C = nu0^T e^{lambda0}.
OptimalPrior optimal_pi0(const Vector& nu0, const Vector& lambda0);

// u_ij = exp(w_j - w_i) with w = lambda - z h; midpoint values come from a
// cubic Hermite interpolant of lambda built from the backward equation.
ControlPolicyF optimal_control(const CtmcModel& model, const ObservationPath& obs,
                               const Trajectory& lambda);

struct ControlledFlow {
  Trajectory pi;
  double max_drift = 0.0;  // largest |1 - sum(pi)| before per-step renormalization
};

// dpi/dt = A~(u_t)^T pi_t.
ControlledFlow integrate_pi_forward(const CtmcModel& model, const ControlPolicyF& policy,
                                    const Vector& pi0);

struct Smoothed {
  Trajectory pi;
  Vector log_normalizer;
  double logC = 0.0;
};

Smoothed smoothing_distribution(const Trajectory& mu, const Trajectory& lambda);

// D(pi0 || nu0) in nats; +inf if pi0 puts mass where nu0 has none.
double kl_divergence(const Vector& pi0, const Vector& nu0);

// J = D(pi0||nu0) - z_T pi_T^T h + int_0^T pi^T (C(u) + h^2/2) + z pi^T (A~(u) h) dt.
// The running cost is integrated with the same fourth-order stages as pi.
double cost_J(const CtmcModel& model, const Vector& pi0, const ControlPolicyF& policy,
              const ObservationPath& obs);

// D(pi0||nu0) + int_0^T pi_t^T C(u_t) dt along the flow generated by the policy:
// the relative entropy of the controlled path law against the model.
double path_relative_entropy(const CtmcModel& model, const Vector& pi0, const ControlPolicyF& policy);

// Full pipeline: both routes, the optimal policy and the diagnostics.
SmoothingSolutionF smooth(const CtmcModel& model, const ObservationPath& obs,
                          const SmoothOptions& options = {});

}  // namespace dualsmooth::finite
