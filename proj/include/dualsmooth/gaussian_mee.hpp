#pragma once

#include <cstdint>
#include <vector>

#include "dualsmooth/models.hpp"
#include "dualsmooth/types.hpp"

namespace dualsmooth::lg {

// Linear-Gaussian model: drift a(x) = A^T x, observation h(x) = H^T x,
// constant noise matrix sigma (d x p), Gaussian prior N(m0, Sigma0).
struct GaussianModel {
  Matrix A;
  Vector H;
  Matrix sigma;
  Vector m0;
  Matrix Sigma0;

  int dim() const { return static_cast<int>(A.rows()); }
  int noise_dim() const { return static_cast<int>(sigma.cols()); }
  Matrix Q() const { return sigma * sigma.transpose(); }
};

void validate(const GaussianModel& model);

// dV/dt = A^T V + V A + sigma sigma^T from V_0 = Sigma0; (N+1) covariances.
std::vector<Matrix> propagate_variance(const GaussianModel& model, double T, int N);

struct MeeSolution {
  Vector timegrid;
  Trajectory m;  // (N+1) x d
  Trajectory u;  // (N+1) x p
  std::vector<Matrix> V;
  double J = 0.0;
};

// Minimum-energy estimate: minimizes
//   (m0 - mbar)^T Sigma0^{-1} (m0 - mbar) / 2
//     + int |u|^2/2 + |H^T m|^2/2 + z H^T dm/dt dt - z_T H^T m_T
// over (m0, u) subject to dm/dt = A^T m + sigma u, with z piecewise linear.
// The costate p = S m + g of the equivalent least-squares form is swept
// backward through its Riccati equation; then u = -sigma^T p and the optimal
// m0 solves (Sigma0^{-1} + S_0) m0 = Sigma0^{-1} mbar - g_0.
MeeSolution solve_min_energy(const GaussianModel& model, const ObservationPath& obs);

struct CostForms {
  double form_a = 0.0;  // as minimized above
  double form_b = 0.0;  // after integration by parts: |zdot - H^T m|^2/2 - |zdot|^2/2
};

// Both forms for a trajectory sampled on the observation grid. m and z are
// read as piecewise-linear interpolants (zdot = dz/dt per interval, dm/dt
// likewise); the |u|^2 and |H^T m|^2 terms use the trapezoid rule.
CostForms cost_ibp_identity(const GaussianModel& model, const Trajectory& m, const Trajectory& u,
                            const ObservationPath& obs);

// Mean trajectory driven by a control sampled at the nodes (midpoint values
// are node averages).
Trajectory integrate_mean(const GaussianModel& model, const Vector& m0, const Trajectory& u,
                          const ObservationPath& obs);

// Euler-Maruyama sample of the signal (stream 2) and its observation path
// dz = H^T x dt + dw (stream 3). With zero_noise the observation increment
// carries no Wiener term.
ObservationPath simulate_observations(const GaussianModel& model, double T, int N, std::uint64_t seed,
                                      bool zero_noise = false);

// Scalar model as a grid diffusion on [m0 - k s, m0 + k s], s the prior std.
DiffusionModel1D embed_scalar(const GaussianModel& model, double half_width_in_std, int n);

}  // namespace dualsmooth::lg
