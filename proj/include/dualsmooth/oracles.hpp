#pragma once

#include <cstdint>
#include <vector>

#include "dualsmooth/finite_smoother.hpp"
#include "dualsmooth/gaussian_mee.hpp"
#include "dualsmooth/models.hpp"
#include "dualsmooth/types.hpp"

// Brute-force references for the smoothers. Nothing here calls into the
// solver modules; tests compare the two sides.
namespace dualsmooth::oracles {

struct OracleConfig {
  double dt_fine = 1e-5;
  int n_mc = 10000;
  std::uint64_t seed = 1;
};

// exp(M) by scaling and squaring with a [6/6] Pade approximant.
Matrix expm(const Matrix& M);

// Left null vector of a rate matrix, normalized to a probability vector.
Vector stationary_distribution(const Matrix& A);

// Unconditioned marginals e^{t_k A^T} nu0 on a uniform grid of N steps.
Trajectory marginal_flow(const CtmcModel& model, double T, int N);

struct HmmSmoothed {
  Vector times;
  Trajectory pi;  // rows on the fine grid
  int stride = 1; // fine steps per observation interval
  // Logs of the unnormalized forward and backward vectors at the observation
  // times: log p_t and log q_t.
  Trajectory log_forward;
  Trajectory log_backward;
};

// Forward-backward pass with transition exp(A dt) and emission weights
// exp(h_i dz - h_i^2 dt / 2) on a grid of step dt_fine; z is interpolated
// linearly between samples. dt_fine must divide the observation step.
HmmSmoothed discrete_hmm_smoother(const CtmcModel& model, const ObservationPath& obs, double dt_fine);

struct GaussianSmoothed {
  Vector times;
  Trajectory filter_mean;
  std::vector<Matrix> filter_cov;
  Trajectory mean;
  std::vector<Matrix> cov;
};

// Kalman-Bucy filter followed by the continuous-time Rauch-Tung-Striebel
// smoother, both integrated with RK4 using `refine` filter steps per half
// observation interval. zdot is constant on each observation interval.
GaussianSmoothed kalman_rts(const lg::GaussianModel& model, const ObservationPath& obs, int refine = 1);

// q_t(x) e^{z_t h(x)} = exp(-x^T P_t x / 2 + b_t^T x + c_t) for the backward
// equation of the linear-Gaussian model, so lambda_t(x) is that exponent.
struct BackwardGaussian {
  Vector times;
  std::vector<Matrix> precision;
  Trajectory linear;
  Vector log_scale;

  double lambda(int k, const Vector& x) const;
};

BackwardGaussian lg_pathwise_reference(const lg::GaussianModel& model, const ObservationPath& obs,
                                       int refine = 1);

struct McEstimate {
  double estimate = 0.0;
  double stderr_ = 0.0;
};

// Monte-Carlo relative entropy of the controlled chain against the model:
// mean of log dP~/dP over simulated controlled paths, with the policy held
// at its left grid value on each step.
McEstimate mc_relative_entropy(const CtmcModel& model, const Vector& pi0, const finite::ControlPolicyF& policy,
                               int n_mc, std::uint64_t seed);

}  // namespace dualsmooth::oracles
