#pragma once

#include <vector>

#include "dualsmooth/models.hpp"
#include "dualsmooth/types.hpp"

namespace dualsmooth::grid {

// Three-band matrix: (M f)_i = lower_i f_{i-1} + diag_i f_i + upper_i f_{i+1}.
// lower_0 and upper_{n-1} are zero.
struct Tridiagonal {
  Vector lower;
  Vector diag;
  Vector upper;

  Eigen::Index size() const { return diag.size(); }
  Vector apply(const Vector& f) const;
  Tridiagonal transpose() const;
  Matrix dense() const;
  // (M e^{w})_i e^{-w_i}, computed from neighbour differences of w.
  Vector tilted_apply(const Vector& w) const;
};

// Finite-difference generator of a diffusion on a cell-centred grid, built as
// the rate matrix of a nearest-neighbour jump process: central differences
// for drift wherever they keep both jump rates nonnegative (|b| dx <= sigma^2),
// upwinding otherwise, and no jumps out of the domain. Rows of `generator`
// sum to zero; `adjoint` is its transpose, so its columns sum to zero and it
// conserves mass with zero-flux boundaries.
struct GridOperators {
  Vector x;
  double dx = 0.0;
  Vector drift;
  Vector sigma;
  Tridiagonal generator;
  Tridiagonal adjoint;
  double cell_peclet = 0.0;  // max |a| dx / sigma^2
  long upwind_cells = 0;
};

GridOperators build_grid_operators(const DiffusionModel1D& model);

// Generator with drift a + sigma * control (per cell), same scheme.
Tridiagonal controlled_generator(const GridOperators& ops, const Vector& control);

struct GridOptions {
  int substeps = 1;        // minimum solver steps per observation interval
  double stability = 0.4;  // dt_internal <= stability * dx^2 / max sigma^2
};

// Observation path refined so the explicit stepper is stable on `ops`.
int stable_substeps(const GridOperators& ops, const ObservationPath& obs, const GridOptions& options);

// Backward variable on the path grid (use a refined path for stiff grids).
Trajectory integrate_lambda_backward_pde(const DiffusionModel1D& model, const GridOperators& ops,
                                         const ObservationPath& obs);

// Forward variable on the path grid, from mu_0 = log nu0.
Trajectory integrate_mu_forward_pde(const DiffusionModel1D& model, const GridOperators& ops,
                                    const ObservationPath& obs);

// Control field sigma * d/dx (lambda - z h) at nodes and interval midpoints.
struct ControlField {
  double dt = 0.0;
  Trajectory nodes;      // (N+1) x n
  Trajectory midpoints;  // N x n

  int steps() const { return static_cast<int>(nodes.rows()) - 1; }
};

// Central differences inside, second-order one-sided at the two ends.
Vector gradient(const Vector& f, double dx);

ControlField optimal_control_field(const DiffusionModel1D& model, const GridOperators& ops,
                                   const ObservationPath& obs, const Trajectory& lambda);

struct TransportResult {
  Trajectory pi;
  double max_drift = 0.0;
};

// Controlled Fokker-Planck flow; pi is a density (sum(pi) * dx = 1).
TransportResult integrate_pi_forward_pde(const DiffusionModel1D& model, const GridOperators& ops,
                                         const ControlField& control, const Vector& pi0);

struct OptimalDensity {
  Vector pi0;
  double logC = 0.0;
};

OptimalDensity optimal_pi0_grid(const Vector& nu0, const Vector& lambda0, double dx);

struct SmoothedDensity {
  Trajectory pi;
  Vector log_normalizer;  // log sum_j e^{mu+lambda} dx, per time
  double logC = 0.0;
};

SmoothedDensity smoothing_distribution(const Trajectory& mu, const Trajectory& lambda, double dx);

// Residual of the dynamic-programming equation at V = -lambda,
//   -dV/dt - A(V + z h) - h^2/2 + |sigma d/dx (V + z h)|^2 / 2,
// evaluated at the midpoint of each observation interval (N x n): the time
// derivative is the centred difference across the interval and the spatial
// terms use the mean of the end values.
Trajectory hjb_residual(const DiffusionModel1D& model, const GridOperators& ops, const ObservationPath& obs,
                        const Trajectory& lambda);

// Largest |value| over cells whose centre lies in the middle `fraction` of
// the domain.
double interior_max(const Trajectory& field, const GridOperators& ops, double fraction = 0.5);

// J = D(pi0||nu0) - z_T <pi_T, h> + int <pi, |u|^2/2 + h^2/2> + z <pi, A~(u) h> dt,
// with A~(u) h taken from the controlled generator.
double cost_J(const DiffusionModel1D& model, const GridOperators& ops, const Vector& pi0,
              const ControlField& control, const ObservationPath& obs);

struct SmoothingSolutionG {
  Vector timegrid;
  Vector x;
  Trajectory mu;
  Trajectory lambda;
  Trajectory pi;             // normalize(e^{mu + lambda})
  Trajectory pi_controlled;  // controlled transport under (pi0*, u*)
  Trajectory u;
  Vector log_normalizer;
  double logC = 0.0;
  double J_opt = 0.0;
  double route_equivalence_linf = 0.0;  // interior, middle half of the domain
  double normalizer_spread = 0.0;
  double mass_drift = 0.0;
  double hjb_residual_max = 0.0;  // interior, middle half of the domain
  int substeps = 1;
};

SmoothingSolutionG smooth(const DiffusionModel1D& model, const ObservationPath& obs,
                          const GridOptions& options = {});

// Mean of each density row.
Vector density_mean(const Trajectory& pi, const Vector& x, double dx);
Vector density_variance(const Trajectory& pi, const Vector& x, double dx);

}  // namespace dualsmooth::grid
