#include "dualsmooth/grid_smoother.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "dualsmooth/detail/rk4.hpp"
#include "dualsmooth/error.hpp"

namespace dualsmooth::grid {

namespace {

constexpr double kOverflowGuard = 1e6;
// Classical RK4 is stable on the negative real axis up to |dt * eig| ~ 2.78.
constexpr double kRk4StabilityLimit = 2.78;

Vector sample(const ScalarFunction& f, const Vector& x) {
  Vector out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

double stage_z(const ObservationPath& obs, int k, double s) {
  if (s == 0.0) return obs.z[k];
  if (s == 1.0) return obs.z[k + 1];
  return 0.5 * (obs.z[k] + obs.z[k + 1]);
}

void guard(const Vector& v, int k, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]) || std::abs(v[i]) > kOverflowGuard) {
      throw Error(ErrorKind::NumericalBlowup,
                  fmt::format("{} left the overflow guard at time index {} (cell {})", what, k, i), k);
    }
  }
}

// Gershgorin bound on the linearized log-domain equation: its spectrum lies
// in discs centred at -r_i with radius r_i, r_i the tilted exit rate.
void check_cfl(const Tridiagonal& M, const Vector& w, double dt, int k, const char* what) {
  double worst = 0.0;
  const auto n = M.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    double r = 0.0;
    if (i > 0) r += M.lower[i] * std::exp(w[i - 1] - w[i]);
    if (i + 1 < n) r += M.upper[i] * std::exp(w[i + 1] - w[i]);
    worst = std::max(worst, r);
  }
  if (2.0 * worst * std::abs(dt) > kRk4StabilityLimit) {
    throw Error(ErrorKind::CflViolation,
                fmt::format("{} step at time index {} is outside the RK4 stability region "
                            "(dt * rate = {:.3g}); increase substeps",
                            what, k, worst * std::abs(dt)),
                k);
  }
}

Vector lambda_rate(const GridOperators& ops, const Vector& h, const Vector& half_h2, const Vector& lambda,
                   double z) {
  const Vector w = lambda - z * h;
  return -ops.generator.tilted_apply(w) + half_h2;
}

void check_lambda_shape(const GridOperators& ops, const ObservationPath& obs, const Trajectory& lambda) {
  if (lambda.rows() != obs.N + 1 || lambda.cols() != ops.x.size()) {
    throw Error(ErrorKind::BadShape, "lambda does not match the grid and observation path");
  }
}

struct TransportWithCost {
  Trajectory pi;
  double max_drift = 0.0;
  double running = 0.0;
};

template <class RunningCost>
TransportWithCost transport(const GridOperators& ops, const ControlField& control, const Vector& pi0,
                            RunningCost&& running_cost) {
  const auto n = ops.x.size();
  const int N = control.steps();
  if (control.nodes.cols() != n || control.midpoints.rows() != N || pi0.size() != n) {
    throw Error(ErrorKind::BadShape, "control field or pi0 does not match the grid");
  }
  const double dt = control.dt;
  TransportWithCost out{Trajectory(N + 1, n), 0.0, 0.0};
  out.pi.row(0) = pi0.transpose();
  Vector y(n + 1);
  y.head(n) = pi0;
  y[n] = 0.0;
  Tridiagonal gen_next = controlled_generator(ops, control.nodes.row(0).transpose());
  for (int k = 0; k < N; ++k) {
    const Vector u0 = control.nodes.row(k).transpose();
    const Vector um = control.midpoints.row(k).transpose();
    const Vector u1 = control.nodes.row(k + 1).transpose();
    const Tridiagonal gen0 = gen_next;
    const Tridiagonal genm = controlled_generator(ops, um);
    gen_next = controlled_generator(ops, u1);
    auto rhs = [&](const Vector& state, double s) {
      const Tridiagonal& G = s == 0.0 ? gen0 : (s == 1.0 ? gen_next : genm);
      const Vector& u = s == 0.0 ? u0 : (s == 1.0 ? u1 : um);
      const Vector p = state.head(n);
      Vector dy(n + 1);
      dy.head(n) = G.transpose().apply(p);
      dy[n] = running_cost(p, k, s, G, u);
      return dy;
    };
    y = detail::rk4_step(y, dt, rhs);
    const double mass = y.head(n).sum() * ops.dx;
    if (!std::isfinite(mass) || mass <= 0.0) {
      throw Error(ErrorKind::NumericalBlowup, fmt::format("transport lost mass at time index {}", k + 1), k + 1);
    }
    out.max_drift = std::max(out.max_drift, std::abs(mass - 1.0));
    y.head(n) /= mass;
    out.pi.row(k + 1) = y.head(n).transpose();
  }
  out.running = y[n];
  return out;
}

}  // namespace

int stable_substeps(const GridOperators& ops, const ObservationPath& obs, const GridOptions& options) {
  const double max_sigma2 = ops.sigma.cwiseAbs2().maxCoeff();
  const double max_exit = (-ops.generator.diag.array()).maxCoeff();
  double dt_stable = options.stability * ops.dx * ops.dx / max_sigma2;
  if (max_exit > 0.0) dt_stable = std::min(dt_stable, options.stability / max_exit);
  const int needed = static_cast<int>(std::ceil(obs.dt() / dt_stable - 1e-9));
  return std::max({options.substeps, needed, 1});
}

Trajectory integrate_lambda_backward_pde(const DiffusionModel1D& model, const GridOperators& ops,
                                         const ObservationPath& obs) {
  validate(obs);
  const int N = obs.N;
  const double dt = obs.dt();
  const Vector h = sample(model.h, ops.x);
  const Vector half_h2 = 0.5 * h.cwiseAbs2();
  Trajectory lambda(N + 1, ops.x.size());
  Vector y = obs.z[N] * h;
  lambda.row(N) = y.transpose();
  for (int k = N - 1; k >= 0; --k) {
    check_cfl(ops.generator, y - obs.z[k + 1] * h, dt, k, "lambda");
    y = detail::rk4_step(y, -dt, [&](const Vector& l, double s) {
      return lambda_rate(ops, h, half_h2, l, stage_z(obs, k, 1.0 - s));
    });
    guard(y, k, "lambda");
    lambda.row(k) = y.transpose();
  }
  return lambda;
}

Trajectory integrate_mu_forward_pde(const DiffusionModel1D& model, const GridOperators& ops,
                                    const ObservationPath& obs) {
  validate(obs);
  const int N = obs.N;
  const double dt = obs.dt();
  const Vector h = sample(model.h, ops.x);
  const Vector half_h2 = 0.5 * h.cwiseAbs2();
  Trajectory mu(N + 1, ops.x.size());
  Vector y = model.log_prior_on_grid();
  mu.row(0) = y.transpose();
  for (int k = 0; k < N; ++k) {
    check_cfl(ops.adjoint, y + obs.z[k] * h, dt, k, "mu");
    y = detail::rk4_step(y, dt, [&](const Vector& m, double s) {
      const Vector e = m + stage_z(obs, k, s) * h;
      return Vector(ops.adjoint.tilted_apply(e) - half_h2);
    });
    guard(y, k + 1, "mu");
    mu.row(k + 1) = y.transpose();
  }
  return mu;
}

Vector gradient(const Vector& f, double dx) {
  const auto n = f.size();
  Vector g(n);
  for (Eigen::Index i = 1; i + 1 < n; ++i) g[i] = (f[i + 1] - f[i - 1]) / (2.0 * dx);
  g[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx);
  g[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * dx);
  return g;
}

ControlField optimal_control_field(const DiffusionModel1D& model, const GridOperators& ops,
                                   const ObservationPath& obs, const Trajectory& lambda) {
  check_lambda_shape(ops, obs, lambda);
  const int N = obs.N;
  const auto n = ops.x.size();
  const double dt = obs.dt();
  const Vector h = sample(model.h, ops.x);
  const Vector half_h2 = 0.5 * h.cwiseAbs2();
  ControlField field{dt, Trajectory(N + 1, n), Trajectory(N, n)};
  std::vector<Vector> rate(N + 1);
  for (int k = 0; k <= N; ++k) {
    const Vector l = lambda.row(k).transpose();
    rate[k] = lambda_rate(ops, h, half_h2, l, obs.z[k]);
    field.nodes.row(k) = ops.sigma.cwiseProduct(gradient(l - obs.z[k] * h, ops.dx)).transpose();
  }
  for (int k = 0; k < N; ++k) {
    const Vector l0 = lambda.row(k).transpose();
    const Vector l1 = lambda.row(k + 1).transpose();
    const Vector lm = detail::hermite_midpoint(l0, l1, rate[k], rate[k + 1], dt);
    const double zm = 0.5 * (obs.z[k] + obs.z[k + 1]);
    field.midpoints.row(k) = ops.sigma.cwiseProduct(gradient(lm - zm * h, ops.dx)).transpose();
  }
  return field;
}

TransportResult integrate_pi_forward_pde(const DiffusionModel1D&, const GridOperators& ops,
                                         const ControlField& control, const Vector& pi0) {
  auto out = transport(ops, control, pi0,
                       [](const Vector&, int, double, const Tridiagonal&, const Vector&) { return 0.0; });
  return {std::move(out.pi), out.max_drift};
}

OptimalDensity optimal_pi0_grid(const Vector& nu0, const Vector& lambda0, double dx) {
  if (nu0.size() != lambda0.size()) throw Error(ErrorKind::BadShape, "nu0 and lambda0 differ in size");
  const double peak = lambda0.maxCoeff();
  const Vector weights = nu0.array() * (lambda0.array() - peak).exp();
  const double total = weights.sum() * dx;
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw Error(ErrorKind::DegeneratePrior, "normalization constant of nu0 e^{lambda0} underflowed");
  }
  return {weights / total, peak + std::log(total)};
}

SmoothedDensity smoothing_distribution(const Trajectory& mu, const Trajectory& lambda, double dx) {
  if (mu.rows() != lambda.rows() || mu.cols() != lambda.cols()) {
    throw Error(ErrorKind::BadShape, "mu and lambda are on different grids");
  }
  SmoothedDensity out{Trajectory(mu.rows(), mu.cols()), Vector(mu.rows()), 0.0};
  for (Eigen::Index k = 0; k < mu.rows(); ++k) {
    const Eigen::RowVectorXd s = mu.row(k) + lambda.row(k);
    const double peak = s.maxCoeff();
    const double lse = peak + std::log((s.array() - peak).exp().sum() * dx);
    out.pi.row(k) = (s.array() - lse).exp();
    out.log_normalizer[k] = lse;
  }
  out.logC = out.log_normalizer[0];
  return out;
}

Trajectory hjb_residual(const DiffusionModel1D& model, const GridOperators& ops, const ObservationPath& obs,
                        const Trajectory& lambda) {
  check_lambda_shape(ops, obs, lambda);
  const int N = obs.N;
  const double dt = obs.dt();
  const Vector h = sample(model.h, ops.x);
  const Vector half_h2 = 0.5 * h.cwiseAbs2();
  const Vector half_sigma2 = 0.5 * ops.sigma.cwiseAbs2();
  Trajectory residual(N, ops.x.size());
  for (int k = 0; k < N; ++k) {
    const Vector l0 = lambda.row(k).transpose();
    const Vector l1 = lambda.row(k + 1).transpose();
    // V = -lambda, so V + z h = -w with w = lambda - z h.
    const Vector w = 0.5 * (l0 + l1) - 0.5 * (obs.z[k] + obs.z[k + 1]) * h;
    const Vector neg_dV_dt = (l1 - l0) / dt;
    const Vector grad = gradient(w, ops.dx);
    const Vector r = neg_dV_dt + ops.generator.apply(w) - half_h2 + half_sigma2.cwiseProduct(grad.cwiseAbs2());
    residual.row(k) = r.transpose();
  }
  return residual;
}

double interior_max(const Trajectory& field, const GridOperators& ops, double fraction) {
  const double lo = ops.x[0] - 0.5 * ops.dx;
  const double width = ops.dx * static_cast<double>(ops.x.size());
  const double centre = lo + 0.5 * width;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < ops.x.size(); ++i) {
    if (std::abs(ops.x[i] - centre) > 0.5 * fraction * width) continue;
    worst = std::max(worst, field.col(i).cwiseAbs().maxCoeff());
  }
  return worst;
}

double cost_J(const DiffusionModel1D& model, const GridOperators& ops, const Vector& pi0,
              const ControlField& control, const ObservationPath& obs) {
  if (obs.N != control.steps()) throw Error(ErrorKind::BadShape, "control and observation grids differ");
  const Vector h = sample(model.h, ops.x);
  const Vector half_h2 = 0.5 * h.cwiseAbs2();
  const double dx = ops.dx;
  auto out = transport(ops, control, pi0, [&](const Vector& p, int k, double s, const Tridiagonal& G, const Vector& u) {
    const double quadratic = p.dot(0.5 * u.cwiseAbs2() + half_h2) * dx;
    const double coupling = stage_z(obs, k, s) * p.dot(G.apply(h)) * dx;
    return quadratic + coupling;
  });
  const Vector nu0 = model.prior_on_grid();
  double kl = 0.0;
  for (Eigen::Index i = 0; i < pi0.size(); ++i) {
    if (pi0[i] > 0.0) kl += pi0[i] * std::log(pi0[i] / nu0[i]) * dx;
  }
  const Vector piT = out.pi.row(obs.N).transpose();
  return kl - obs.z[obs.N] * piT.dot(h) * dx + out.running;
}

Vector density_mean(const Trajectory& pi, const Vector& x, double dx) {
  return pi * x * dx;
}

Vector density_variance(const Trajectory& pi, const Vector& x, double dx) {
  const Vector m = density_mean(pi, x, dx);
  const Vector second = pi * x.cwiseAbs2() * dx;
  return second - m.cwiseAbs2();
}

SmoothingSolutionG smooth(const DiffusionModel1D& model, const ObservationPath& obs, const GridOptions& options) {
  validate(obs);
  const GridOperators ops = build_grid_operators(model);
  const int sub = stable_substeps(ops, obs, options);
  spdlog::debug("grid smoother: n = {}, {} solver steps per observation interval", model.n, sub);
  const ObservationPath fine = refine(obs, sub);

  const Trajectory lambda = integrate_lambda_backward_pde(model, ops, fine);
  const Trajectory mu = integrate_mu_forward_pde(model, ops, fine);
  const SmoothedDensity smoothed = smoothing_distribution(mu, lambda, ops.dx);
  const OptimalDensity prior = optimal_pi0_grid(model.prior_on_grid(), lambda.row(0).transpose(), ops.dx);
  const ControlField control = optimal_control_field(model, ops, fine, lambda);
  const TransportResult flow = integrate_pi_forward_pde(model, ops, control, prior.pi0);

  SmoothingSolutionG sol;
  const int N = obs.N;
  const auto n = ops.x.size();
  sol.x = ops.x;
  sol.substeps = sub;
  sol.timegrid.resize(N + 1);
  sol.mu.resize(N + 1, n);
  sol.lambda.resize(N + 1, n);
  sol.pi.resize(N + 1, n);
  sol.pi_controlled.resize(N + 1, n);
  sol.u.resize(N + 1, n);
  sol.log_normalizer.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    const int f = k * sub;
    sol.timegrid[k] = obs.time(k);
    sol.mu.row(k) = mu.row(f);
    sol.lambda.row(k) = lambda.row(f);
    sol.pi.row(k) = smoothed.pi.row(f);
    sol.pi_controlled.row(k) = flow.pi.row(f);
    sol.u.row(k) = control.nodes.row(f);
    sol.log_normalizer[k] = smoothed.log_normalizer[f];
  }
  sol.logC = prior.logC;
  sol.normalizer_spread = (smoothed.log_normalizer.array() - prior.logC).abs().maxCoeff();
  sol.mass_drift = flow.max_drift;
  sol.route_equivalence_linf = interior_max(Trajectory(smoothed.pi - flow.pi), ops);
  sol.hjb_residual_max = interior_max(hjb_residual(model, ops, obs, sol.lambda), ops);
  sol.J_opt = cost_J(model, ops, prior.pi0, control, fine);
  return sol;
}

}  // namespace dualsmooth::grid
