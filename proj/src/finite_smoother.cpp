#include "dualsmooth/finite_smoother.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

#include "dualsmooth/detail/rk4.hpp"
#include "dualsmooth/error.hpp"

namespace dualsmooth::finite {

namespace {

constexpr double kOverflowGuard = 1e6;

// Sum_j A_ij e^{w_j - w_i}, evaluated through exponent differences so that
// large |w| cannot overflow.
Vector tilted_generator(const Matrix& A, const Vector& w) {
  const auto d = A.rows();
  Vector out(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (A(i, j) != 0.0) acc += A(i, j) * std::exp(w[j] - w[i]);
    }
    out[i] = acc;
  }
  return out;
}

void guard(const Vector& v, int k, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]) || std::abs(v[i]) > kOverflowGuard) {
      throw Error(ErrorKind::NumericalBlowup,
                  fmt::format("{} left the overflow guard at time index {} (state {}); refine the time step",
                              what, k, i),
                  k);
    }
  }
}

double stage_z(const ObservationPath& obs, int k, double s) {
  if (s == 0.0) return obs.z[k];
  if (s == 1.0) return obs.z[k + 1];
  return 0.5 * (obs.z[k] + obs.z[k + 1]);
}

// dlambda/dt = -(e^{-w} A e^{w}) + h^2/2, w = lambda - z h.
Vector lambda_rate(const CtmcModel& model, const Vector& lambda, double z) {
  const Vector w = lambda - z * model.h;
  return -tilted_generator(model.A, w) + 0.5 * model.h.cwiseAbs2();
}

void check_policy_shape(const CtmcModel& model, const ControlPolicyF& policy) {
  if (policy.nodes.size() < 2 || policy.midpoints.size() + 1 != policy.nodes.size()) {
    throw Error(ErrorKind::BadShape, "control policy needs N+1 node values and N midpoint values");
  }
  for (const auto& u : policy.nodes) {
    if (u.rows() != model.states() || u.cols() != model.states()) {
      throw Error(ErrorKind::BadShape, "control matrix has the wrong dimension");
    }
  }
}

Matrix log_midpoint(const Matrix& a, const Matrix& b) {
  return (0.5 * (a.array().log() + b.array().log())).exp().matrix();
}

struct FlowResult {
  Trajectory pi;
  double max_drift = 0.0;
  double running = 0.0;
};

// Controlled forward flow with an optional running cost integrated on the same
// stages. `running_cost(pi, k, s, generator, cost_vector)` returns the integrand.
template <class RunningCost>
FlowResult run_flow(const CtmcModel& model, const ControlPolicyF& policy_in, const Vector& pi0,
                    RunningCost&& running_cost) {
  ControlPolicyF policy = policy_in;
  if (policy.midpoints.empty() && policy.nodes.size() >= 2) {
    for (std::size_t k = 0; k + 1 < policy.nodes.size(); ++k) {
      policy.midpoints.push_back(log_midpoint(policy.nodes[k], policy.nodes[k + 1]));
    }
  }
  check_policy_shape(model, policy);
  const int d = model.states();
  if (pi0.size() != d) throw Error(ErrorKind::BadShape, "pi0 has the wrong dimension");
  const int N = policy.steps();
  const double dt = policy.dt;

  std::vector<Matrix> gen_nodes, gen_mid;
  std::vector<Vector> cost_nodes, cost_mid;
  for (int k = 0; k <= N; ++k) {
    gen_nodes.push_back(controlled_generator(model.A, policy.nodes[k]));
    cost_nodes.push_back(control_cost(model.A, policy.nodes[k]));
  }
  for (int k = 0; k < N; ++k) {
    gen_mid.push_back(controlled_generator(model.A, policy.midpoints[k]));
    cost_mid.push_back(control_cost(model.A, policy.midpoints[k]));
  }

  FlowResult out{Trajectory(N + 1, d), 0.0, 0.0};
  out.pi.row(0) = pi0.transpose();
  Vector y(d + 1);
  y.head(d) = pi0;
  y[d] = 0.0;
  for (int k = 0; k < N; ++k) {
    auto rhs = [&](const Vector& state, double s) {
      const Matrix& G = s == 0.0 ? gen_nodes[k] : (s == 1.0 ? gen_nodes[k + 1] : gen_mid[k]);
      const Vector& c = s == 0.0 ? cost_nodes[k] : (s == 1.0 ? cost_nodes[k + 1] : cost_mid[k]);
      Vector dy(d + 1);
      const Vector p = state.head(d);
      dy.head(d) = G.transpose() * p;
      dy[d] = running_cost(p, k, s, G, c);
      return dy;
    };
    y = detail::rk4_step(y, dt, rhs);
    const double mass = y.head(d).sum();
    out.max_drift = std::max(out.max_drift, std::abs(mass - 1.0));
    if (!std::isfinite(mass) || mass <= 0.0) {
      throw Error(ErrorKind::NumericalBlowup, fmt::format("controlled flow lost mass at time index {}", k + 1),
                  k + 1);
    }
    y.head(d) /= mass;
    out.pi.row(k + 1) = y.head(d).transpose();
  }
  out.running = y[d];
  return out;
}

}  // namespace

const Matrix& ControlPolicyF::at(int k, double s) const {
  if (s == 0.0) return nodes[k];
  if (s == 1.0) return nodes[k + 1];
  return midpoints[k];
}

Matrix controlled_generator(const Matrix& A, const Matrix& v) {
  const auto d = A.rows();
  if (v.rows() != d || v.cols() != d) throw Error(ErrorKind::BadShape, "control has the wrong dimension");
  Matrix G = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (i == j || A(i, j) == 0.0) continue;
      if (!(v(i, j) > 0.0)) {
        throw Error(ErrorKind::NonPositiveControl, fmt::format("v[{}][{}] = {} is not positive", i, j, v(i, j)),
                    i);
      }
      G(i, j) = A(i, j) * v(i, j);
      row += G(i, j);
    }
    G(i, i) = -row;
  }
  return G;
}

Vector control_cost(const Matrix& A, const Matrix& v) {
  const auto d = A.rows();
  if (v.rows() != d || v.cols() != d) throw Error(ErrorKind::BadShape, "control has the wrong dimension");
  Vector c(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    // Diagonal term with v_ii = 1: A_ii (0 - 1).
    double acc = -A(i, i);
    for (Eigen::Index j = 0; j < d; ++j) {
      if (i == j || A(i, j) == 0.0) continue;
      const double vij = v(i, j);
      if (!(vij > 0.0)) {
        throw Error(ErrorKind::NonPositiveControl, fmt::format("v[{}][{}] = {} is not positive", i, j, vij), i);
      }
      acc += A(i, j) * vij * (std::log(vij) - 1.0);
    }
    c[i] = acc;
  }
  return c;
}

Trajectory integrate_lambda_backward(const CtmcModel& model, const ObservationPath& obs) {
  validate(model);
  validate(obs);
  const int N = obs.N;
  const double dt = obs.dt();
  Trajectory lambda(N + 1, model.states());
  Vector y = obs.z[N] * model.h;
  lambda.row(N) = y.transpose();
  for (int k = N - 1; k >= 0; --k) {
    // Stepping from t_{k+1} to t_k: fraction s of the backward step sits at
    // t_{k+1} - s dt.
    y = detail::rk4_step(y, -dt, [&](const Vector& l, double s) {
      return lambda_rate(model, l, stage_z(obs, k, 1.0 - s));
    });
    guard(y, k, "lambda");
    lambda.row(k) = y.transpose();
  }
  return lambda;
}

Trajectory integrate_mu_forward(const CtmcModel& model, const ObservationPath& obs) {
  validate(model);
  validate(obs);
  if ((model.nu0.array() <= 0.0).any()) {
    throw Error(ErrorKind::BadPrior, "the forward log-domain equation needs a strictly positive nu0");
  }
  const int N = obs.N;
  const double dt = obs.dt();
  const Matrix At = model.A.transpose();
  const Vector half_h2 = 0.5 * model.h.cwiseAbs2();
  Trajectory mu(N + 1, model.states());
  Vector y = model.nu0.array().log();
  mu.row(0) = y.transpose();
  for (int k = 0; k < N; ++k) {
    y = detail::rk4_step(y, dt, [&](const Vector& m, double s) {
      const Vector e = m + stage_z(obs, k, s) * model.h;
      return Vector(tilted_generator(At, e) - half_h2);
    });
    guard(y, k + 1, "mu");
    mu.row(k + 1) = y.transpose();
  }
  return mu;
}

OptimalPrior optimal_pi0(const Vector& nu0, const Vector& lambda0) {
  if (nu0.size() != lambda0.size()) throw Error(ErrorKind::BadShape, "nu0 and lambda0 differ in size");
  double peak = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < nu0.size(); ++i) {
    if (nu0[i] > 0.0) peak = std::max(peak, lambda0[i]);
  }
  if (!std::isfinite(peak)) throw Error(ErrorKind::DegeneratePrior, "nu0 has no mass");
  Vector weights = nu0.array() * (lambda0.array() - peak).exp();
  const double total = weights.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw Error(ErrorKind::DegeneratePrior, "normalization constant nu0^T e^{lambda0} underflowed");
  }
  return {weights / total, peak + std::log(total)};
}

ControlPolicyF optimal_control(const CtmcModel& model, const ObservationPath& obs, const Trajectory& lambda) {
  const int N = obs.N;
  const int d = model.states();
  if (lambda.rows() != N + 1 || lambda.cols() != d) {
    throw Error(ErrorKind::BadShape, "lambda does not match the observation grid");
  }
  const double dt = obs.dt();
  auto control_from = [&](const Vector& w) {
    Matrix u = Matrix::Ones(d, d);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        if (i != j && model.A(i, j) != 0.0) u(i, j) = std::exp(w[j] - w[i]);
      }
    }
    return u;
  };

  ControlPolicyF policy;
  policy.dt = dt;
  std::vector<Vector> rate(N + 1);
  for (int k = 0; k <= N; ++k) {
    const Vector l = lambda.row(k).transpose();
    rate[k] = lambda_rate(model, l, obs.z[k]);
    policy.nodes.push_back(control_from(l - obs.z[k] * model.h));
  }
  for (int k = 0; k < N; ++k) {
    const Vector l0 = lambda.row(k).transpose();
    const Vector l1 = lambda.row(k + 1).transpose();
    const Vector lm = detail::hermite_midpoint(l0, l1, rate[k], rate[k + 1], dt);
    const double zm = 0.5 * (obs.z[k] + obs.z[k + 1]);
    policy.midpoints.push_back(control_from(lm - zm * model.h));
  }
  return policy;
}

ControlledFlow integrate_pi_forward(const CtmcModel& model, const ControlPolicyF& policy, const Vector& pi0) {
  auto flow = run_flow(model, policy, pi0, [](const Vector&, int, double, const Matrix&, const Vector&) {
    return 0.0;
  });
  return {std::move(flow.pi), flow.max_drift};
}

Smoothed smoothing_distribution(const Trajectory& mu, const Trajectory& lambda) {
  if (mu.rows() != lambda.rows() || mu.cols() != lambda.cols()) {
    throw Error(ErrorKind::BadShape, "mu and lambda are on different grids");
  }
  Smoothed out{Trajectory(mu.rows(), mu.cols()), Vector(mu.rows()), 0.0};
  for (Eigen::Index k = 0; k < mu.rows(); ++k) {
    const Eigen::RowVectorXd s = mu.row(k) + lambda.row(k);
    const double peak = s.maxCoeff();
    const double lse = peak + std::log((s.array() - peak).exp().sum());
    out.pi.row(k) = (s.array() - lse).exp();
    out.log_normalizer[k] = lse;
  }
  out.logC = out.log_normalizer[0];
  return out;
}

double kl_divergence(const Vector& pi0, const Vector& nu0) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < pi0.size(); ++i) {
    if (pi0[i] <= 0.0) continue;
    if (nu0[i] <= 0.0) return std::numeric_limits<double>::infinity();
    acc += pi0[i] * std::log(pi0[i] / nu0[i]);
  }
  return acc;
}

double cost_J(const CtmcModel& model, const Vector& pi0, const ControlPolicyF& policy,
              const ObservationPath& obs) {
  if (obs.N != policy.steps()) throw Error(ErrorKind::BadShape, "policy and observation grids differ");
  const Vector half_h2 = 0.5 * model.h.cwiseAbs2();
  auto flow = run_flow(model, policy, pi0,
                       [&](const Vector& p, int k, double s, const Matrix& G, const Vector& c) {
                         return p.dot(c + half_h2) + stage_z(obs, k, s) * p.dot(G * model.h);
                       });
  const Vector piT = flow.pi.row(obs.N).transpose();
  return kl_divergence(pi0, model.nu0) - obs.z[obs.N] * piT.dot(model.h) + flow.running;
}

double path_relative_entropy(const CtmcModel& model, const Vector& pi0, const ControlPolicyF& policy) {
  auto flow = run_flow(model, policy, pi0, [](const Vector& p, int, double, const Matrix&, const Vector& c) {
    return p.dot(c);
  });
  return kl_divergence(pi0, model.nu0) + flow.running;
}

SmoothingSolutionF smooth(const CtmcModel& model, const ObservationPath& obs, const SmoothOptions& options) {
  validate(model);
  validate(obs);
  const int sub = options.substeps;
  const ObservationPath fine = refine(obs, sub);

  const Trajectory lambda = integrate_lambda_backward(model, fine);
  const Trajectory mu = integrate_mu_forward(model, fine);
  const Smoothed smoothed = smoothing_distribution(mu, lambda);
  const OptimalPrior prior = optimal_pi0(model.nu0, lambda.row(0).transpose());
  ControlPolicyF policy = optimal_control(model, fine, lambda);
  const ControlledFlow flow = integrate_pi_forward(model, policy, prior.pi0);

  SmoothingSolutionF sol;
  const int N = obs.N;
  const int d = model.states();
  sol.timegrid.resize(N + 1);
  sol.mu.resize(N + 1, d);
  sol.lambda.resize(N + 1, d);
  sol.pi.resize(N + 1, d);
  sol.pi_controlled.resize(N + 1, d);
  sol.log_normalizer.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    const int f = k * sub;
    sol.timegrid[k] = obs.time(k);
    sol.mu.row(k) = mu.row(f);
    sol.lambda.row(k) = lambda.row(f);
    sol.pi.row(k) = smoothed.pi.row(f);
    sol.pi_controlled.row(k) = flow.pi.row(f);
    sol.log_normalizer[k] = smoothed.log_normalizer[f];
  }
  sol.logC = prior.logC;
  sol.route_equivalence_linf = (smoothed.pi - flow.pi).cwiseAbs().maxCoeff();
  sol.normalizer_spread = (smoothed.log_normalizer.array() - prior.logC).abs().maxCoeff();
  sol.mass_drift = flow.max_drift;
  sol.J_opt = cost_J(model, prior.pi0, policy, fine);
  sol.policy = std::move(policy);
  return sol;
}

}  // namespace dualsmooth::finite
