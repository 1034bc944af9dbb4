#include "dualsmooth/oracles.hpp"

#include <fmt/format.h>

#include <array>
#include <cmath>

#include "dualsmooth/error.hpp"
#include "dualsmooth/rng.hpp"

namespace dualsmooth::oracles {

namespace {

// RK4 kept local so the oracles share no stepping code with the solvers.
template <class State, class Rhs>
State rk4(const State& y, double dt, Rhs&& f) {
  const State k1 = f(y, 0);
  const State k2 = f(State(y + 0.5 * dt * k1), 1);
  const State k3 = f(State(y + 0.5 * dt * k2), 1);
  const State k4 = f(State(y + dt * k3), 2);
  return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

int steps_per_interval(double coarse, double fine) {
  const double ratio = coarse / fine;
  const long r = std::lround(ratio);
  if (r < 1 || std::abs(ratio - static_cast<double>(r)) > 1e-6 * ratio) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("oracle step {} does not divide the observation step {}", fine, coarse));
  }
  return static_cast<int>(r);
}

}  // namespace

Matrix expm(const Matrix& M) {
  constexpr std::array<double, 7> c{1.0,          0.5,           5.0 / 44.0,        1.0 / 66.0,
                                    1.0 / 792.0,  1.0 / 15840.0, 1.0 / 665280.0};
  const auto n = M.rows();
  const double norm = M.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Matrix X = M / std::ldexp(1.0, squarings);

  Matrix power = Matrix::Identity(n, n);
  Matrix num = c[0] * power;
  Matrix den = c[0] * power;
  for (int k = 1; k <= 6; ++k) {
    power = power * X;
    num += c[k] * power;
    den += ((k % 2 == 0) ? c[k] : -c[k]) * power;
  }
  Matrix R = den.partialPivLu().solve(num);
  for (int s = 0; s < squarings; ++s) R = R * R;
  return R;
}

Vector stationary_distribution(const Matrix& A) {
  const auto d = A.rows();
  Matrix system = A.transpose();
  system.row(d - 1).setOnes();
  Vector rhs = Vector::Zero(d);
  rhs[d - 1] = 1.0;
  return system.fullPivLu().solve(rhs);
}

Trajectory marginal_flow(const CtmcModel& model, double T, int N) {
  const Matrix P = expm(model.A * (T / N));
  Trajectory out(N + 1, model.states());
  Vector p = model.nu0;
  out.row(0) = p.transpose();
  for (int k = 0; k < N; ++k) {
    p = P.transpose() * p;
    out.row(k + 1) = p.transpose();
  }
  return out;
}

HmmSmoothed discrete_hmm_smoother(const CtmcModel& model, const ObservationPath& obs, double dt_fine) {
  const int r = steps_per_interval(obs.dt(), dt_fine);
  const int M = obs.N * r;
  const double dt = obs.dt() / r;
  const int d = model.states();
  const Matrix P = expm(model.A * dt);
  const Matrix Pt = P.transpose();
  const Vector half_h2 = 0.5 * model.h.cwiseAbs2();

  // Emission weight for fine step j (from t_j to t_{j+1}).
  auto emission = [&](int j) -> Vector {
    const int k = j / r;
    const double dz = (obs.z[k + 1] - obs.z[k]) / r;
    return (model.h * dz - half_h2 * dt).array().exp();
  };

  HmmSmoothed out;
  out.log_forward.resize(obs.N + 1, d);
  out.log_backward.resize(obs.N + 1, d);

  Trajectory alpha(M + 1, d);
  Vector a = model.nu0;
  double log_scale = 0.0;
  alpha.row(0) = a.transpose();
  out.log_forward.row(0) = a.array().log().transpose();
  for (int j = 0; j < M; ++j) {
    a = emission(j).cwiseProduct(Pt * a);
    const double s = a.sum();
    a /= s;
    log_scale += std::log(s);
    alpha.row(j + 1) = a.transpose();
    if ((j + 1) % r == 0) out.log_forward.row((j + 1) / r) = (a.array().log() + log_scale).transpose();
  }

  out.stride = r;
  out.times = Vector::LinSpaced(M + 1, 0.0, obs.T);
  out.pi.resize(M + 1, d);
  Vector b = Vector::Ones(d);
  log_scale = 0.0;
  for (int j = M; j >= 0; --j) {
    if (j < M) {
      b = P * emission(j).cwiseProduct(b);
      const double s = b.sum();
      b /= s;
      log_scale += std::log(s);
    }
    if (j % r == 0) out.log_backward.row(j / r) = (b.array().log() + log_scale).transpose();
    Vector s = alpha.row(j).transpose().cwiseProduct(b);
    out.pi.row(j) = (s / s.sum()).transpose();
  }
  return out;
}

GaussianSmoothed kalman_rts(const lg::GaussianModel& model, const ObservationPath& obs, int refine) {
  const int d = model.dim();
  const int per_interval = 2 * refine;
  const int M = obs.N * per_interval;
  const double hf = obs.dt() / per_interval;
  const Matrix F = model.A.transpose();
  const Matrix Q = model.Q();
  const Matrix HHt = model.H * model.H.transpose();

  // Forward Kalman-Bucy filter on the fine grid; state packs [P | m].
  std::vector<Matrix> fwd(M + 1);
  fwd[0].resize(d, d + 1);
  fwd[0].leftCols(d) = model.Sigma0;
  fwd[0].col(d) = model.m0;
  for (int j = 0; j < M; ++j) {
    const int k = j / per_interval;
    const double zdot = (obs.z[k + 1] - obs.z[k]) / obs.dt();
    fwd[j + 1] = rk4(fwd[j], hf, [&](const Matrix& y, int) -> Matrix {
      const Matrix P = y.leftCols(d);
      const Vector m = y.col(d);
      Matrix dy(d, d + 1);
      dy.leftCols(d) = F * P + P * F.transpose() + Q - P * HHt * P;
      dy.col(d) = F * m + P * model.H * (zdot - model.H.dot(m));
      return dy;
    });
    const Matrix P = fwd[j + 1].leftCols(d);
    fwd[j + 1].leftCols(d) = 0.5 * (P + P.transpose());
    if (Eigen::LLT<Matrix>(fwd[j + 1].leftCols(d)).info() != Eigen::Success) {
      throw Error(ErrorKind::CovarianceNotPD, fmt::format("filter covariance lost definiteness at fine step {}", j + 1),
                  j + 1);
    }
  }

  // Backward smoother on every other fine node; odd nodes are its midpoints.
  std::vector<Matrix> inv_cov(M + 1);
  for (int j = 0; j <= M; ++j) {
    inv_cov[j] = Eigen::LLT<Matrix>(fwd[j].leftCols(d)).solve(Matrix::Identity(d, d));
  }
  const int B = M / 2;
  std::vector<Matrix> bwd(B + 1);
  bwd[B] = fwd[M];
  for (int i = B - 1; i >= 0; --i) {
    bwd[i] = rk4(bwd[i + 1], -2.0 * hf, [&](const Matrix& y, int stage) -> Matrix {
      const int j = 2 * (i + 1) - stage;  // stage 0 at t_{i+1}, 1 midpoint, 2 at t_i
      const Matrix G = F + Q * inv_cov[j];
      const Matrix Ps = y.leftCols(d);
      const Vector ms = y.col(d);
      Matrix dy(d, d + 1);
      dy.leftCols(d) = G * Ps + Ps * G.transpose() - Q;
      dy.col(d) = F * ms + Q * inv_cov[j] * (ms - fwd[j].col(d));
      return dy;
    });
  }

  GaussianSmoothed out;
  const int N = obs.N;
  out.times.resize(N + 1);
  out.filter_mean.resize(N + 1, d);
  out.mean.resize(N + 1, d);
  for (int k = 0; k <= N; ++k) {
    out.times[k] = obs.time(k);
    const Matrix& f = fwd[k * per_interval];
    const Matrix& s = bwd[k * refine];
    out.filter_mean.row(k) = f.col(d).transpose();
    out.filter_cov.push_back(f.leftCols(d));
    out.mean.row(k) = s.col(d).transpose();
    out.cov.push_back(s.leftCols(d));
  }
  return out;
}

double BackwardGaussian::lambda(int k, const Vector& x) const {
  return -0.5 * x.dot(precision[static_cast<std::size_t>(k)] * x) + linear.row(k).dot(x.transpose()) +
         log_scale[k];
}

BackwardGaussian lg_pathwise_reference(const lg::GaussianModel& model, const ObservationPath& obs, int refine) {
  const int d = model.dim();
  const int N = obs.N;
  const double h = obs.dt() / refine;
  const Matrix A = model.A;
  const Matrix Q = model.Q();
  const Matrix HHt = model.H * model.H.transpose();

  // Packs [Omega | eta | c] as d x (d+2); c sits in entry (0, d+1).
  Matrix y = Matrix::Zero(d, d + 2);
  BackwardGaussian out;
  out.times.resize(N + 1);
  out.precision.resize(N + 1);
  out.linear.resize(N + 1, d);
  out.log_scale.resize(N + 1);
  auto record = [&](int k) {
    out.times[k] = obs.time(k);
    out.precision[k] = y.leftCols(d);
    out.linear.row(k) = (y.col(d) + obs.z[k] * model.H).transpose();
    out.log_scale[k] = y(0, d + 1);
  };
  record(N);
  for (int k = N - 1; k >= 0; --k) {
    const double zdot = (obs.z[k + 1] - obs.z[k]) / obs.dt();
    for (int s = 0; s < refine; ++s) {
      y = rk4(y, -h, [&](const Matrix& state, int) -> Matrix {
        const Matrix Om = state.leftCols(d);
        const Vector eta = state.col(d);
        Matrix dy = Matrix::Zero(d, d + 2);
        dy.leftCols(d) = -A * Om - Om * A.transpose() + Om * Q * Om - HHt;
        dy.col(d) = -A * eta + Om * Q * eta - model.H * zdot;
        dy(0, d + 1) = 0.5 * (Q * Om).trace() - 0.5 * eta.dot(Q * eta);
        return dy;
      });
    }
    record(k);
  }
  return out;
}

McEstimate mc_relative_entropy(const CtmcModel& model, const Vector& pi0, const finite::ControlPolicyF& policy,
                               int n_mc, std::uint64_t seed) {
  if (n_mc < 1) throw Error(ErrorKind::InvalidArgument, "n_mc must be >= 1");
  const int d = model.states();
  const int N = static_cast<int>(policy.nodes.size()) - 1;
  const double dt = policy.dt;

  // Controlled jump rates per step, held at the left grid value.
  std::vector<Matrix> rates(N);
  std::vector<Vector> exit_excess(N);
  for (int k = 0; k < N; ++k) {
    rates[k] = Matrix::Zero(d, d);
    exit_excess[k] = Vector::Zero(d);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        if (i == j) continue;
        rates[k](i, j) = model.A(i, j) * policy.nodes[k](i, j);
        exit_excess[k][i] += rates[k](i, j) - model.A(i, j);
      }
    }
  }

  double sum = 0.0;
  double sum_sq = 0.0;
  for (int path = 0; path < n_mc; ++path) {
    Rng rng(seed, static_cast<std::uint64_t>(path));
    int state = rng.categorical(pi0);
    double log_ratio = std::log(pi0[state] / model.nu0[state]);
    for (int k = 0; k < N; ++k) {
      double remaining = dt;
      while (true) {
        const double exit = rates[k].row(state).sum();
        const double wait = exit > 0.0 ? rng.exponential(exit) : remaining;
        if (wait >= remaining) {
          log_ratio -= exit_excess[k][state] * remaining;
          break;
        }
        log_ratio -= exit_excess[k][state] * wait;
        remaining -= wait;
        const int next = rng.categorical(rates[k].row(state));
        log_ratio += std::log(policy.nodes[k](state, next));
        state = next;
      }
    }
    sum += log_ratio;
    sum_sq += log_ratio * log_ratio;
  }
  const double mean = sum / n_mc;
  const double var = n_mc > 1 ? (sum_sq - n_mc * mean * mean) / (n_mc - 1) : 0.0;
  return {mean, std::sqrt(std::max(var, 0.0) / n_mc)};
}

}  // namespace dualsmooth::oracles
