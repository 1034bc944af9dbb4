#include "dualsmooth/gaussian_mee.hpp"

#include <fmt/format.h>

#include <cmath>

#include "dualsmooth/detail/rk4.hpp"
#include "dualsmooth/error.hpp"
#include "dualsmooth/rng.hpp"

namespace dualsmooth::lg {

namespace {

constexpr double kRiccatiGuard = 1e12;

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

// Matrix-valued RK4 step for a backward or forward sweep.
template <class Rhs>
Matrix rk4_matrix(const Matrix& y, double dt, Rhs&& rhs) {
  return detail::rk4_step<Matrix>(y, dt, std::forward<Rhs>(rhs));
}

}  // namespace

void validate(const GaussianModel& model) {
  const auto d = model.A.rows();
  if (d < 1 || model.A.cols() != d) throw Error(ErrorKind::BadShape, "A must be a nonempty square matrix");
  if (model.H.size() != d) throw Error(ErrorKind::BadShape, "H must have one entry per state");
  if (model.sigma.rows() != d || model.sigma.cols() < 1) {
    throw Error(ErrorKind::BadShape, "sigma must be d x p with p >= 1");
  }
  if (model.m0.size() != d || model.Sigma0.rows() != d || model.Sigma0.cols() != d) {
    throw Error(ErrorKind::BadShape, "prior mean and covariance must match the state dimension");
  }
  const double scale = std::max(1.0, model.Sigma0.cwiseAbs().maxCoeff());
  if ((model.Sigma0 - model.Sigma0.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw Error(ErrorKind::BadPrior, "Sigma0 is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(model.Sigma0);
  if (!(eig.eigenvalues().minCoeff() > 0.0)) {
    throw Error(ErrorKind::BadPrior, "Sigma0 is not positive definite");
  }
}

std::vector<Matrix> propagate_variance(const GaussianModel& model, double T, int N) {
  validate(model);
  const double dt = T / N;
  const Matrix F = model.A.transpose();
  const Matrix Q = model.Q();
  std::vector<Matrix> V;
  V.reserve(N + 1);
  V.push_back(model.Sigma0);
  for (int k = 0; k < N; ++k) {
    Matrix next = rk4_matrix(V.back(), dt, [&](const Matrix& P, double) -> Matrix {
      return F * P + P * F.transpose() + Q;
    });
    next = symmetrize(next);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(next);
    if (!(eig.eigenvalues().minCoeff() > 0.0)) {
      throw Error(ErrorKind::LostPositivity, fmt::format("covariance lost positivity at time index {}", k + 1),
                  k + 1);
    }
    V.push_back(std::move(next));
  }
  return V;
}

MeeSolution solve_min_energy(const GaussianModel& model, const ObservationPath& obs) {
  validate(model);
  validate(obs);
  const int N = obs.N;
  const int d = model.dim();
  const double dt = obs.dt();
  const Matrix F = model.A.transpose();
  const Matrix Q = model.Q();
  const Matrix HHt = model.H * model.H.transpose();

  // Backward sweep on the half-step grid so the forward pass has S and g at
  // its RK4 midpoints. State packs [S | g] as a d x (d+1) block.
  const int M = 2 * N;
  const double h = 0.5 * dt;
  std::vector<Matrix> Sg(M + 1);
  Sg[M] = Matrix::Zero(d, d + 1);
  for (int j = M - 1; j >= 0; --j) {
    const int k = j / 2;  // observation interval containing [t_j, t_{j+1}]
    const double zdot = (obs.z[k + 1] - obs.z[k]) / dt;
    Sg[j] = rk4_matrix(Sg[j + 1], -h, [&](const Matrix& y, double) -> Matrix {
      const Matrix S = y.leftCols(d);
      const Vector g = y.col(d);
      Matrix dy(d, d + 1);
      dy.leftCols(d) = -S * F - F.transpose() * S + S * Q * S - HHt;
      dy.col(d) = (S * Q - F.transpose()) * g + model.H * zdot;
      return dy;
    });
    Sg[j].leftCols(d) = symmetrize(Sg[j].leftCols(d));
    if (!Sg[j].allFinite() || Sg[j].cwiseAbs().maxCoeff() > kRiccatiGuard) {
      throw Error(ErrorKind::RiccatiBlowup, fmt::format("Riccati sweep diverged at half-step {}", j), j / 2);
    }
  }

  const Eigen::LLT<Matrix> prior(model.Sigma0);
  const Matrix prior_precision = prior.solve(Matrix::Identity(d, d));
  const Matrix S0 = Sg[0].leftCols(d);
  const Vector g0 = Sg[0].col(d);
  Eigen::LLT<Matrix> lhs(prior_precision + S0);
  if (lhs.info() != Eigen::Success) {
    throw Error(ErrorKind::RiccatiBlowup, "initial-condition system is not positive definite", 0);
  }
  const Vector m_start = lhs.solve(prior_precision * model.m0 - g0);

  MeeSolution sol;
  sol.timegrid.resize(N + 1);
  sol.m.resize(N + 1, d);
  sol.u.resize(N + 1, model.noise_dim());
  auto costate = [&](int j, const Vector& m) -> Vector {
    return Sg[j].leftCols(d) * m + Sg[j].col(d);
  };
  Vector m = m_start;
  for (int k = 0; k <= N; ++k) {
    sol.timegrid[k] = obs.time(k);
    sol.m.row(k) = m.transpose();
    sol.u.row(k) = (-model.sigma.transpose() * costate(2 * k, m)).transpose();
    if (k == N) break;
    m = detail::rk4_step(m, dt, [&](const Vector& x, double s) -> Vector {
      const int j = 2 * k + static_cast<int>(2.0 * s);
      return F * x - Q * costate(j, x);
    });
  }
  sol.V = propagate_variance(model, obs.T, N);
  sol.J = cost_ibp_identity(model, sol.m, sol.u, obs).form_a;
  return sol;
}

CostForms cost_ibp_identity(const GaussianModel& model, const Trajectory& m, const Trajectory& u,
                            const ObservationPath& obs) {
  const int N = obs.N;
  if (m.rows() != N + 1 || u.rows() != N + 1 || m.cols() != model.dim()) {
    throw Error(ErrorKind::BadShape, "trajectory does not match the observation grid");
  }
  const double dt = obs.dt();
  const Eigen::LLT<Matrix> prior(model.Sigma0);
  const Vector dm0 = m.row(0).transpose() - model.m0;
  const double prior_term = 0.5 * dm0.dot(prior.solve(dm0));

  double shared = 0.0;
  double coupling_a = 0.0;
  double fit_b = 0.0;
  auto y = [&](int k) { return model.H.dot(m.row(k).transpose()); };
  for (int k = 0; k < N; ++k) {
    const double u0 = u.row(k).squaredNorm();
    const double u1 = u.row(k + 1).squaredNorm();
    shared += 0.5 * dt * (0.5 * u0 + 0.5 * u1);
    const double zdot = (obs.z[k + 1] - obs.z[k]) / dt;
    const double y0 = y(k);
    const double y1 = y(k + 1);
    // Form (a): |H^T m|^2/2 + z H^T dm/dt.
    coupling_a += 0.5 * dt * (0.5 * y0 * y0 + 0.5 * y1 * y1);
    coupling_a += 0.5 * (obs.z[k] + obs.z[k + 1]) * (y1 - y0);
    // Form (b): |zdot - H^T m|^2/2 - |zdot|^2/2.
    fit_b += 0.5 * dt * (0.5 * (zdot - y0) * (zdot - y0) + 0.5 * (zdot - y1) * (zdot - y1));
    fit_b -= 0.5 * dt * zdot * zdot;
  }
  coupling_a -= obs.z[N] * y(N);
  return {prior_term + shared + coupling_a, prior_term + shared + fit_b};
}

Trajectory integrate_mean(const GaussianModel& model, const Vector& m0, const Trajectory& u,
                          const ObservationPath& obs) {
  const int N = obs.N;
  const double dt = obs.dt();
  const Matrix F = model.A.transpose();
  Trajectory m(N + 1, model.dim());
  Vector x = m0;
  m.row(0) = x.transpose();
  for (int k = 0; k < N; ++k) {
    const Vector u0 = u.row(k).transpose();
    const Vector u1 = u.row(k + 1).transpose();
    x = detail::rk4_step(x, dt, [&](const Vector& state, double s) -> Vector {
      const Vector uk = (1.0 - s) * u0 + s * u1;
      return F * state + model.sigma * uk;
    });
    m.row(k + 1) = x.transpose();
  }
  return m;
}

ObservationPath simulate_observations(const GaussianModel& model, double T, int N, std::uint64_t seed,
                                      bool zero_noise) {
  validate(model);
  if (N < 1) throw Error(ErrorKind::InvalidArgument, "observation path needs N >= 1");
  Rng signal(seed, 2);
  Rng noise(seed, 3);
  const double dt = T / N;
  const double sqdt = std::sqrt(dt);
  const Matrix L = model.Sigma0.llt().matrixL();
  Vector draw(model.dim());
  for (int i = 0; i < model.dim(); ++i) draw[i] = signal.normal();
  Vector x = model.m0 + L * draw;
  ObservationPath obs{T, N, Vector(N + 1)};
  obs.z[0] = 0.0;
  Vector w(model.noise_dim());
  for (int k = 0; k < N; ++k) {
    obs.z[k + 1] = obs.z[k] + model.H.dot(x) * dt + (zero_noise ? 0.0 : sqdt * noise.normal());
    for (int i = 0; i < model.noise_dim(); ++i) w[i] = signal.normal();
    x += model.A.transpose() * x * dt + model.sigma * w * sqdt;
  }
  return obs;
}

DiffusionModel1D embed_scalar(const GaussianModel& model, double half_width_in_std, int n) {
  validate(model);
  if (model.dim() != 1 || model.noise_dim() != 1) {
    throw Error(ErrorKind::BadShape, "grid embedding needs a scalar model");
  }
  DiffusionModel1D grid;
  grid.drift = ScalarFunction::parse(fmt::format("linear:{:.17g}", model.A(0, 0)));
  grid.sigma = ScalarFunction::constant(std::abs(model.sigma(0, 0)));
  grid.h = ScalarFunction::parse(fmt::format("linear:{:.17g}", model.H[0]));
  grid.prior = {model.m0[0], std::sqrt(model.Sigma0(0, 0))};
  grid.x_min = grid.prior.mean - half_width_in_std * grid.prior.std;
  grid.x_max = grid.prior.mean + half_width_in_std * grid.prior.std;
  grid.n = n;
  return grid;
}

}  // namespace dualsmooth::lg
