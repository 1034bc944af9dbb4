#include <doctest.h>

#include <cmath>

#include "dualsmooth/error.hpp"
#include "dualsmooth/grid_smoother.hpp"
#include "dualsmooth/oracles.hpp"
#include "helpers.hpp"

using namespace dualsmooth;
using namespace dualsmooth::grid;
using testing::max_abs;

namespace {

DiffusionModel1D make(const std::string& drift, double sigma, const std::string& h, int n = 200) {
  DiffusionModel1D m;
  m.drift = ScalarFunction::parse(drift);
  m.sigma = ScalarFunction::constant(sigma);
  m.h = ScalarFunction::parse(h);
  m.prior = {0.0, 1.0};
  m.x_min = -6.0;
  m.x_max = 6.0;
  m.n = n;
  return m;
}

DiffusionModel1D lg_embedding(int n) { return lg::embed_scalar(testing::lg_scalar(), 6.0, n); }

ObservationPath solver_path(const GridOperators& ops, const ObservationPath& obs) {
  return refine(obs, stable_substeps(ops, obs, {}));
}

// Largest |value| over the middle half of the domain.
double interior(const Vector& v, const GridOperators& ops) {
  Trajectory t(1, v.size());
  t.row(0) = v.transpose();
  return interior_max(t, ops);
}

}  // namespace

TEST_CASE("generator stencils") {
  const auto m = make("zero", std::sqrt(2.0), "zero", 50);
  const auto ops = build_grid_operators(m);
  const double inv = 1.0 / (ops.dx * ops.dx);
  for (int i = 1; i < 49; ++i) {
    CHECK(ops.generator.lower[i] == doctest::Approx(inv));
    CHECK(ops.generator.diag[i] == doctest::Approx(-2.0 * inv));
    CHECK(ops.generator.upper[i] == doctest::Approx(inv));
  }
}

TEST_CASE("generator kills constants and its adjoint conserves mass") {
  for (const char* drift : {"zero", "ou", "cubic-well", "linear:40", "const:-3"}) {
    for (int n : {16, 101, 400}) {
      const auto ops = build_grid_operators(make(drift, 0.7, "zero", n));
      const Matrix L = ops.generator.dense();
      const Matrix Ld = ops.adjoint.dense();
      CHECK(L.rowwise().sum().cwiseAbs().maxCoeff() < 1e-10 * L.cwiseAbs().maxCoeff());
      CHECK(Ld.colwise().sum().cwiseAbs().maxCoeff() < 1e-10 * Ld.cwiseAbs().maxCoeff());
      CHECK(max_abs(Ld - L.transpose()) == 0.0);
      // Jump-rate form: nonnegative off-diagonal entries.
      CHECK(ops.generator.lower.minCoeff() >= 0.0);
      CHECK(ops.generator.upper.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("coarse grids are flagged and upwinded") {
  const auto ops = build_grid_operators(make("linear:40", 0.5, "zero", 20));
  CHECK(ops.cell_peclet > 2.0);
  CHECK(ops.upwind_cells > 0);
  const auto fine = build_grid_operators(make("ou", std::sqrt(2.0), "zero", 400));
  CHECK(fine.cell_peclet < 2.0);
  CHECK(fine.upwind_cells == 0);
}

TEST_CASE("OU stationary density is a discrete fixed point to second order") {
  double prev = 0.0;
  for (int n : {100, 200, 400}) {
    const auto m = make("ou", std::sqrt(2.0), "zero", n);
    const auto ops = build_grid_operators(m);
    const Vector rho = m.prior_on_grid();
    const double err = ops.adjoint.apply(rho).cwiseAbs().maxCoeff();
    CHECK(err < 5.0 * ops.dx * ops.dx);
    if (prev > 0.0) CHECK(prev / err > 3.5);
    prev = err;
  }
}

TEST_CASE("tridiagonal helpers agree with dense algebra") {
  const auto ops = build_grid_operators(make("cubic-well", 0.9, "zero", 30));
  const Vector f = Vector::LinSpaced(30, -1.0, 2.0).array().sin();
  CHECK(max_abs(ops.generator.apply(f) - ops.generator.dense() * f) < 1e-9);
  CHECK(max_abs(ops.generator.transpose().dense() - ops.generator.dense().transpose()) == 0.0);
  const Vector w = 3.0 * f;
  const Vector direct = (ops.generator.dense() * w.array().exp().matrix()).array() / w.array().exp();
  CHECK(max_abs(ops.generator.tilted_apply(w) - direct) < 1e-9 * direct.cwiseAbs().maxCoeff());
}

TEST_CASE("backward PDE: closed forms") {
  const auto obs = testing::lg_obs();
  const auto silent = make("ou", std::sqrt(2.0), "zero", 100);
  const auto sops = build_grid_operators(silent);
  CHECK(max_abs(integrate_lambda_backward_pde(silent, sops, solver_path(sops, obs))) == 0.0);

  const auto frozen = make("zero", 1e-9, "linear:1", 60);
  const auto fops = build_grid_operators(frozen);
  const auto lam = integrate_lambda_backward_pde(frozen, fops, obs);
  double worst = 0.0;
  for (int k = 0; k <= obs.N; ++k)
    for (int i = 0; i < frozen.n; ++i) {
      const double x = fops.x[i];
      worst = std::max(worst, std::abs(lam(k, i) - (obs.z[obs.N] * x - 0.5 * x * x * (obs.T - obs.time(k)))));
    }
  CHECK(worst < 1e-9);
}

TEST_CASE("backward PDE matches the Gaussian backward reference") {
  const auto model = lg_embedding(400);
  const auto obs = testing::lg_obs();
  const auto ops = build_grid_operators(model);
  const int sub = stable_substeps(ops, obs, {});
  const auto lam = integrate_lambda_backward_pde(model, ops, refine(obs, sub));
  const auto ref = oracles::lg_pathwise_reference(testing::lg_scalar(), obs, 4);
  double worst = 0.0;
  for (int k = 0; k <= obs.N; k += 10) {
    Vector rel(model.n);
    for (int i = 0; i < model.n; ++i) rel[i] = std::expm1(lam(k * sub, i) - ref.lambda(k, Vector::Constant(1, ops.x[i])));
    worst = std::max(worst, interior(rel, ops));
  }
  CHECK(worst < 1e-2);
}

TEST_CASE("forward PDE: closed forms") {
  const auto obs = testing::lg_obs();
  const auto ou = make("ou", std::sqrt(2.0), "zero", 200);
  const auto ops = build_grid_operators(ou);
  const auto fine = solver_path(ops, obs);
  const auto mu = integrate_mu_forward_pde(ou, ops, fine);
  const Vector p0 = mu.row(0).array().exp();
  const Vector pT = mu.row(fine.N).array().exp();
  CHECK(max_abs(pT - p0) < 5.0 * ops.dx * ops.dx);

  const auto frozen = make("zero", 1e-9, "linear:1", 60);
  const auto fops = build_grid_operators(frozen);
  const auto mu_f = integrate_mu_forward_pde(frozen, fops, obs);
  const Vector log_nu0 = frozen.log_prior_on_grid();
  double worst = 0.0;
  for (int k = 0; k <= obs.N; ++k)
    for (int i = 0; i < frozen.n; ++i) {
      const double x = fops.x[i];
      worst = std::max(worst, std::abs(mu_f(k, i) - (log_nu0[i] - 0.5 * x * x * obs.time(k))));
    }
  CHECK(worst < 1e-9);
}

TEST_CASE("forward PDE reproduces the Kalman-Bucy filter") {
  const auto model = lg_embedding(400);
  const auto obs = testing::lg_obs();
  const auto ops = build_grid_operators(model);
  const int sub = stable_substeps(ops, obs, {});
  const auto fine = refine(obs, sub);
  const auto mu = integrate_mu_forward_pde(model, ops, fine);
  const auto kf = oracles::kalman_rts(testing::lg_scalar(), obs, 4);
  const Vector h = ops.x;
  double worst_mean = 0.0, worst_var = 0.0;
  for (int k = 0; k <= obs.N; k += 10) {
    Vector p = (mu.row(k * sub).transpose() + obs.z[k] * h).array().exp();
    p /= p.sum() * ops.dx;
    Trajectory row(1, p.size());
    row.row(0) = p.transpose();
    worst_mean = std::max(worst_mean, std::abs(density_mean(row, ops.x, ops.dx)[0] - kf.filter_mean(k, 0)));
    worst_var = std::max(worst_var, std::abs(density_variance(row, ops.x, ops.dx)[0] - kf.filter_cov[k](0, 0)));
  }
  CHECK(worst_mean < 1e-2);
  CHECK(worst_var < 1e-2);
}

TEST_CASE("control field") {
  const auto obs = testing::lg_obs();
  const auto m = make("ou", 1.0, "linear:1", 100);
  const auto ops = build_grid_operators(m);
  Trajectory flat(obs.N + 1, m.n);
  for (int k = 0; k <= obs.N; ++k) flat.row(k) = (obs.z[k] * ops.x).transpose().array() + 0.1 * k;
  const auto u0 = optimal_control_field(m, ops, obs, flat);
  CHECK(max_abs(u0.nodes) < 1e-9);
  CHECK(max_abs(u0.midpoints) < 1e-9);

  const Vector sq = ops.x.cwiseAbs2();
  CHECK(max_abs(gradient(sq, ops.dx) - 2.0 * ops.x) < 1e-10);
  const Vector cube = ops.x.array().cube();
  const double err = max_abs(gradient(cube, ops.dx) - 3.0 * sq);
  CHECK(err < 10.0 * ops.dx * ops.dx);
}

// The exact control is affine in x. The exponentiated-generator scheme leaves
// an O(dx^2) curvature in the discrete field, so the residual is checked for
// its rate; at n = 400 it sits near 1e-4 (about 0.12 dx^2).
TEST_CASE("optimal control converges to an affine field") {
  const auto obs = testing::lg_obs();
  std::vector<double> residuals;
  for (int n : {200, 400, 800}) {
    const auto model = lg_embedding(n);
    const auto sol = smooth(model, obs);
    std::vector<int> cells;
    for (int i = 0; i < model.n; ++i)
      if (std::abs(sol.x[i]) <= 0.25 * (model.x_max - model.x_min)) cells.push_back(i);
    Matrix X(cells.size(), 2);
    double worst = 0.0;
    for (int k = 0; k <= obs.N; k += 50) {
      Vector y(cells.size());
      for (std::size_t c = 0; c < cells.size(); ++c) {
        X(c, 0) = 1.0;
        X(c, 1) = sol.x[cells[c]];
        y[c] = sol.u(k, cells[c]);
      }
      const Vector coef = X.colPivHouseholderQr().solve(y);
      worst = std::max(worst, (X * coef - y).cwiseAbs().maxCoeff());
    }
    MESSAGE("n = " << n << ": affinity residual " << worst);
    CHECK(worst < 0.2 * model.dx() * model.dx());
    residuals.push_back(worst);
  }
  CHECK(residuals[0] / residuals[1] > 3.5);
  CHECK(residuals[1] / residuals[2] > 3.5);
}

TEST_CASE("uncontrolled transport") {
  const auto obs = testing::zero_path(0.5, 50);
  const auto ou = make("ou", std::sqrt(2.0), "zero", 16);
  const auto ops = build_grid_operators(ou);
  const auto fine = solver_path(ops, obs);
  ControlField zero{fine.dt(), Trajectory::Zero(fine.N + 1, 16), Trajectory::Zero(fine.N, 16)};

  // Discrete stationary vector of the adjoint stays put.
  Eigen::FullPivLU<Matrix> lu(ops.adjoint.dense());
  Vector stat = lu.kernel().col(0);
  stat /= stat.sum() * ops.dx;
  auto flow = integrate_pi_forward_pde(ou, ops, zero, stat);
  CHECK(max_abs(flow.pi.row(fine.N).transpose() - stat) < 1e-12);

  // Each step against the exponential propagator.
  const Vector nu0 = ou.prior_on_grid();
  flow = integrate_pi_forward_pde(ou, ops, zero, nu0);
  const Matrix E = oracles::expm(ops.adjoint.dense() * fine.dt());
  double worst = 0.0;
  for (int k = 0; k < fine.N; ++k)
    worst = std::max(worst, max_abs(flow.pi.row(k + 1).transpose() - E * flow.pi.row(k).transpose()));
  CHECK(worst < 1e-6);
  CHECK(flow.max_drift < 1e-12);
}

TEST_CASE("optimal prior on the grid") {
  const auto m = make("ou", 1.0, "zero", 100);
  const Vector nu0 = m.prior_on_grid();
  auto p = optimal_pi0_grid(nu0, Vector::Zero(100), m.dx());
  CHECK(max_abs(p.pi0 - nu0) < 1e-14);
  CHECK(std::abs(p.logC) < 1e-14);
  p = optimal_pi0_grid(nu0, Vector::Constant(100, -4.0), m.dx());
  CHECK(max_abs(p.pi0 - nu0) < 1e-14);
  CHECK(p.logC == doctest::Approx(-4.0));

  const auto model = lg_embedding(400);
  const auto obs = testing::lg_obs();
  const auto sol = smooth(model, obs);
  const auto rts = oracles::kalman_rts(testing::lg_scalar(), obs, 4);
  const Vector mean = density_mean(sol.pi_controlled, sol.x, model.dx());
  const Vector var = density_variance(sol.pi_controlled, sol.x, model.dx());
  CHECK(std::abs(mean[0] - rts.mean(0, 0)) < 1e-2);
  CHECK(std::abs(var[0] - rts.cov[0](0, 0)) < 1e-2);
}

TEST_CASE("smoothing on the linear-Gaussian embedding") {
  const auto model = lg_embedding(400);
  const auto obs = testing::lg_obs();
  const auto sol = smooth(model, obs);
  const auto rts = oracles::kalman_rts(testing::lg_scalar(), obs, 4);
  CHECK(max_abs(density_mean(sol.pi, sol.x, model.dx()) - rts.mean.col(0)) < 2e-2);
  const Vector var = density_variance(sol.pi, sol.x, model.dx());
  double worst = 0.0;
  for (int k = 0; k <= obs.N; ++k) worst = std::max(worst, std::abs(var[k] - rts.cov[k](0, 0)));
  CHECK(worst < 1e-2);

  CHECK(sol.route_equivalence_linf < 1e-4);
  CHECK(sol.normalizer_spread < 1e-4);
  for (int k = 0; k <= obs.N; ++k) {
    CHECK(std::abs(sol.pi.row(k).sum() * model.dx() - 1.0) < 1e-8);
    CHECK(std::abs(sol.pi_controlled.row(k).sum() * model.dx() - 1.0) < 1e-8);
  }
  CHECK(sol.mass_drift < 1e-9);
  const auto ops = build_grid_operators(model);
  CHECK(max_abs(sol.lambda.row(obs.N).transpose() - obs.z[obs.N] * ops.x) == 0.0);
}

TEST_CASE("HJB residual") {
  const auto obs = testing::lg_obs();
  const auto silent = make("ou", std::sqrt(2.0), "zero", 100);
  const auto sops = build_grid_operators(silent);
  const auto lam0 = integrate_lambda_backward_pde(silent, sops, solver_path(sops, obs));
  Trajectory coarse(obs.N + 1, silent.n);
  const int sub = stable_substeps(sops, obs, {});
  for (int k = 0; k <= obs.N; ++k) coarse.row(k) = lam0.row(k * sub);
  CHECK(max_abs(hjb_residual(silent, sops, obs, coarse)) == 0.0);

  const auto frozen = make("zero", 1e-9, "linear:1", 60);
  const auto fops = build_grid_operators(frozen);
  const auto lam = integrate_lambda_backward_pde(frozen, fops, obs);
  const auto res = hjb_residual(frozen, fops, obs, lam);
  CHECK(res.rows() == obs.N);
  CHECK(max_abs(res) < 10.0 * obs.dt() * obs.dt());

  double prev = 1e9;
  for (int n : {100, 200, 400}) {
    const auto sol = smooth(lg_embedding(n), obs);
    CHECK(sol.hjb_residual_max < prev);
    prev = sol.hjb_residual_max;
  }
  CHECK(prev < 1e-2);
}

TEST_CASE("cost at the optimum and under perturbed controls") {
  const auto model = lg_embedding(200);
  const auto obs = testing::lg_obs();
  const auto sol = smooth(model, obs);
  CHECK(std::abs(sol.J_opt + sol.logC) < 1e-4);

  const auto ops = build_grid_operators(model);
  const auto fine = refine(obs, sol.substeps);
  const auto lam = integrate_lambda_backward_pde(model, ops, fine);
  const auto control = optimal_control_field(model, ops, fine, lam);
  const auto prior = optimal_pi0_grid(model.prior_on_grid(), lam.row(0).transpose(), ops.dx);
  CHECK(cost_J(model, ops, prior.pi0, control, fine) == doctest::Approx(sol.J_opt));
  for (double eps : {-0.1, 0.05, 0.2}) {
    ControlField bumped = control;
    for (Eigen::Index k = 0; k < bumped.nodes.rows(); ++k) bumped.nodes.row(k).array() += eps * ops.x.transpose().array().sin();
    for (Eigen::Index k = 0; k < bumped.midpoints.rows(); ++k)
      bumped.midpoints.row(k).array() += eps * ops.x.transpose().array().sin();
    CHECK(cost_J(model, ops, prior.pi0, bumped, fine) > sol.J_opt);
  }
  Vector shifted = prior.pi0.array() * (0.1 * ops.x.array()).exp();
  shifted /= shifted.sum() * ops.dx;
  CHECK(cost_J(model, ops, shifted, control, fine) > sol.J_opt);
}

TEST_CASE("unresolved time steps are refused") {
  const auto model = lg_embedding(1000);
  const auto ops = build_grid_operators(model);
  const auto coarse = testing::lg_obs();
  try {
    integrate_lambda_backward_pde(model, ops, coarse);
    FAIL("expected CFLViolation");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CflViolation);
  }
}

TEST_CASE("nonlinear drift runs end to end") {
  auto m = make("cubic-well", 0.8, "linear:1", 240);
  m.x_min = -3.0;
  m.x_max = 3.0;
  m.prior = {0.0, 0.5};
  const auto path = simulate_diffusion(m, 1.0, 400, 5);
  const auto obs = simulate_observations(path, m.h, 200, 5);
  const auto sol = smooth(m, obs);
  CHECK(sol.normalizer_spread < 1e-4);
  CHECK(sol.route_equivalence_linf < 1e-3);
  CHECK(sol.mass_drift < 1e-9);
  CHECK(std::abs(sol.J_opt + sol.logC) < 1e-3);
}
