#include <doctest.h>

#include <cmath>

#include "dualsmooth/error.hpp"
#include "dualsmooth/models.hpp"
#include "helpers.hpp"

using namespace dualsmooth;

namespace {

CtmcModel make(Matrix A, Vector h, Vector nu0) { return {std::move(A), std::move(h), std::move(nu0)}; }

ErrorKind kind_of(const CtmcModel& m) {
  try {
    validate(m);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected a validation error");
  return ErrorKind::InvalidArgument;
}

DiffusionModel1D frozen(const std::string& drift, double sigma) {
  DiffusionModel1D m;
  m.drift = ScalarFunction::parse(drift);
  m.sigma = ScalarFunction::constant(sigma);
  m.h = ScalarFunction::parse("zero");
  m.prior = {0.0, 1.0};
  m.x_min = -6.0;
  m.x_max = 6.0;
  m.n = 64;
  return m;
}

}  // namespace

TEST_CASE("ctmc validation accepts generators") {
  CHECK_NOTHROW(validate(make(Matrix::Zero(1, 1), Vector::Ones(1), Vector::Ones(1))));
  CHECK_NOTHROW(validate(testing::model_f3()));
}

TEST_CASE("ctmc validation names the offending entry") {
  Matrix A(2, 2);
  A << -1, 2, 1, -1;
  auto m = make(A, Vector::Zero(2), Vector::Constant(2, 0.5));
  CHECK(kind_of(m) == ErrorKind::RowSumNonzero);
  try {
    validate(m);
  } catch (const Error& e) {
    CHECK(e.index() == 0);
    CHECK(std::string(e.what()).find("row 0") != std::string::npos);
  }

  A << 1, -1, 1, -1;
  CHECK(kind_of(make(A, Vector::Zero(2), Vector::Constant(2, 0.5))) == ErrorKind::NegativeRate);

  A << -1, 1, 1, -1;
  Vector nu0(2);
  nu0 << 0.7, 0.7;
  CHECK(kind_of(make(A, Vector::Zero(2), nu0)) == ErrorKind::BadPrior);
  nu0 << 1.2, -0.2;
  m = make(A, Vector::Zero(2), nu0);
  CHECK(kind_of(m) == ErrorKind::BadPrior);
  try {
    validate(m);
  } catch (const Error& e) {
    CHECK(e.index() == 1);
  }
  CHECK(kind_of(make(A, Vector::Zero(3), Vector::Constant(2, 0.5))) == ErrorKind::BadShape);
}

TEST_CASE("ctmc simulation without transitions stays put") {
  auto single = make(Matrix::Zero(1, 1), Vector::Ones(1), Vector::Ones(1));
  auto path = simulate_ctmc(single, 5.0, 3);
  CHECK(path.states.size() == 1);
  CHECK(path.state_at(4.9) == 0);

  Vector nu0(3);
  nu0 << 0, 1, 0;
  auto frozen3 = make(Matrix::Zero(3, 3), Vector::Zero(3), nu0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto p = simulate_ctmc(frozen3, 10.0, seed);
    CHECK(p.states.size() == 1);
    CHECK(p.states[0] == 1);
  }
}

TEST_CASE("ctmc occupation approaches the uniform stationary law") {
  const auto model = testing::model_f3();
  const auto path = simulate_ctmc(model, 1000.0, 17);
  const Vector occ = path.occupation(3);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(occ[i] - 1.0 / 3.0) < 0.02);
  // Reproducible for a fixed seed.
  const auto again = simulate_ctmc(model, 1000.0, 17);
  CHECK(again.jump_times == path.jump_times);
  CHECK(again.states == path.states);
}

TEST_CASE("ctmc embedded jump chain follows A[i][j] / -A[i][i]") {
  Matrix A(3, 3);
  A << -3, 1, 2, 1, -1, 0, 0, 4, -4;
  auto model = make(A, Vector::Zero(3), Vector::Constant(3, 1.0 / 3.0));
  const auto path = simulate_ctmc(model, 4000.0, 5);
  long from0 = 0, to2 = 0;
  for (std::size_t i = 1; i < path.states.size(); ++i) {
    CHECK(path.states[i] != path.states[i - 1]);
    if (path.states[i - 1] == 0) {
      ++from0;
      if (path.states[i] == 2) ++to2;
    }
    if (path.states[i - 1] == 1) CHECK(path.states[i] == 0);
  }
  const double p = static_cast<double>(to2) / from0;
  CHECK(std::abs(p - 2.0 / 3.0) < 3.0 * std::sqrt(2.0 / 9.0 / from0) + 1e-3);
}

TEST_CASE("function presets") {
  CHECK(ScalarFunction::parse("zero")(3.0) == 0.0);
  CHECK(ScalarFunction::parse("ou")(2.0) == -2.0);
  CHECK(ScalarFunction::parse("ou:0.5")(2.0) == doctest::Approx(-1.0));
  CHECK(ScalarFunction::parse("linear:3")(2.0) == doctest::Approx(6.0));
  CHECK(ScalarFunction::parse("const:1.5")(-7.0) == doctest::Approx(1.5));
  CHECK(ScalarFunction::parse("cubic-well")(2.0) == doctest::Approx(-6.0));
  CHECK_THROWS_AS(ScalarFunction::parse("sine"), Error);
  CHECK_THROWS_AS(ScalarFunction::parse("linear:abc"), Error);
}

TEST_CASE("diffusion grid and prior") {
  auto m = frozen("ou", std::sqrt(2.0));
  CHECK_NOTHROW(validate(m));
  const Vector x = m.grid();
  CHECK(x.size() == 64);
  CHECK(x[0] == doctest::Approx(-6.0 + 0.5 * m.dx()));
  CHECK(m.prior_on_grid().sum() * m.dx() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(testing::max_abs((m.log_prior_on_grid().array().exp() - m.prior_on_grid().array()).matrix()) < 1e-14);

  m.n = 4;
  CHECK_THROWS_AS(validate(m), Error);
  m = frozen("ou", 0.0);
  CHECK_THROWS_AS(validate(m), Error);
}

TEST_CASE("diffusion simulation limits") {
  auto still = frozen("zero", 1e-9);
  auto path = simulate_diffusion(still, 1.0, 100, 4, 0.5);
  CHECK(testing::max_abs((path.x.array() - 0.5).matrix()) < 1e-7);

  auto drift = frozen("const:1", 1e-9);
  path = simulate_diffusion(drift, 0.5, 500, 4, 0.0);
  CHECK(path.x[500] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(path.reflections == 0);
}

TEST_CASE("OU paths keep unit variance") {
  auto ou = frozen("ou", std::sqrt(2.0));
  const int paths = 10000;
  double s = 0.0, s2 = 0.0;
  for (int p = 0; p < paths; ++p) {
    const double x = simulate_diffusion(ou, 1.0, 200, 1000 + p).x[200];
    s += x;
    s2 += x * x;
  }
  const double mean = s / paths;
  const double var = s2 / paths - mean * mean;
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("diffusion paths reflect at the boundary") {
  auto m = frozen("const:50", 0.1);
  m.x_min = -1.0;
  m.x_max = 1.0;
  const auto path = simulate_diffusion(m, 1.0, 200, 9, 0.0);
  CHECK(path.reflections > 0);
  CHECK(path.x.maxCoeff() <= 1.0);
  CHECK(path.x.minCoeff() >= -1.0);
}

TEST_CASE("observations in zero-noise mode integrate h") {
  auto single = make(Matrix::Zero(1, 1), Vector::Constant(1, 2.0), Vector::Ones(1));
  const auto obs = simulate_observations(simulate_ctmc(single, 1.0, 1), single.h, 1000, 1, true);
  CHECK(obs.z[0] == 0.0);
  CHECK(obs.z[1000] == doctest::Approx(2.0).epsilon(1e-12));

  auto still = frozen("zero", 1e-9);
  still.h = ScalarFunction::constant(0.7);
  const auto dpath = simulate_diffusion(still, 2.0, 400, 3, 0.0);
  const auto dobs = simulate_observations(dpath, still.h, 200, 3, true);
  for (int k = 0; k <= 200; ++k) CHECK(dobs.z[k] == doctest::Approx(0.7 * dobs.time(k)).epsilon(1e-12));
  CHECK_THROWS_AS(simulate_observations(dpath, still.h, 300, 3, true), Error);
}

TEST_CASE("observation increments are Wiener increments when h is zero") {
  auto silent = make(Matrix::Zero(1, 1), Vector::Zero(1), Vector::Ones(1));
  const int N = 20000;
  const auto obs = simulate_observations(simulate_ctmc(silent, 1.0, 1), silent.h, N, 8);
  const double dt = obs.dt();
  double s = 0.0, s2 = 0.0;
  for (int k = 0; k < N; ++k) {
    const double inc = obs.z[k + 1] - obs.z[k];
    s += inc;
    s2 += inc * inc;
  }
  const double mean = s / N;
  const double var = s2 / N - mean * mean;
  CHECK(std::abs(mean) < 3.0 * std::sqrt(dt / N));
  CHECK(std::abs(var / dt - 1.0) < 3.0 * std::sqrt(2.0 / N));
}

TEST_CASE("observation paths: interpolation, refinement and validation") {
  auto obs = testing::linear_path(2.0, 4, 1.5);
  CHECK(obs.at(0.75) == doctest::Approx(1.125));
  const auto fine = refine(obs, 3);
  CHECK(fine.N == 12);
  CHECK(fine.z[7] == doctest::Approx(1.5 * fine.time(7)));
  obs.z[0] = 0.1;
  CHECK_THROWS_AS(validate(obs), Error);
  obs.z[0] = 0.0;
  obs.z[2] = std::nan("");
  CHECK_THROWS_AS(validate(obs), Error);
}

TEST_CASE("simulation is reproducible per seed and differs across seeds") {
  const auto model = testing::model_f3();
  const auto a = simulate_observations(simulate_ctmc(model, 1.0, 42), model.h, 100, 42);
  const auto b = simulate_observations(simulate_ctmc(model, 1.0, 42), model.h, 100, 42);
  const auto c = simulate_observations(simulate_ctmc(model, 1.0, 43), model.h, 100, 43);
  CHECK(a.z == b.z);
  CHECK(a.z != c.z);
}
