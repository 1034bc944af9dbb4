#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dualsmooth/types.hpp"

namespace dualsmooth {

// Finite-state hidden Markov model observed through dZ = h(X) dt + dW.
// A is a rate matrix: nonnegative off-diagonal jump rates, zero row sums.
struct CtmcModel {
  Matrix A;
  Vector h;
  Vector nu0;

  int states() const { return static_cast<int>(A.rows()); }
};

// Throws Error(RowSumNonzero | NegativeRate | BadPrior | BadShape) naming the
// offending index.
void validate(const CtmcModel& model);

// Scalar function with a textual description used for serialization.
// Presets: "zero", "ou" (-x), "ou:theta" (-theta x), "linear:c" (c x),
// "const:c" (c), "cubic-well" (x - x^3).
struct ScalarFunction {
  std::string spec;
  std::function<double(double)> fn;

  double operator()(double x) const { return fn(x); }

  static ScalarFunction parse(const std::string& spec);
  static ScalarFunction constant(double c);
  static ScalarFunction custom(std::string name, std::function<double(double)> fn);
};

struct GaussianPrior {
  double mean = 0.0;
  double std = 1.0;

  double log_density(double x) const;
};

// Scalar Ito diffusion dX = a(X) dt + sigma(X) dB on a truncated domain
// discretized into n uniform cells.
struct DiffusionModel1D {
  ScalarFunction drift;
  ScalarFunction sigma;
  ScalarFunction h;
  GaussianPrior prior;
  double x_min = -6.0;
  double x_max = 6.0;
  int n = 200;

  double dx() const { return (x_max - x_min) / n; }
  // Cell centers.
  Vector grid() const;
  // Prior density at the cell centers, normalized so that sum(nu0) * dx = 1.
  Vector prior_on_grid() const;
  // Log of prior_on_grid(), evaluated without underflow in the tails.
  Vector log_prior_on_grid() const;
};

inline constexpr double kSigmaMin = 1e-12;

// Throws on n < 8, empty domain, or sigma below kSigmaMin on the grid. Logs a
// warning when the domain covers fewer than 6 prior standard deviations on
// either side of the prior mean.
void validate(const DiffusionModel1D& model);

// Uniformly sampled cumulative observation path with z[0] = 0.
struct ObservationPath {
  double T = 1.0;
  int N = 0;
  Vector z;

  double dt() const { return T / N; }
  double time(int k) const { return T * k / N; }
  // Piecewise-linear interpolation of z.
  double at(double t) const;
};

void validate(const ObservationPath& obs);

// Same path on a grid `factor` times finer, z linearly interpolated.
ObservationPath refine(const ObservationPath& obs, int factor);

struct CtmcPath {
  double T = 0.0;
  std::vector<double> jump_times;  // jump_times[0] == 0
  std::vector<int> states;         // state held from jump_times[i]; 0-based

  int state_at(double t) const;
  // Fraction of [0, T] spent in each state.
  Vector occupation(int d) const;
};

struct DiffusionPath {
  double T = 0.0;
  int N = 0;
  Vector x;
  long reflections = 0;
};

CtmcPath simulate_ctmc(const CtmcModel& model, double T, std::uint64_t seed);

// Euler-Maruyama. X0 is drawn from the prior unless `x0` is given. Samples
// leaving [x_min, x_max] are reflected back and counted.
DiffusionPath simulate_diffusion(const DiffusionModel1D& model, double T, int N,
                                 std::uint64_t seed, std::optional<double> x0 = std::nullopt);

// z[k+1] = z[k] + h(X_{t_k}) dt + dW_k. With zero_noise the Wiener increment is
// dropped.
ObservationPath simulate_observations(const CtmcPath& state, const Vector& h, int N,
                                      std::uint64_t seed, bool zero_noise = false);
ObservationPath simulate_observations(const DiffusionPath& state, const ScalarFunction& h, int N,
                                      std::uint64_t seed, bool zero_noise = false);

}  // namespace dualsmooth
