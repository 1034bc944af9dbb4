#include "dualsmooth/models.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include "dualsmooth/error.hpp"
#include "dualsmooth/rng.hpp"

namespace dualsmooth {

namespace {

constexpr std::uint64_t kCtmcStream = 1;
constexpr std::uint64_t kDiffusionStream = 2;
constexpr std::uint64_t kObservationStream = 3;

double parse_number(const std::string& text, const std::string& spec) {
  double value = 0.0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw Error(ErrorKind::MalformedInput, "bad numeric parameter in function preset '" + spec + "'");
  }
  return value;
}

}  // namespace

void validate(const CtmcModel& model) {
  const auto d = model.A.rows();
  if (d < 1 || model.A.cols() != d) {
    throw Error(ErrorKind::BadShape, "generator must be a nonempty square matrix");
  }
  if (model.h.size() != d || model.nu0.size() != d) {
    throw Error(ErrorKind::BadShape, "h and nu0 must have one entry per state");
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    double sum = 0.0;
    double scale = 1.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double a = model.A(i, j);
      if (!std::isfinite(a)) {
        throw Error(ErrorKind::NegativeRate, fmt::format("A[{}][{}] is not finite", i, j), i);
      }
      if (i != j && a < 0.0) {
        throw Error(ErrorKind::NegativeRate, fmt::format("A[{}][{}] = {} is negative", i, j, a), i);
      }
      sum += a;
      scale += std::abs(a);
    }
    if (std::abs(sum) > 1e-12 * scale) {
      throw Error(ErrorKind::RowSumNonzero, fmt::format("row {} of A sums to {}", i, sum), i);
    }
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(model.nu0[i] >= 0.0)) {
      throw Error(ErrorKind::BadPrior, fmt::format("nu0[{}] = {} is negative", i, model.nu0[i]), i);
    }
    total += model.nu0[i];
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw Error(ErrorKind::BadPrior, fmt::format("nu0 sums to {}", total));
  }
  if (!model.h.allFinite()) {
    throw Error(ErrorKind::BadShape, "h has non-finite entries");
  }
}

ScalarFunction ScalarFunction::parse(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string name = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? std::string() : spec.substr(colon + 1);
  const bool has_arg = colon != std::string::npos;

  if (name == "zero" && !has_arg) {
    return {spec, [](double) { return 0.0; }};
  }
  if (name == "ou") {
    const double theta = has_arg ? parse_number(arg, spec) : 1.0;
    return {spec, [theta](double x) { return -theta * x; }};
  }
  if (name == "linear" && has_arg) {
    const double c = parse_number(arg, spec);
    return {spec, [c](double x) { return c * x; }};
  }
  if (name == "const" && has_arg) {
    const double c = parse_number(arg, spec);
    return {spec, [c](double) { return c; }};
  }
  if (name == "cubic-well" && !has_arg) {
    return {spec, [](double x) { return x - x * x * x; }};
  }
  throw Error(ErrorKind::MalformedInput, "unknown function preset '" + spec + "'");
}

ScalarFunction ScalarFunction::constant(double c) {
  return {fmt::format("const:{}", c), [c](double) { return c; }};
}

ScalarFunction ScalarFunction::custom(std::string name, std::function<double(double)> fn) {
  return {std::move(name), std::move(fn)};
}

double GaussianPrior::log_density(double x) const {
  const double r = (x - mean) / std;
  return -0.5 * r * r - std::log(std * std::sqrt(2.0 * std::numbers::pi));
}

Vector DiffusionModel1D::grid() const {
  Vector x(n);
  const double h = dx();
  for (int i = 0; i < n; ++i) x[i] = x_min + (i + 0.5) * h;
  return x;
}

Vector DiffusionModel1D::log_prior_on_grid() const {
  const Vector x = grid();
  Vector lp(n);
  for (int i = 0; i < n; ++i) lp[i] = prior.log_density(x[i]);
  const double peak = lp.maxCoeff();
  const double mass = (lp.array() - peak).exp().sum() * dx();
  return lp.array() - peak - std::log(mass);
}

Vector DiffusionModel1D::prior_on_grid() const { return log_prior_on_grid().array().exp(); }

void validate(const DiffusionModel1D& model) {
  if (model.n < 8) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("grid needs at least 8 cells, got {}", model.n));
  }
  if (!(model.x_max > model.x_min)) {
    throw Error(ErrorKind::InvalidArgument, "domain must satisfy x_min < x_max");
  }
  if (!(model.prior.std > 0.0)) {
    throw Error(ErrorKind::BadPrior, "prior standard deviation must be positive");
  }
  const Vector x = model.grid();
  for (int i = 0; i < model.n; ++i) {
    const double s = model.sigma(x[i]);
    if (!(s >= kSigmaMin)) {
      throw Error(ErrorKind::InvalidArgument,
                  fmt::format("sigma({}) = {} is below the minimum {}", x[i], s, kSigmaMin), i);
    }
    if (!std::isfinite(model.drift(x[i])) || !std::isfinite(model.h(x[i]))) {
      throw Error(ErrorKind::InvalidArgument, fmt::format("drift or h not finite at x = {}", x[i]), i);
    }
  }
  const double lo = model.prior.mean - 6.0 * model.prior.std;
  const double hi = model.prior.mean + 6.0 * model.prior.std;
  if (model.x_min > lo || model.x_max < hi) {
    spdlog::warn("domain [{}, {}] covers less than 6 prior standard deviations ([{}, {}])",
                 model.x_min, model.x_max, lo, hi);
  }
}

double ObservationPath::at(double t) const {
  if (t <= 0.0) return z[0];
  if (t >= T) return z[N];
  const double s = t / dt();
  const int k = std::min(static_cast<int>(s), N - 1);
  const double frac = s - k;
  return (1.0 - frac) * z[k] + frac * z[k + 1];
}

void validate(const ObservationPath& obs) {
  if (obs.N < 1) throw Error(ErrorKind::BadShape, "observation path needs N >= 1");
  if (!(obs.T > 0.0)) throw Error(ErrorKind::BadShape, "observation horizon must be positive");
  if (obs.z.size() != obs.N + 1) {
    throw Error(ErrorKind::BadShape,
                fmt::format("observation path has {} samples, expected N+1 = {}", obs.z.size(), obs.N + 1));
  }
  if (!obs.z.allFinite()) throw Error(ErrorKind::BadShape, "observation path has non-finite entries");
  if (obs.z[0] != 0.0) throw Error(ErrorKind::BadShape, fmt::format("observation path starts at z[0] = {}, not 0", obs.z[0]));
}

ObservationPath refine(const ObservationPath& obs, int factor) {
  if (factor < 1) throw Error(ErrorKind::InvalidArgument, "refinement factor must be >= 1");
  if (factor == 1) return obs;
  ObservationPath fine{obs.T, obs.N * factor, Vector(obs.N * factor + 1)};
  for (int k = 0; k < obs.N; ++k) {
    for (int s = 0; s < factor; ++s) {
      const double frac = static_cast<double>(s) / factor;
      fine.z[k * factor + s] = (1.0 - frac) * obs.z[k] + frac * obs.z[k + 1];
    }
  }
  fine.z[fine.N] = obs.z[obs.N];
  return fine;
}

int CtmcPath::state_at(double t) const {
  const auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
  const auto idx = std::max<std::ptrdiff_t>(0, std::distance(jump_times.begin(), it) - 1);
  return states[static_cast<std::size_t>(idx)];
}

Vector CtmcPath::occupation(int d) const {
  Vector occ = Vector::Zero(d);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const double end = i + 1 < jump_times.size() ? jump_times[i + 1] : T;
    occ[states[i]] += end - jump_times[i];
  }
  return occ / T;
}

CtmcPath simulate_ctmc(const CtmcModel& model, double T, std::uint64_t seed) {
  validate(model);
  Rng rng(seed, kCtmcStream);
  CtmcPath path;
  path.T = T;
  int state = rng.categorical(model.nu0);
  double t = 0.0;
  path.jump_times.push_back(0.0);
  path.states.push_back(state);
  const int d = model.states();
  Vector rates(d);
  while (true) {
    const double exit_rate = -model.A(state, state);
    if (exit_rate <= 0.0) break;
    t += rng.exponential(exit_rate);
    if (t >= T) break;
    for (int j = 0; j < d; ++j) rates[j] = j == state ? 0.0 : model.A(state, j);
    state = rng.categorical(rates);
    path.jump_times.push_back(t);
    path.states.push_back(state);
  }
  return path;
}

DiffusionPath simulate_diffusion(const DiffusionModel1D& model, double T, int N, std::uint64_t seed,
                                 std::optional<double> x0) {
  validate(model);
  if (N < 1) throw Error(ErrorKind::InvalidArgument, "simulation needs N >= 1");
  Rng rng(seed, kDiffusionStream);
  DiffusionPath path{T, N, Vector(N + 1), 0};
  const double dt = T / N;
  const double sqdt = std::sqrt(dt);
  double x = x0 ? *x0 : model.prior.mean + model.prior.std * rng.normal();
  auto reflect = [&](double v) {
    // Fold back into the domain; a single fold suffices unless a step spans
    // the whole domain, in which case the value is clamped.
    if (v < model.x_min) {
      v = 2.0 * model.x_min - v;
      ++path.reflections;
    } else if (v > model.x_max) {
      v = 2.0 * model.x_max - v;
      ++path.reflections;
    }
    return std::clamp(v, model.x_min, model.x_max);
  };
  x = reflect(x);
  path.x[0] = x;
  for (int k = 0; k < N; ++k) {
    x += model.drift(x) * dt + model.sigma(x) * sqdt * rng.normal();
    x = reflect(x);
    path.x[k + 1] = x;
  }
  if (path.reflections > 0) {
    spdlog::warn("diffusion path left [{}, {}] {} time(s); reflected at the boundary", model.x_min,
                 model.x_max, path.reflections);
  }
  return path;
}

namespace {

template <class HAt>
ObservationPath accumulate_observations(double T, int N, std::uint64_t seed, bool zero_noise, HAt&& h_at) {
  Rng rng(seed, kObservationStream);
  ObservationPath obs{T, N, Vector(N + 1)};
  const double dt = T / N;
  const double sqdt = std::sqrt(dt);
  obs.z[0] = 0.0;
  for (int k = 0; k < N; ++k) {
    const double noise = rng.normal();
    obs.z[k + 1] = obs.z[k] + h_at(k) * dt + (zero_noise ? 0.0 : sqdt * noise);
  }
  return obs;
}

}  // namespace

ObservationPath simulate_observations(const CtmcPath& state, const Vector& h, int N, std::uint64_t seed,
                                      bool zero_noise) {
  if (N < 1) throw Error(ErrorKind::InvalidArgument, "observation path needs N >= 1");
  const double dt = state.T / N;
  return accumulate_observations(state.T, N, seed, zero_noise,
                                 [&](int k) { return h[state.state_at(k * dt)]; });
}

ObservationPath simulate_observations(const DiffusionPath& state, const ScalarFunction& h, int N,
                                      std::uint64_t seed, bool zero_noise) {
  if (N < 1 || state.N % N != 0) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("observation steps {} must divide the path steps {}", N, state.N));
  }
  const int stride = state.N / N;
  return accumulate_observations(state.T, N, seed, zero_noise,
                                 [&](int k) { return h(state.x[k * stride]); });
}

}  // namespace dualsmooth
