#pragma once

namespace dualsmooth::detail {

// One classical Runge-Kutta step of size dt (negative for backward sweeps).
// `rhs(y, s)` returns the derivative at state y and step fraction s, with
// s in {0, 0.5, 1}; callers use s to pick the observation value and control
// at the matching stage time.
template <class State, class Rhs>
State rk4_step(const State& y, double dt, Rhs&& rhs) {
  const State k1 = rhs(y, 0.0);
  const State k2 = rhs(State(y + (0.5 * dt) * k1), 0.5);
  const State k3 = rhs(State(y + (0.5 * dt) * k2), 0.5);
  const State k4 = rhs(State(y + dt * k3), 1.0);
  return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Cubic Hermite value at the midpoint of [t0, t0 + dt] from end values and slopes.
template <class State>
State hermite_midpoint(const State& y0, const State& y1, const State& dy0, const State& dy1,
                       double dt) {
  return 0.5 * (y0 + y1) + (dt / 8.0) * (dy0 - dy1);
}

}  // namespace dualsmooth::detail
