#include "dualsmooth/grid_smoother.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "dualsmooth/error.hpp"

namespace dualsmooth::grid {

Vector Tridiagonal::apply(const Vector& f) const {
  const auto n = size();
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double acc = diag[i] * f[i];
    if (i > 0) acc += lower[i] * f[i - 1];
    if (i + 1 < n) acc += upper[i] * f[i + 1];
    out[i] = acc;
  }
  return out;
}

Vector Tridiagonal::tilted_apply(const Vector& w) const {
  const auto n = size();
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double acc = diag[i];
    if (i > 0 && lower[i] != 0.0) acc += lower[i] * std::exp(w[i - 1] - w[i]);
    if (i + 1 < n && upper[i] != 0.0) acc += upper[i] * std::exp(w[i + 1] - w[i]);
    out[i] = acc;
  }
  return out;
}

Tridiagonal Tridiagonal::transpose() const {
  const auto n = size();
  Tridiagonal t{Vector::Zero(n), diag, Vector::Zero(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i > 0) t.lower[i] = upper[i - 1];
    if (i + 1 < n) t.upper[i] = lower[i + 1];
  }
  return t;
}

Matrix Tridiagonal::dense() const {
  const auto n = size();
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    m(i, i) = diag[i];
    if (i > 0) m(i, i - 1) = lower[i];
    if (i + 1 < n) m(i, i + 1) = upper[i];
  }
  return m;
}

namespace {

// Jump-process generator for drift b and diffusion sigma on cells of width dx.
Tridiagonal jump_generator(const Vector& b, const Vector& sigma, double dx, long* upwind_cells) {
  const auto n = b.size();
  Tridiagonal L{Vector::Zero(n), Vector::Zero(n), Vector::Zero(n)};
  long upwinded = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double diffusion = 0.5 * sigma[i] * sigma[i] / (dx * dx);
    double up = diffusion + 0.5 * b[i] / dx;
    double down = diffusion - 0.5 * b[i] / dx;
    if (up < 0.0 || down < 0.0) {
      up = diffusion + std::max(b[i], 0.0) / dx;
      down = diffusion + std::max(-b[i], 0.0) / dx;
      ++upwinded;
    }
    if (i == 0) down = 0.0;
    if (i + 1 == n) up = 0.0;
    L.lower[i] = down;
    L.upper[i] = up;
    L.diag[i] = -(up + down);
  }
  if (upwind_cells != nullptr) *upwind_cells = upwinded;
  return L;
}

}  // namespace

GridOperators build_grid_operators(const DiffusionModel1D& model) {
  validate(model);
  GridOperators ops;
  ops.x = model.grid();
  ops.dx = model.dx();
  const auto n = ops.x.size();
  ops.sigma.resize(n);
  ops.drift.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    ops.drift[i] = model.drift(ops.x[i]);
    ops.sigma[i] = model.sigma(ops.x[i]);
    ops.cell_peclet =
        std::max(ops.cell_peclet, std::abs(ops.drift[i]) * ops.dx / (ops.sigma[i] * ops.sigma[i]));
  }
  if (ops.cell_peclet > 2.0) {
    spdlog::warn("GridTooCoarse: cell Peclet number {:.3g} exceeds 2; refine the grid", ops.cell_peclet);
  }
  ops.generator = jump_generator(ops.drift, ops.sigma, ops.dx, &ops.upwind_cells);
  ops.adjoint = ops.generator.transpose();
  return ops;
}

Tridiagonal controlled_generator(const GridOperators& ops, const Vector& control) {
  if (control.size() != ops.x.size()) throw Error(ErrorKind::BadShape, "control field has the wrong size");
  const Vector b = ops.drift + ops.sigma.cwiseProduct(control);
  return jump_generator(b, ops.sigma, ops.dx, nullptr);
}

}  // namespace dualsmooth::grid
