#pragma once

#include <Eigen/Dense>

namespace dualsmooth {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Time-indexed array: row k holds the field at time step k.
using Trajectory = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace dualsmooth
