#pragma once

#include <Eigen/Dense>

namespace segnn {

// Row-major layouts throughout: rows are points, columns are channels,
// matching the on-disk row-major dumps.
using MatX = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mat3 = Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>;
using VecX = Eigen::VectorXd;
using VecXf = Eigen::VectorXf;
using VecXi = Eigen::VectorXi;
using Vec3 = Eigen::Vector3d;

}  // namespace segnn
