#pragma once

#include <Eigen/Dense>

namespace mcbsde {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

inline constexpr const char* kVersion = "0.1.0";

} // namespace mcbsde
