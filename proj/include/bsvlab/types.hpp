#pragma once

#include <Eigen/Dense>

namespace bsvlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

}  // namespace bsvlab
