#pragma once

#include <Eigen/Dense>

namespace tacmpc {

using Scalar = double;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using VecXf = Eigen::VectorXf;

/// Two-agent quantities are always stored agent-1 first.
inline constexpr int kNumAgents = 2;

}  // namespace tacmpc
