#pragma once

#include "qsim/env.hpp"

#include <Eigen/Dense>

#include <vector>

namespace qsim {

/// One environment step as used by target construction and TD training.
/// `reward` is in training scale (standardized when the run enables it).
struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd next_state;
  std::vector<Eigen::VectorXd> obs;
  std::vector<Eigen::VectorXd> next_obs;
  std::vector<AvailMask> avail;
  std::vector<AvailMask> next_avail;
  JointAction actions;
  double reward = 0.0;
  bool terminal = false;
};

}  // namespace qsim
