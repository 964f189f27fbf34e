#pragma once

#include <Eigen/Dense>

#include <cstdint>

#include "decaf/param_vector.hpp"

namespace decaf {

// AdamW with decoupled weight decay.
struct OptimizerState {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
};

OptimizerState make_adamw(const ParamVector& params, double learning_rate,
                          double weight_decay = 0.0);

// One update in place. lr_scale multiplies the learning rate (schedules).
// Throws NumericError on a non-finite gradient and ContractViolation on a
// shape mismatch; on error neither params nor state are modified.
void adamw_step(OptimizerState& state, ParamVector& params, const ParamVector& grad,
                double lr_scale = 1.0);

// Linear warmup followed by cosine decay to zero over total_steps.
double cosine_warmup_factor(std::int64_t step, std::int64_t warmup_steps,
                            std::int64_t total_steps);

}  // namespace decaf
