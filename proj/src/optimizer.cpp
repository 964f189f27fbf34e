#include "decaf/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "decaf/errors.hpp"

namespace decaf {

OptimizerState make_adamw(const ParamVector& params, double learning_rate, double weight_decay) {
  if (!(learning_rate > 0.0)) throw ContractViolation("AdamW: learning rate must be positive");
  if (weight_decay < 0.0) throw ContractViolation("AdamW: weight decay must be non-negative");
  OptimizerState s;
  s.learning_rate = learning_rate;
  s.weight_decay = weight_decay;
  s.first_moment = Eigen::VectorXd::Zero(params.size());
  s.second_moment = Eigen::VectorXd::Zero(params.size());
  return s;
}

void adamw_step(OptimizerState& state, ParamVector& params, const ParamVector& grad,
                double lr_scale) {
  if (grad.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ContractViolation(fmt::format("adamw_step: size mismatch (params {}, grad {}, moments {})",
                                        params.size(), grad.size(), state.first_moment.size()));
  }
  if (auto bad = grad.first_non_finite_block()) {
    throw NumericError(fmt::format("adamw_step: non-finite gradient in block '{}'", *bad));
  }
  const double lr = state.learning_rate * lr_scale;
  const std::int64_t t = state.step + 1;
  const Eigen::VectorXd& g = grad.values();
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * g;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * g.cwiseProduct(g);
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  Eigen::VectorXd& p = params.values();
  p *= (1.0 - lr * state.weight_decay);
  p.array() -= lr * (state.first_moment.array() / bc1) /
               ((state.second_moment.array() / bc2).sqrt() + state.eps);
  state.step = t;
}

double cosine_warmup_factor(std::int64_t step, std::int64_t warmup_steps,
                            std::int64_t total_steps) {
  double f = 1.0;
  if (total_steps > 0) {
    const double progress =
        std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
    f = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  if (warmup_steps > 0 && step < warmup_steps) {
    f *= static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  return f;
}

}  // namespace decaf
