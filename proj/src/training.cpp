#include "decaf/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "decaf/errors.hpp"
#include "decaf/optimizer.hpp"
#include "decaf/random.hpp"

namespace decaf {

TrainResult train_minibatch(ParamVector& params, int n, const TrainConfig& config,
                            const BatchLoss& loss, const std::function<void(int)>& on_epoch) {
  if (n <= 0) throw ContractViolation("train_minibatch: no samples");
  if (config.batch_size <= 0 || config.epochs < 0) {
    throw ContractViolation("train_minibatch: batch size must be positive and epochs non-negative");
  }
  TrainResult result;
  if (config.epochs == 0) return result;

  OptimizerState opt = make_adamw(params, config.learning_rate, config.weight_decay);
  const int batches = (n + config.batch_size - 1) / config.batch_size;
  const std::int64_t total = static_cast<std::int64_t>(batches) * config.epochs;
  const std::int64_t warmup =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(config.warmup_fraction * total)));
  Rng rng = make_rng(config.seed, 0x7472);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<int> order = shuffled_indices(n, rng);
    double weighted = 0.0;
    for (int b = 0; b < batches; ++b) {
      const int begin = b * config.batch_size;
      const int count = std::min(config.batch_size, n - begin);
      const std::span<const int> batch(order.data() + begin, static_cast<std::size_t>(count));
      ValueAndGrad vg = value_and_gradient(
          [&](ad::Tape& tape, const BoundParams& bound) { return loss(tape, bound, batch); }, params);
      adamw_step(opt, params, vg.grad, cosine_warmup_factor(opt.step, warmup, total));
      weighted += vg.value * count;
    }
    result.epoch_loss.push_back(weighted / n);
    if (on_epoch) on_epoch(epoch);
  }
  result.steps = opt.step;
  return result;
}

double evaluate_loss(const ParamVector& params, int n, int batch_size, const BatchLoss& loss) {
  if (n <= 0 || batch_size <= 0) throw ContractViolation("evaluate_loss: need samples and a positive batch size");
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  double weighted = 0.0;
  for (int begin = 0; begin < n; begin += batch_size) {
    const int count = std::min(batch_size, n - begin);
    ad::Tape tape;
    BoundParams bound(tape, params);
    const ad::Var l = loss(tape, bound, std::span<const int>(idx.data() + begin, count));
    if (!std::isfinite(l.scalar())) throw NumericError("evaluate_loss: non-finite loss");
    weighted += l.scalar() * count;
  }
  return weighted / n;
}

}  // namespace decaf
