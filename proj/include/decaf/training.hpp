#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "decaf/autodiff.hpp"
#include "decaf/param_vector.hpp"

namespace decaf {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 512;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double warmup_fraction = 0.05;  // share of total steps spent warming up
  std::uint64_t seed = 0;
};

// Loss on the samples listed in `batch`.
using BatchLoss =
    std::function<ad::Var(ad::Tape&, const BoundParams&, std::span<const int> batch)>;

struct TrainResult {
  std::vector<double> epoch_loss;  // sample-weighted mean batch loss per epoch
  std::int64_t steps = 0;
};

// Minibatch AdamW over a reshuffled permutation of [0, n) per epoch, with the
// cosine-warmup learning-rate factor. Deterministic given config.seed.
// `on_epoch` (optional) runs after each epoch with the epoch index.
TrainResult train_minibatch(ParamVector& params, int n, const TrainConfig& config,
                            const BatchLoss& loss,
                            const std::function<void(int)>& on_epoch = {});

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, std::span<const int> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
  return out;
}

// Mean of `loss` over all samples in batches, without updating anything.
double evaluate_loss(const ParamVector& params, int n, int batch_size, const BatchLoss& loss);

}  // namespace decaf
