#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "decaf/autodiff.hpp"
#include "decaf/param_vector.hpp"
#include "decaf/random.hpp"

namespace decaf {

enum class Activation { kSwish, kIdentity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

// Fully connected network: layer_sizes {n0, n1, ..., nL} gives L affine
// layers. The activation follows every layer except the last.
//
// Parameters live in a ParamVector with blocks "W<l>" (n_l x n_{l+1}) and
// "b<l>" (1 x n_{l+1}). Optional fixed 0/1 masks (same shape as W<l>) turn the
// net into a MADE-style masked network.
class DenseNet {
 public:
  DenseNet() = default;
  // Zero-initialized parameters.
  DenseNet(std::vector<int> layer_sizes, Activation activation);
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  static DenseNet random(std::vector<int> layer_sizes, Activation activation, Rng& rng);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  Activation activation() const { return activation_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }

  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }
  Eigen::Map<Eigen::MatrixXd> weight(int layer) { return params_.view(2 * layer); }
  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const { return params_.view(2 * layer); }
  Eigen::Map<Eigen::MatrixXd> bias(int layer) { return params_.view(2 * layer + 1); }
  Eigen::Map<const Eigen::MatrixXd> bias(int layer) const { return params_.view(2 * layer + 1); }

  void set_masks(std::vector<Eigen::MatrixXd> masks);
  const std::vector<Eigen::MatrixXd>& masks() const { return masks_; }

  // Single input; throws ContractViolation on a length mismatch.
  Eigen::VectorXd forward(std::span<const double> input) const;
  // Batched evaluation, one sample per row.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs) const;
  // Taped evaluation with parameters taken from `bound`, looking up blocks
  // "<prefix>W<l>" / "<prefix>b<l>".
  ad::Var forward(const BoundParams& bound, const ad::Var& inputs,
                  std::string_view prefix = "") const;

 private:
  std::vector<int> sizes_;
  Activation activation_ = Activation::kIdentity;
  ParamVector params_;
  std::vector<Eigen::MatrixXd> masks_;
};

}  // namespace decaf
