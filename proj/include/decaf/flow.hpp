#pragma once

// Affine autoregressive normalizing flow on the changed latent block.
//
// Each block applies ActNorm (x * exp(logs) + loc), then a MADE affine layer
// x_k * exp(s_k(x_<k)) + m_k(x_<k) with s = L tanh(raw / L), then reverses
// the dimension order between blocks; the output is in the input order. The
// log-determinant is the sum of ActNorm log-scales plus the sum of s over all
// blocks.

#include <Eigen/Dense>

#include <string_view>
#include <utility>

#include "decaf/autodiff.hpp"
#include "decaf/dense_net.hpp"
#include "decaf/param_vector.hpp"
#include "decaf/random.hpp"

namespace decaf {

struct FlowConfig {
  int depth = 2;
  int hidden_per_dim = 16;
  double scale_limit = 3.0;  // L
};

struct FlowOutput {
  Eigen::MatrixXd r;        // n x d
  Eigen::VectorXd log_det;  // n
};

class AffineAutoregressiveFlow {
 public:
  AffineAutoregressiveFlow() = default;
  // Forward map is the identity: zero ActNorm and zero MADE output layer;
  // the MADE hidden layer is seeded from rng.
  static AffineAutoregressiveFlow identity(int dim, const FlowConfig& config, Rng& rng);
  // All parameters random; output-layer and ActNorm values scaled by
  // `strength` (test instances).
  static AffineAutoregressiveFlow random(int dim, const FlowConfig& config, Rng& rng, double strength = 0.5);

  int dim() const { return dim_; }
  int depth() const { return config_.depth; }
  const FlowConfig& config() const { return config_; }
  const DenseNet& made() const { return made_; }

  // Blocks "f<l>/an_loc", "f<l>/an_logs" (1 x d) and "f<l>/W0".."f<l>/b1".
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }

  // Taped forward on rows of z; returns (r, n x 1 log-det). Parameter names
  // are looked up as "<prefix>f<l>/...".
  std::pair<ad::Var, ad::Var> forward(const BoundParams& bound, const ad::Var& z, std::string_view prefix = "") const;

  // Throws NumericError naming the block that produced a non-finite value.
  FlowOutput forward_rows(const Eigen::MatrixXd& z) const;
  std::pair<Eigen::VectorXd, double> forward(const Eigen::VectorXd& z) const;
  // Sequential per-dimension inversion; log_det is that of the inverse map.
  FlowOutput inverse_rows(const Eigen::MatrixXd& r) const;

 private:
  Eigen::MatrixXd made_outputs(int block, const Eigen::MatrixXd& x) const;

  int dim_ = 0;
  FlowConfig config_;
  DenseNet made_;  // shape and masks only
  ParamVector params_;
};

}  // namespace decaf
