#pragma once

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <vector>

#include "decaf/causal_process.hpp"
#include "decaf/dense_net.hpp"
#include "decaf/env_transform.hpp"
#include "decaf/param_vector.hpp"
#include "decaf/training.hpp"

namespace decaf {

// psi maps each latent dim to a causal variable (0-based) or -1 (unassigned).
struct Assignment {
  std::vector<int> psi;
  int num_variables = 0;
  bool unassigned_slot = false;  // requires M >= K + 1

  int latent_dim() const { return static_cast<int>(psi.size()); }
  // Dims assigned to variable i, ascending; i = -1 gives the unassigned dims.
  std::vector<int> dims_of(int i) const;
  // Throws EmptyAssignmentError for the first listed variable without dims.
  void require_present(const std::vector<int>& variables) const;
  void validate() const;

  static Assignment identity_blocks(const std::vector<int>& dims);
};

struct LatentSequence {
  Eigen::MatrixXd z;  // T x M
  Assignment assignment;
  std::string environment;
  std::string encoder;

  int length() const { return static_cast<int>(z.rows()); }
};

// Columns of z assigned to variable i, ascending.
Eigen::MatrixXd slice_latents(const LatentSequence& seq, int i);

// Each latent dim goes to the variable whose first truth dim has the largest
// |Spearman| with it (ties to the lowest index); below `threshold`, or for a
// constant latent, the dim stays unassigned.
Assignment fit_assignment(const Eigen::MatrixXd& latents, const std::vector<Eigen::MatrixXd>& truth,
                          double threshold = 0.1);

enum class EncoderKind { kOracle, kLearnedLinear };

std::string to_string(EncoderKind k);

struct LinearEncoderConfig {
  TrainConfig train{100, 512, 1e-2, 0.0, 0.05, 0};
  int prior_hidden = 64;
  // Fresh fits start once from W = I and then from random rotations; the run
  // with the lowest final training loss is kept.
  int restarts = 4;
  double assignment_threshold = 0.1;
};

class Encoder {
 public:
  Encoder() = default;

  // z = environment coordinates of mixing^{-1}(x).
  static Encoder oracle(std::shared_ptr<const EnvironmentSpec> env);
  // z = x W + b with W stored D x M.
  static Encoder learned_linear(ParamVector params, ParamVector prior, DenseNet prior_shape,
                                Assignment assignment, std::string environment);

  EncoderKind kind() const { return kind_; }
  const std::string& environment() const { return environment_; }
  int input_dim() const { return input_dim_; }
  int latent_dim() const { return assignment_.latent_dim(); }
  const Assignment& assignment() const { return assignment_; }
  void set_assignment(Assignment a);

  // Learned-linear parameters (blocks "W", "b") and the transition prior used
  // to train them.
  const ParamVector& params() const { return params_; }
  const ParamVector& prior_params() const { return prior_params_; }
  const DenseNet& prior_net() const { return prior_net_; }

  Eigen::MatrixXd encode_rows(const Eigen::MatrixXd& x) const;
  LatentSequence encode(const Trajectory& traj) const;

 private:
  EncoderKind kind_ = EncoderKind::kOracle;
  std::string environment_;
  int input_dim_ = 0;
  Assignment assignment_;
  std::shared_ptr<const EnvironmentSpec> env_;
  ParamVector params_;
  ParamVector prior_params_;
  DenseNet prior_net_;
};

struct LinearEncoderFit {
  Encoder encoder;
  std::vector<double> curve;  // per-epoch negative log-likelihood
};

// Maximum likelihood of a linear flow z = x W + b under a factorized Gaussian
// transition prior p(z^{t+1} | z^t, I^{t+1}). psi is fitted afterwards against
// traj's ground truth. `init` continues from an existing learned encoder
// (fine-tuning, a single run); otherwise `restarts` runs are made.
LinearEncoderFit train_linear_encoder(const Trajectory& traj, const LinearEncoderConfig& config,
                                      const Encoder* init = nullptr);

// Negative log-likelihood per transition (for tests and curves).
double linear_encoder_nll(const Encoder& enc, const Trajectory& traj);

}  // namespace decaf
