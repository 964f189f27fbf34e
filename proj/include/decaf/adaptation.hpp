#pragma once

// Adaptation of the changed latent block: a factorized conditional Gaussian
// transition prior, maximum-likelihood training of the flow on target data
// with an auxiliary target classifier, and substitution of r = NF(z_ch).

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "decaf/flow.hpp"
#include "decaf/representation.hpp"
#include "decaf/training.hpp"

namespace decaf {

struct PriorConfig {
  int hidden = 64;  // per latent dim
  double sigma_floor = 1e-3;
  double psi_init_logit = 1.0;  // logit bump toward the initial assignment
};

// p(r^{t+1} | r^t, I^{t+1}_ch) = prod_d N(r^{t+1}_d; mu_d, sigma_d^2) with
// (mu_d, log sigma_d^2) from a net over (r^t, b_d). b_d is the target bit of
// variable psi(d); before hardening it is the softmax(psi_logits_d)-weighted
// mix of the K_ch bits. The per-dim nets share one masked net
// [2 M_ch, hidden * M_ch, 2 M_ch].
class TransitionPrior {
 public:
  TransitionPrior() = default;
  // initial_psi[d] in [0, K_ch); net weights seeded from rng.
  static TransitionPrior initial(int dim, int num_variables, const std::vector<int>& initial_psi,
                                 const PriorConfig& config, Rng& rng);

  int dim() const { return dim_; }
  int num_variables() const { return num_variables_; }
  const PriorConfig& config() const { return config_; }
  const DenseNet& net() const { return net_; }
  // Blocks "W0".."b1" and "psi_logits" (M_ch x K_ch).
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }

  bool hardened() const { return hardened_; }
  const std::vector<int>& psi() const { return psi_; }
  // Argmax of the logits per dim, ties to the lowest variable index.
  void harden();
  // Hard assignment without training (tests, loading).
  void set_psi(const std::vector<int>& psi);
  // Soft (or hard, once hardened) M_ch x K_ch assignment probabilities.
  Eigen::MatrixXd assignment_probs() const;

  // Taped per-row log-density (n x 1). Adds the number of sigma entries held
  // at the floor to *floor_hits when given.
  ad::Var log_prob(const BoundParams& bound, const ad::Var& r_next, const ad::Var& r_prev,
                   const Eigen::MatrixXd& targets, std::string_view prefix = "",
                   std::int64_t* floor_hits = nullptr) const;
  // Per-row, per-dim log-densities (n x M_ch).
  Eigen::MatrixXd log_prob_dims(const Eigen::MatrixXd& r_next, const Eigen::MatrixXd& r_prev,
                                const Eigen::MatrixXd& targets, std::int64_t* floor_hits = nullptr) const;
  // Conditioner outputs (n x 2 M_ch): means then log-variances.
  Eigen::MatrixXd conditioner(const Eigen::MatrixXd& r_prev, const Eigen::MatrixXd& targets) const;

  // Cumulative count of floored sigma entries over non-taped evaluations.
  std::int64_t floor_hits() const { return floor_hits_; }

 private:
  Eigen::MatrixXd bits(const Eigen::MatrixXd& targets) const;

  int dim_ = 0;
  int num_variables_ = 0;
  PriorConfig config_;
  DenseNet net_;
  ParamVector params_;
  std::vector<int> psi_;
  bool hardened_ = false;
  mutable std::int64_t floor_hits_ = 0;
};

// Sum of per-dim log-densities for one transition.
double prior_log_prob(const TransitionPrior& prior, const Eigen::VectorXd& r_next, const Eigen::VectorXd& r_prev,
                      const Eigen::VectorXd& targets_ch);
// Log-density of variable c's factor (dims with psi = c) for one transition.
double prior_factor_log_prob(const TransitionPrior& prior, int c, const Eigen::VectorXd& r_next,
                             const Eigen::VectorXd& r_prev, const Eigen::VectorXd& targets_ch);

struct AdaptationConfig {
  FlowConfig flow;
  PriorConfig prior;
  TrainConfig train{300, 1024, 1e-2, 5e-3, 0.05, 0};
  double aux_weight = 2.0;
  double beta_reg = 2.0;
  double beta_alo = 2.0;
  int aux_hidden = 32;
};

// Flow, prior and one auxiliary head per changed variable predicting
// I^{t+1}_c from (r^t, r^{t+1} weighted by assignment to c).
struct AdaptationModel {
  AffineAutoregressiveFlow flow;
  TransitionPrior prior;
  std::vector<DenseNet> aux;

  // "flow/", "prior/" and "aux<c>/" blocks.
  ParamVector packed_params() const;
  void unpack_params(const ParamVector& packed);
};

struct LossParts {
  double log_likelihood = 0.0;  // mean per transition, flow log-det included
  double aux = 0.0;
  double reg = 0.0;
  double alo = 0.0;
};

// -mean LL + aux_weight * sum_c BCE_c + beta_reg * mean ||r^{t+1}||^2
//   + beta_alo * (log K_ch - H(mean assignment)).
ad::Var adaptation_loss(const AdaptationModel& model, const AdaptationConfig& config, const BoundParams& bound,
                        const Eigen::MatrixXd& z_prev, const Eigen::MatrixXd& z_next, const Eigen::MatrixXd& targets,
                        LossParts* parts = nullptr, std::int64_t* floor_hits = nullptr);

struct AdaptationResult {
  AdaptationModel model;
  std::vector<int> changed_variables;  // global variable ids, ascending
  std::vector<int> changed_dims;       // latent dims replaced by r, ascending
  std::vector<int> psi_ch;             // hardened, index into changed_variables
  std::vector<double> curve;           // per-epoch mean log-likelihood
  std::int64_t floor_hits = 0;

  bool is_identity() const { return changed_dims.empty(); }
};

// Trains on the frozen latents of the target trajectory. changed_variables
// picks the block z_ch (their dims under latents.assignment, in ascending
// dim order); psi_ch starts from that assignment. Empty changed_variables
// gives an identity result. Targets are the full T x K target matrix.
AdaptationResult train_adaptation(const LatentSequence& latents, const Eigen::MatrixXi& targets,
                                  const std::vector<int>& changed_variables, const AdaptationConfig& config);

// Replaces the changed dims by NF(z_ch) and their assignment by psi_ch.
LatentSequence substitute(const LatentSequence& latents, const AdaptationResult& result);

}  // namespace decaf
