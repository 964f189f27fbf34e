#pragma once

// Next-step intervention-target classifier, its per-(k, i, j) error-rate
// tensors and the changed-variable detector built on them.
//
// Samples are transitions t = 1..T-1: head (i, j) sees concat(z^{t-1},
// z^t_{psi_i}) and predicts I^t_j.

#include <Eigen/Dense>

#include <json.hpp>

#include <string>
#include <string_view>
#include <vector>

#include "decaf/causal_process.hpp"
#include "decaf/dense_net.hpp"
#include "decaf/representation.hpp"
#include "decaf/training.hpp"

namespace decaf {

struct ClassifierConfig {
  TrainConfig train{100, 512, 1e-3, 0.0, 0.05, 0};
  int hidden = 32;  // per head
};

// The K heads of block i share one masked net [M + |psi_i|, hidden*K, K]:
// output j reads only its own hidden slice, so the heads are independent.
class TargetClassifier {
 public:
  TargetClassifier() = default;
  // Seeded initialization (config.train.seed); blocks without latent dims get
  // no heads.
  static TargetClassifier initial(const Assignment& assignment, int num_targets, const ClassifierConfig& config);

  const Assignment& assignment() const { return assignment_; }
  int latent_dim() const { return assignment_.latent_dim(); }
  int num_blocks() const { return assignment_.num_variables; }
  int num_targets() const { return num_targets_; }
  const ClassifierConfig& config() const { return config_; }
  bool has_block(int i) const { return !nets_[i].layer_sizes().empty(); }
  const DenseNet& block_net(int i) const { return nets_[i]; }
  DenseNet& block_net(int i) { return nets_[i]; }

  // Transition inputs of block i: rows concat(z^{t-1}, z^t_{psi_i}).
  Eigen::MatrixXd block_inputs(int i, const Eigen::MatrixXd& z) const;
  // (T-1) x K logits of block i.
  Eigen::MatrixXd logits(int i, const Eigen::MatrixXd& z) const;
  // 1 iff sigmoid(logit) > 0.5.
  Eigen::MatrixXi predict(int i, const Eigen::MatrixXd& z) const;

  // Sum over heads of the mean BCE on all transitions of (z, targets).
  double loss(const Eigen::MatrixXd& z, const Eigen::MatrixXi& targets) const;

  // All head parameters with block prefixes "h<i>/".
  ParamVector packed_params() const;
  void unpack_params(const ParamVector& packed);

 private:
  Assignment assignment_;
  int num_targets_ = 0;
  ClassifierConfig config_;
  std::vector<DenseNet> nets_;
};

struct ClassifierFit {
  TargetClassifier classifier;
  double initial_loss = 0.0;
  std::vector<double> curve;  // per-epoch mean training loss
};

// Throws DegenerateTargetError naming the first constant target column (over
// the labelled steps 1..T-1) and ContractViolation on shape mismatches.
ClassifierFit train_classifier(const LatentSequence& latents, const Eigen::MatrixXi& targets,
                               const ClassifierConfig& config);
ClassifierFit train_classifier(const LatentSequence& latents, const Trajectory& traj,
                               const ClassifierConfig& config);

enum class DetectionCriterion { kFprOnly, kFprOrFnr };

std::string to_string(DetectionCriterion c);
DetectionCriterion detection_criterion_from_string(std::string_view s);

// FPR / FNR indexed (conditioning intervention k, block i, target j). A rate
// is evaluable iff its denominator is at least min_support; otherwise it is
// NaN.
struct RateTensor {
  int num_variables = 0;  // K
  int min_support = 5;
  std::vector<int> tp, fp, tn, fn;
  std::vector<double> fpr, fnr;

  int index(int k, int i, int j) const { return (k * num_variables + i) * num_variables + j; }
  int negatives(int k, int i, int j) const { return fp[index(k, i, j)] + tn[index(k, i, j)]; }
  int positives(int k, int i, int j) const { return tp[index(k, i, j)] + fn[index(k, i, j)]; }
  bool fpr_evaluable(int k, int i, int j) const { return negatives(k, i, j) >= min_support; }
  bool fnr_evaluable(int k, int i, int j) const { return positives(k, i, j) >= min_support; }
  double fpr_at(int k, int i, int j) const { return fpr[index(k, i, j)]; }
  double fnr_at(int k, int i, int j) const { return fnr[index(k, i, j)]; }
};

// Rates from hard predictions. predictions[i] is n x K (empty = block i has
// no head); labels and conditioning are n x K bits, row r of each aligned.
RateTensor rates_from_predictions(const std::vector<Eigen::MatrixXi>& predictions, const Eigen::MatrixXi& labels,
                                  const Eigen::MatrixXi& conditioning, int min_support = 5);

// Conditioning subset for k is the transitions whose label row has I_k = 1.
RateTensor compute_rates(const TargetClassifier& clf, const LatentSequence& latents, const Eigen::MatrixXi& targets,
                         int min_support = 5);

struct ChangeReport {
  std::vector<int> detected;  // ascending
  double tau = 0.0;
  DetectionCriterion criterion = DetectionCriterion::kFprOnly;
  int num_variables = 0;
  // |target - source| per cell, NaN where either side is not evaluable.
  std::vector<double> fpr_delta, fnr_delta;
  // Max delta under the criterion per variable; NaN without evaluable cells.
  std::vector<double> max_delta;
  std::vector<int> excluded;  // variables without any evaluable cell
  std::vector<std::string> warnings;

  bool is_detected(int j) const;
};

ChangeReport detect_changes(const RateTensor& source, const RateTensor& target, double tau,
                            DetectionCriterion criterion = DetectionCriterion::kFprOnly);

nlohmann::json to_json(const ChangeReport& report);
ChangeReport change_report_from_json(const nlohmann::json& j);

}  // namespace decaf
