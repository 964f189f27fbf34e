#include "decaf/target_classifier.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "decaf/errors.hpp"

namespace decaf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string block_prefix(int i) { return fmt::format("h{}/", i); }

// Layer-1 mask: output j reads hidden units [j*hidden, (j+1)*hidden).
Eigen::MatrixXd head_mask(int hidden, int k) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(hidden * k, k);
  for (int j = 0; j < k; ++j) m.block(j * hidden, j, hidden, 1).setOnes();
  return m;
}

void check_targets(const LatentSequence& latents, const Eigen::MatrixXi& targets, int k) {
  if (targets.rows() != latents.length()) {
    throw ContractViolation(
        fmt::format("target classifier: {} target rows for {} latent rows", targets.rows(), latents.length()));
  }
  if (targets.cols() != k) {
    throw ContractViolation(fmt::format("target classifier: {} target columns, expected {}", targets.cols(), k));
  }
  if ((targets.array() != 0 && targets.array() != 1).any()) {
    throw ContractViolation("target classifier: targets must be 0/1");
  }
}

}  // namespace

TargetClassifier TargetClassifier::initial(const Assignment& assignment, int num_targets,
                                           const ClassifierConfig& config) {
  assignment.validate();
  if (num_targets < 1 || config.hidden < 1) {
    throw ContractViolation("TargetClassifier: need at least one target and a positive hidden width");
  }
  TargetClassifier c;
  c.assignment_ = assignment;
  c.num_targets_ = num_targets;
  c.config_ = config;
  Rng rng = make_rng(config.train.seed, 0x636c66);
  const int m = assignment.latent_dim();
  for (int i = 0; i < assignment.num_variables; ++i) {
    const int di = static_cast<int>(assignment.dims_of(i).size());
    if (di == 0) {
      c.nets_.emplace_back();
      continue;
    }
    const int width = config.hidden * num_targets;
    DenseNet net = DenseNet::random({m + di, width, num_targets}, Activation::kSwish, rng);
    net.set_masks({Eigen::MatrixXd::Ones(m + di, width), head_mask(config.hidden, num_targets)});
    net.weight(1) = net.weight(1).cwiseProduct(net.masks()[1]);
    // Each head sees fan-in `hidden`, not the fused width.
    net.weight(1) *= std::sqrt(static_cast<double>(width) / config.hidden);
    c.nets_.push_back(std::move(net));
  }
  return c;
}

Eigen::MatrixXd TargetClassifier::block_inputs(int i, const Eigen::MatrixXd& z) const {
  if (z.cols() != latent_dim()) {
    throw ContractViolation(fmt::format("TargetClassifier: {} latent columns, expected {}", z.cols(), latent_dim()));
  }
  if (z.rows() < 2) throw ContractViolation("TargetClassifier: need at least two steps");
  const std::vector<int> dims = assignment_.dims_of(i);
  const Eigen::Index n = z.rows() - 1;
  Eigen::MatrixXd x(n, z.cols() + static_cast<Eigen::Index>(dims.size()));
  x.leftCols(z.cols()) = z.topRows(n);
  for (std::size_t c = 0; c < dims.size(); ++c) {
    x.col(z.cols() + static_cast<Eigen::Index>(c)) = z.col(dims[c]).tail(n);
  }
  return x;
}

Eigen::MatrixXd TargetClassifier::logits(int i, const Eigen::MatrixXd& z) const {
  if (i < 0 || i >= num_blocks()) throw ContractViolation(fmt::format("TargetClassifier: block {} out of range", i));
  if (!has_block(i)) throw EmptyAssignmentError(i, fmt::format("TargetClassifier: block {} has no heads", i));
  return nets_[i].forward_batch(block_inputs(i, z));
}

Eigen::MatrixXi TargetClassifier::predict(int i, const Eigen::MatrixXd& z) const {
  // sigmoid(l) > 0.5 iff l > 0
  return (logits(i, z).array() > 0.0).cast<int>().matrix();
}

double TargetClassifier::loss(const Eigen::MatrixXd& z, const Eigen::MatrixXi& targets) const {
  const Eigen::Index n = z.rows() - 1;
  if (targets.rows() != z.rows() || targets.cols() != num_targets_) {
    throw ContractViolation("TargetClassifier::loss: target shape mismatch");
  }
  const Eigen::ArrayXXd y = targets.bottomRows(n).cast<double>().array();
  double total = 0.0;
  for (int i = 0; i < num_blocks(); ++i) {
    if (!has_block(i)) continue;
    const Eigen::ArrayXXd l = logits(i, z).array();
    // softplus(l) - y*l, stable form
    const Eigen::ArrayXXd sp = l.max(0.0) + (-l.abs()).exp().log1p();
    total += (sp - y * l).sum() / static_cast<double>(n);
  }
  return total;
}

ParamVector TargetClassifier::packed_params() const {
  std::vector<std::pair<std::string, const ParamVector*>> parts;
  for (int i = 0; i < num_blocks(); ++i) {
    if (has_block(i)) parts.emplace_back(block_prefix(i), &nets_[i].params());
  }
  return ParamVector::concat(parts);
}

void TargetClassifier::unpack_params(const ParamVector& packed) {
  std::vector<std::pair<std::string, ParamVector*>> parts;
  for (int i = 0; i < num_blocks(); ++i) {
    if (has_block(i)) parts.emplace_back(block_prefix(i), &nets_[i].params());
  }
  packed.split_into(parts);
}

ClassifierFit train_classifier(const LatentSequence& latents, const Eigen::MatrixXi& targets,
                               const ClassifierConfig& config) {
  const int k = latents.assignment.num_variables;
  check_targets(latents, targets, k);
  if (latents.length() < 2) throw ContractViolation("train_classifier: need at least two steps");
  const Eigen::Index n = latents.length() - 1;
  for (int j = 0; j < k; ++j) {
    const int positives = targets.col(j).tail(n).sum();
    if (positives == 0 || positives == n) {
      throw DegenerateTargetError(
          j, fmt::format("train_classifier: target {} is constantly {} over the labelled steps", j, positives ? 1 : 0));
    }
  }

  ClassifierFit fit;
  fit.classifier = TargetClassifier::initial(latents.assignment, k, config);
  TargetClassifier& clf = fit.classifier;
  fit.initial_loss = clf.loss(latents.z, targets);

  std::vector<Eigen::MatrixXd> inputs(k);
  for (int i = 0; i < k; ++i)
    if (clf.has_block(i)) inputs[i] = clf.block_inputs(i, latents.z);
  const Eigen::MatrixXd labels = targets.bottomRows(n).cast<double>();

  ParamVector params = clf.packed_params();
  if (params.size() == 0) throw EmptyAssignmentError(0, "train_classifier: no block has latent dims");
  const BatchLoss loss = [&](ad::Tape& tape, const BoundParams& bound, std::span<const int> batch) {
    const Eigen::MatrixXd y = take_rows(labels, batch);
    ad::Var total;
    for (int i = 0; i < k; ++i) {
      if (!clf.has_block(i)) continue;
      const ad::Var l = clf.block_net(i).forward(bound, tape.constant(take_rows(inputs[i], batch)), block_prefix(i));
      const ad::Var term = ad::sum(ad::bce_with_logits(l, y));
      total = total.valid() ? ad::add(total, term) : term;
    }
    return ad::scale(total, 1.0 / static_cast<double>(batch.size()));
  };
  const TrainResult tr = train_minibatch(params, static_cast<int>(n), config.train, loss);
  clf.unpack_params(params);
  fit.curve = tr.epoch_loss;
  return fit;
}

ClassifierFit train_classifier(const LatentSequence& latents, const Trajectory& traj, const ClassifierConfig& config) {
  return train_classifier(latents, traj.targets, config);
}

std::string to_string(DetectionCriterion c) { return c == DetectionCriterion::kFprOnly ? "fpr-only" : "fpr-or-fnr"; }

DetectionCriterion detection_criterion_from_string(std::string_view s) {
  if (s == "fpr-only") return DetectionCriterion::kFprOnly;
  if (s == "fpr-or-fnr") return DetectionCriterion::kFprOrFnr;
  throw ContractViolation(fmt::format("unknown detection criterion '{}'", s));
}

RateTensor rates_from_predictions(const std::vector<Eigen::MatrixXi>& predictions, const Eigen::MatrixXi& labels,
                                  const Eigen::MatrixXi& conditioning, int min_support) {
  const int k = static_cast<int>(labels.cols());
  if (static_cast<int>(predictions.size()) != k || conditioning.cols() != k || conditioning.rows() != labels.rows()) {
    throw ContractViolation("rates_from_predictions: need K prediction blocks and K-column aligned labels");
  }
  if (min_support < 1) throw ContractViolation("rates_from_predictions: min_support must be positive");
  for (const auto& p : predictions) {
    if (p.size() != 0 && (p.rows() != labels.rows() || p.cols() != k)) {
      throw ContractViolation("rates_from_predictions: prediction block shape mismatch");
    }
  }
  RateTensor r;
  r.num_variables = k;
  r.min_support = min_support;
  const std::size_t cells = static_cast<std::size_t>(k) * k * k;
  r.tp.assign(cells, 0);
  r.fp.assign(cells, 0);
  r.tn.assign(cells, 0);
  r.fn.assign(cells, 0);
  for (Eigen::Index t = 0; t < labels.rows(); ++t) {
    for (int kk = 0; kk < k; ++kk) {
      if (conditioning(t, kk) == 0) continue;
      for (int i = 0; i < k; ++i) {
        if (predictions[i].size() == 0) continue;
        for (int j = 0; j < k; ++j) {
          const int c = r.index(kk, i, j);
          const bool y = labels(t, j) != 0;
          const bool p = predictions[i](t, j) != 0;
          if (y) {
            (p ? r.tp : r.fn)[c]++;
          } else {
            (p ? r.fp : r.tn)[c]++;
          }
        }
      }
    }
  }
  r.fpr.assign(cells, kNaN);
  r.fnr.assign(cells, kNaN);
  for (std::size_t c = 0; c < cells; ++c) {
    const int neg = r.fp[c] + r.tn[c];
    const int pos = r.tp[c] + r.fn[c];
    if (neg >= min_support) r.fpr[c] = static_cast<double>(r.fp[c]) / neg;
    if (pos >= min_support) r.fnr[c] = static_cast<double>(r.fn[c]) / pos;
  }
  return r;
}

RateTensor compute_rates(const TargetClassifier& clf, const LatentSequence& latents, const Eigen::MatrixXi& targets,
                         int min_support) {
  const int k = clf.num_blocks();
  check_targets(latents, targets, k);
  if (latents.assignment.psi != clf.assignment().psi) {
    spdlog::debug("compute_rates: latent assignment differs from the classifier's; using the classifier's");
  }
  std::vector<Eigen::MatrixXi> pred(k);
  for (int i = 0; i < k; ++i)
    if (clf.has_block(i)) pred[i] = clf.predict(i, latents.z);
  const Eigen::MatrixXi labels = targets.bottomRows(latents.length() - 1);
  return rates_from_predictions(pred, labels, labels, min_support);
}

bool ChangeReport::is_detected(int j) const {
  return std::find(detected.begin(), detected.end(), j) != detected.end();
}

ChangeReport detect_changes(const RateTensor& source, const RateTensor& target, double tau,
                            DetectionCriterion criterion) {
  if (source.num_variables != target.num_variables || source.fpr.size() != target.fpr.size()) {
    throw ContractViolation("detect_changes: rate tensors cover different grids");
  }
  if (!(tau > 0.0 && tau < 1.0)) throw ContractViolation(fmt::format("detect_changes: tau {} outside (0, 1)", tau));
  const int k = source.num_variables;
  ChangeReport rep;
  rep.tau = tau;
  rep.criterion = criterion;
  rep.num_variables = k;
  rep.fpr_delta.assign(source.fpr.size(), kNaN);
  rep.fnr_delta.assign(source.fnr.size(), kNaN);
  rep.max_delta.assign(k, kNaN);
  for (int kk = 0; kk < k; ++kk) {
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        const int c = source.index(kk, i, j);
        if (source.fpr_evaluable(kk, i, j) && target.fpr_evaluable(kk, i, j)) {
          rep.fpr_delta[c] = std::abs(target.fpr[c] - source.fpr[c]);
        }
        if (source.fnr_evaluable(kk, i, j) && target.fnr_evaluable(kk, i, j)) {
          rep.fnr_delta[c] = std::abs(target.fnr[c] - source.fnr[c]);
        }
        double& m = rep.max_delta[j];
        auto take = [&m](double d) {
          if (!std::isnan(d) && (std::isnan(m) || d > m)) m = d;
        };
        take(rep.fpr_delta[c]);
        if (criterion == DetectionCriterion::kFprOrFnr) take(rep.fnr_delta[c]);
      }
    }
  }
  for (int j = 0; j < k; ++j) {
    if (std::isnan(rep.max_delta[j])) {
      rep.excluded.push_back(j);
      rep.warnings.push_back(fmt::format("variable {} has no cell evaluable on both sides; excluded", j));
      spdlog::warn("detect_changes: {}", rep.warnings.back());
    } else if (rep.max_delta[j] > tau) {
      rep.detected.push_back(j);
    }
  }
  return rep;
}

namespace {

nlohmann::json nan_to_null(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x));
  return a;
}

std::vector<double> null_to_nan(const nlohmann::json& a) {
  std::vector<double> v;
  for (const auto& x : a) v.push_back(x.is_null() ? kNaN : x.get<double>());
  return v;
}

}  // namespace

nlohmann::json to_json(const ChangeReport& r) {
  return {{"detected", r.detected},
          {"tau", r.tau},
          {"criterion", to_string(r.criterion)},
          {"num_variables", r.num_variables},
          {"fpr_delta", nan_to_null(r.fpr_delta)},
          {"fnr_delta", nan_to_null(r.fnr_delta)},
          {"max_delta", nan_to_null(r.max_delta)},
          {"excluded", r.excluded},
          {"warnings", r.warnings}};
}

ChangeReport change_report_from_json(const nlohmann::json& j) {
  ChangeReport r;
  r.detected = j.at("detected").get<std::vector<int>>();
  r.tau = j.at("tau").get<double>();
  r.criterion = detection_criterion_from_string(j.at("criterion").get<std::string>());
  r.num_variables = j.at("num_variables").get<int>();
  r.fpr_delta = null_to_nan(j.at("fpr_delta"));
  r.fnr_delta = null_to_nan(j.at("fnr_delta"));
  r.max_delta = null_to_nan(j.at("max_delta"));
  r.excluded = j.at("excluded").get<std::vector<int>>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

}  // namespace decaf
