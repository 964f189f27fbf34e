#include "decaf/adaptation.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "decaf/errors.hpp"

namespace decaf {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double swish(double x) { return x / (1.0 + std::exp(-x)); }

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i) = (p.row(i).array() - p.row(i).maxCoeff()).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Eigen::MatrixXd one_hot(const std::vector<int>& psi, int k) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(psi.size()), k);
  for (std::size_t d = 0; d < psi.size(); ++d) p(static_cast<Eigen::Index>(d), psi[d]) = 1.0;
  return p;
}

}  // namespace

TransitionPrior TransitionPrior::initial(int dim, int num_variables, const std::vector<int>& initial_psi,
                                         const PriorConfig& config, Rng& rng) {
  if (dim < 1 || num_variables < 1 || config.hidden < 1 || !(config.sigma_floor > 0.0)) {
    throw ContractViolation("TransitionPrior: need positive dim, variables, hidden width and sigma floor");
  }
  if (static_cast<int>(initial_psi.size()) != dim) throw ContractViolation("TransitionPrior: psi length != dim");
  TransitionPrior p;
  p.dim_ = dim;
  p.num_variables_ = num_variables;
  p.config_ = config;
  const int h = config.hidden * dim;
  p.net_ = DenseNet::random({2 * dim, h, 2 * dim}, Activation::kSwish, rng);
  Eigen::MatrixXd m0 = Eigen::MatrixXd::Zero(2 * dim, h);
  Eigen::MatrixXd m1 = Eigen::MatrixXd::Zero(h, 2 * dim);
  m0.topRows(dim).setOnes();
  for (int d = 0; d < dim; ++d) {
    m0.block(dim + d, d * config.hidden, 1, config.hidden).setOnes();
    m1.block(d * config.hidden, d, config.hidden, 1).setOnes();
    m1.block(d * config.hidden, dim + d, config.hidden, 1).setOnes();
  }
  p.net_.set_masks({m0, m1});
  p.net_.weight(1) = p.net_.weight(1).cwiseProduct(m1) * std::sqrt(static_cast<double>(dim));
  p.params_ = p.net_.params();
  p.params_.add_block("psi_logits", dim, num_variables);
  for (int d = 0; d < dim; ++d) {
    const int v = initial_psi[d];
    if (v < 0 || v >= num_variables) throw ContractViolation(fmt::format("TransitionPrior: psi[{}] = {} out of range", d, v));
    p.params_.view("psi_logits")(d, v) = config.psi_init_logit;
  }
  p.psi_ = initial_psi;
  return p;
}

void TransitionPrior::harden() {
  const auto logits = params_.view("psi_logits");
  for (int d = 0; d < dim_; ++d) {
    int best = 0;
    for (int k = 1; k < num_variables_; ++k)
      if (logits(d, k) > logits(d, best)) best = k;
    psi_[d] = best;
  }
  hardened_ = true;
}

void TransitionPrior::set_psi(const std::vector<int>& psi) {
  if (static_cast<int>(psi.size()) != dim_) throw ContractViolation("TransitionPrior::set_psi: length != dim");
  for (int v : psi)
    if (v < 0 || v >= num_variables_) throw ContractViolation("TransitionPrior::set_psi: value out of range");
  psi_ = psi;
  hardened_ = true;
}

Eigen::MatrixXd TransitionPrior::assignment_probs() const {
  return hardened_ ? one_hot(psi_, num_variables_) : softmax_rows(params_.view("psi_logits"));
}

Eigen::MatrixXd TransitionPrior::bits(const Eigen::MatrixXd& targets) const {
  if (targets.cols() != num_variables_) {
    throw ContractViolation(fmt::format("TransitionPrior: {} target columns, expected {}", targets.cols(), num_variables_));
  }
  return targets * assignment_probs().transpose();
}

Eigen::MatrixXd TransitionPrior::conditioner(const Eigen::MatrixXd& r_prev, const Eigen::MatrixXd& targets) const {
  if (r_prev.cols() != dim_ || r_prev.rows() != targets.rows()) {
    throw ContractViolation("TransitionPrior: r_prev / targets shape mismatch");
  }
  Eigen::MatrixXd x(r_prev.rows(), 2 * dim_);
  x << r_prev, bits(targets);
  Eigen::MatrixXd h = x * params_.view("W0").cwiseProduct(net_.masks()[0]);
  h.rowwise() += params_.view("b0").row(0);
  h = h.unaryExpr(&swish);
  Eigen::MatrixXd out = h * params_.view("W1").cwiseProduct(net_.masks()[1]);
  out.rowwise() += params_.view("b1").row(0);
  return out;
}

Eigen::MatrixXd TransitionPrior::log_prob_dims(const Eigen::MatrixXd& r_next, const Eigen::MatrixXd& r_prev,
                                               const Eigen::MatrixXd& targets, std::int64_t* floor_hits) const {
  if (r_next.cols() != dim_ || r_next.rows() != r_prev.rows()) {
    throw ContractViolation("TransitionPrior: r_next shape mismatch");
  }
  const Eigen::MatrixXd out = conditioner(r_prev, targets);
  const Eigen::ArrayXXd raw_sigma = (0.5 * out.rightCols(dim_).array()).exp();
  const std::int64_t hits = (raw_sigma < config_.sigma_floor).count();
  floor_hits_ += hits;
  if (floor_hits) *floor_hits += hits;
  const Eigen::ArrayXXd sigma = raw_sigma.max(config_.sigma_floor);
  const Eigen::ArrayXXd u = (r_next.array() - out.leftCols(dim_).array()) / sigma;
  return (-kHalfLog2Pi - sigma.log() - 0.5 * u.square()).matrix();
}

ad::Var TransitionPrior::log_prob(const BoundParams& bound, const ad::Var& r_next, const ad::Var& r_prev,
                                  const Eigen::MatrixXd& targets, std::string_view prefix,
                                  std::int64_t* floor_hits) const {
  if (r_next.cols() != dim_ || r_prev.cols() != dim_ || targets.cols() != num_variables_ ||
      targets.rows() != r_next.rows()) {
    throw ContractViolation("TransitionPrior::log_prob: shape mismatch");
  }
  ad::Tape& tape = bound.tape();
  const ad::Var probs = hardened_ ? tape.constant(one_hot(psi_, num_variables_))
                                  : ad::softmax_rows(bound[fmt::format("{}psi_logits", prefix)]);
  const ad::Var b = ad::matmul(tape.constant(targets), ad::transpose(probs));
  const ad::Var out = net_.forward(bound, ad::concat_cols({r_prev, b}), prefix);
  const ad::Var mu = ad::slice_cols(out, 0, dim_);
  const ad::Var raw_sigma = ad::exp(ad::scale(ad::slice_cols(out, dim_, dim_), 0.5));
  const std::int64_t hits = (raw_sigma.value().array() < config_.sigma_floor).count();
  floor_hits_ += hits;
  if (floor_hits) *floor_hits += hits;
  const ad::Var sigma = ad::clamp_min(raw_sigma, config_.sigma_floor);
  const ad::Var u = ad::div(ad::sub(r_next, mu), sigma);
  const ad::Var lp = ad::add_scalar(ad::neg(ad::add(ad::log(sigma), ad::scale(ad::square(u), 0.5))), -kHalfLog2Pi);
  return ad::row_sum(lp);
}

double prior_log_prob(const TransitionPrior& prior, const Eigen::VectorXd& r_next, const Eigen::VectorXd& r_prev,
                      const Eigen::VectorXd& targets_ch) {
  return prior.log_prob_dims(r_next.transpose(), r_prev.transpose(), targets_ch.transpose()).sum();
}

double prior_factor_log_prob(const TransitionPrior& prior, int c, const Eigen::VectorXd& r_next,
                             const Eigen::VectorXd& r_prev, const Eigen::VectorXd& targets_ch) {
  if (!prior.hardened()) throw ContractViolation("prior_factor_log_prob: assignment is not hardened");
  const Eigen::MatrixXd lp = prior.log_prob_dims(r_next.transpose(), r_prev.transpose(), targets_ch.transpose());
  double total = 0.0;
  for (int d = 0; d < prior.dim(); ++d)
    if (prior.psi()[d] == c) total += lp(0, d);
  return total;
}

ParamVector AdaptationModel::packed_params() const {
  std::vector<std::pair<std::string, const ParamVector*>> parts{{"flow/", &flow.params()}, {"prior/", &prior.params()}};
  for (std::size_t c = 0; c < aux.size(); ++c) parts.emplace_back(fmt::format("aux{}/", c), &aux[c].params());
  return ParamVector::concat(parts);
}

void AdaptationModel::unpack_params(const ParamVector& packed) {
  std::vector<std::pair<std::string, ParamVector*>> parts{{"flow/", &flow.params()}, {"prior/", &prior.params()}};
  for (std::size_t c = 0; c < aux.size(); ++c) parts.emplace_back(fmt::format("aux{}/", c), &aux[c].params());
  packed.split_into(parts);
}

ad::Var adaptation_loss(const AdaptationModel& model, const AdaptationConfig& config, const BoundParams& bound,
                        const Eigen::MatrixXd& z_prev, const Eigen::MatrixXd& z_next, const Eigen::MatrixXd& targets,
                        LossParts* parts, std::int64_t* floor_hits) {
  ad::Tape& tape = bound.tape();
  const int kc = model.prior.num_variables();
  const auto n = static_cast<double>(z_next.rows());
  const ad::Var r_prev = model.flow.forward(bound, tape.constant(z_prev), "flow/").first;
  const auto [r_next, log_det] = model.flow.forward(bound, tape.constant(z_next), "flow/");
  const ad::Var lp = model.prior.log_prob(bound, r_next, r_prev, targets, "prior/", floor_hits);
  const ad::Var ll = ad::mean(ad::add(lp, log_det));

  const ad::Var probs = model.prior.hardened() ? tape.constant(model.prior.assignment_probs())
                                               : ad::softmax_rows(bound["prior/psi_logits"]);
  ad::Var aux = tape.constant(Eigen::MatrixXd::Zero(1, 1));
  for (int c = 0; c < kc; ++c) {
    const ad::Var weight = ad::transpose(ad::slice_cols(probs, c, 1));
    const ad::Var in = ad::concat_cols({r_prev, ad::mul(r_next, weight)});
    const ad::Var logit = model.aux[c].forward(bound, in, fmt::format("aux{}/", c));
    aux = ad::add(aux, ad::mean(ad::bce_with_logits(logit, targets.col(c))));
  }
  const ad::Var reg = ad::scale(ad::sum(ad::square(r_next)), 1.0 / n);
  const ad::Var pbar = ad::col_mean(probs);
  const ad::Var entropy = ad::neg(ad::sum(ad::mul(pbar, ad::log(ad::clamp_min(pbar, 1e-12)))));
  const ad::Var alo = ad::add_scalar(ad::neg(entropy), std::log(static_cast<double>(kc)));

  if (parts) {
    parts->log_likelihood = ll.scalar();
    parts->aux = aux.scalar();
    parts->reg = reg.scalar();
    parts->alo = alo.scalar();
  }
  ad::Var loss = ad::neg(ll);
  loss = ad::add(loss, ad::scale(aux, config.aux_weight));
  loss = ad::add(loss, ad::scale(reg, config.beta_reg));
  return ad::add(loss, ad::scale(alo, config.beta_alo));
}

AdaptationResult train_adaptation(const LatentSequence& latents, const Eigen::MatrixXi& targets,
                                  const std::vector<int>& changed_variables, const AdaptationConfig& config) {
  const int k = latents.assignment.num_variables;
  if (targets.rows() != latents.length() || targets.cols() != k) {
    throw ContractViolation("train_adaptation: targets must be T x K aligned with the latents");
  }
  const std::set<int> unique(changed_variables.begin(), changed_variables.end());
  if (unique.size() != changed_variables.size()) throw ContractViolation("train_adaptation: repeated changed variable");
  for (int c : unique)
    if (c < 0 || c >= k) throw ContractViolation(fmt::format("train_adaptation: variable {} out of range", c));

  AdaptationResult res;
  res.changed_variables.assign(unique.begin(), unique.end());
  if (res.changed_variables.empty()) {
    spdlog::info("train_adaptation: no changed variables; identity result");
    return res;
  }
  if (latents.length() < 2) throw ContractViolation("train_adaptation: need at least two target steps");
  latents.assignment.require_present(res.changed_variables);

  const int kc = static_cast<int>(res.changed_variables.size());
  std::vector<int> psi0;
  for (int d = 0; d < latents.assignment.latent_dim(); ++d) {
    const auto it = std::find(res.changed_variables.begin(), res.changed_variables.end(), latents.assignment.psi[d]);
    if (it == res.changed_variables.end()) continue;
    res.changed_dims.push_back(d);
    psi0.push_back(static_cast<int>(it - res.changed_variables.begin()));
  }
  const int m = static_cast<int>(res.changed_dims.size());
  const Eigen::Index n = latents.length() - 1;

  Eigen::MatrixXd z(latents.length(), m);
  for (int d = 0; d < m; ++d) z.col(d) = latents.z.col(res.changed_dims[d]);
  const Eigen::MatrixXd z_prev = z.topRows(n);
  const Eigen::MatrixXd z_next = z.bottomRows(n);
  Eigen::MatrixXd t_ch(n, kc);
  for (int c = 0; c < kc; ++c) {
    t_ch.col(c) = targets.col(res.changed_variables[c]).tail(n).cast<double>();
    const double pos = t_ch.col(c).sum();
    if (pos == 0.0 || pos == static_cast<double>(n)) {
      throw DegenerateTargetError(res.changed_variables[c],
                                  fmt::format("train_adaptation: target of variable {} is constant",
                                              res.changed_variables[c]));
    }
  }

  Rng rng = make_rng(config.train.seed, 0x616470);
  AdaptationModel& model = res.model;
  model.flow = AffineAutoregressiveFlow::identity(m, config.flow, rng);
  model.prior = TransitionPrior::initial(m, kc, psi0, config.prior, rng);
  for (int c = 0; c < kc; ++c) model.aux.push_back(DenseNet::random({2 * m, config.aux_hidden, 1}, Activation::kSwish, rng));

  ParamVector params = model.packed_params();
  double epoch_ll = 0.0;
  const BatchLoss loss = [&](ad::Tape&, const BoundParams& bound, std::span<const int> batch) {
    LossParts p;
    ad::Var l = adaptation_loss(model, config, bound, take_rows(z_prev, batch), take_rows(z_next, batch),
                                take_rows(t_ch, batch), &p, &res.floor_hits);
    epoch_ll += p.log_likelihood * static_cast<double>(batch.size());
    return l;
  };
  train_minibatch(params, static_cast<int>(n), config.train, loss, [&](int) {
    res.curve.push_back(epoch_ll / static_cast<double>(n));
    epoch_ll = 0.0;
  });
  model.unpack_params(params);
  model.prior.harden();
  res.psi_ch = model.prior.psi();
  if (res.floor_hits > 0) spdlog::debug("train_adaptation: sigma floor active {} times", res.floor_hits);
  return res;
}

LatentSequence substitute(const LatentSequence& latents, const AdaptationResult& result) {
  if (result.is_identity()) return latents;
  const int m = static_cast<int>(result.changed_dims.size());
  if (result.model.flow.dim() != m) throw ContractViolation("substitute: flow dim differs from the changed block");
  for (int d : result.changed_dims) {
    if (d < 0 || d >= latents.assignment.latent_dim()) {
      throw ContractViolation(fmt::format("substitute: changed dim {} outside the latent space", d));
    }
  }
  Eigen::MatrixXd z(latents.length(), m);
  for (int d = 0; d < m; ++d) z.col(d) = latents.z.col(result.changed_dims[d]);
  const FlowOutput r = result.model.flow.forward_rows(z);
  LatentSequence out = latents;
  for (int d = 0; d < m; ++d) {
    out.z.col(result.changed_dims[d]) = r.r.col(d);
    out.assignment.psi[result.changed_dims[d]] = result.changed_variables[result.psi_ch[d]];
  }
  return out;
}

}  // namespace decaf
