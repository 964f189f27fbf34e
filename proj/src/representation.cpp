#include "decaf/representation.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "decaf/errors.hpp"
#include "decaf/metrics.hpp"

namespace decaf {

std::vector<int> Assignment::dims_of(int i) const {
  std::vector<int> out;
  for (int d = 0; d < latent_dim(); ++d)
    if (psi[d] == i) out.push_back(d);
  return out;
}

void Assignment::require_present(const std::vector<int>& variables) const {
  for (int i : variables) {
    if (dims_of(i).empty()) {
      throw EmptyAssignmentError(i, fmt::format("no latent dimension is assigned to variable {}", i));
    }
  }
}

void Assignment::validate() const {
  for (int v : psi) {
    if (v < -1 || v >= num_variables) {
      throw ContractViolation(fmt::format("Assignment: value {} outside [-1, {})", v, num_variables));
    }
  }
  if (unassigned_slot && latent_dim() < num_variables + 1) {
    throw ContractViolation(fmt::format("Assignment: M = {} but an unassigned slot needs M >= K + 1 = {}",
                                        latent_dim(), num_variables + 1));
  }
}

Assignment Assignment::identity_blocks(const std::vector<int>& dims) {
  Assignment a;
  a.num_variables = static_cast<int>(dims.size());
  for (int i = 0; i < a.num_variables; ++i) a.psi.insert(a.psi.end(), dims[i], i);
  return a;
}

Eigen::MatrixXd slice_latents(const LatentSequence& seq, int i) {
  if (i < 0 || i >= seq.assignment.num_variables) {
    throw ContractViolation(fmt::format("slice_latents: variable {} outside [0, {})", i, seq.assignment.num_variables));
  }
  const std::vector<int> dims = seq.assignment.dims_of(i);
  if (dims.empty()) throw EmptyAssignmentError(i, fmt::format("slice_latents: variable {} has no latent dims", i));
  Eigen::MatrixXd out(seq.z.rows(), static_cast<Eigen::Index>(dims.size()));
  for (std::size_t c = 0; c < dims.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = seq.z.col(dims[c]);
  return out;
}

Assignment fit_assignment(const Eigen::MatrixXd& latents, const std::vector<Eigen::MatrixXd>& truth,
                          double threshold) {
  if (latents.rows() < 30) throw ContractViolation("fit_assignment: need at least 30 samples");
  for (const auto& t : truth)
    if (t.rows() != latents.rows()) throw ContractViolation("fit_assignment: truth length differs");
  Assignment a;
  a.num_variables = static_cast<int>(truth.size());
  a.psi.assign(latents.cols(), -1);
  std::vector<Eigen::MatrixXd> blocks;
  for (Eigen::Index d = 0; d < latents.cols(); ++d) blocks.emplace_back(latents.col(d));
  const Eigen::MatrixXd table = similarity_table(blocks, truth, MetricKind::kSpearman);
  for (Eigen::Index d = 0; d < latents.cols(); ++d) {
    const Eigen::VectorXd col = latents.col(d);
    if ((col.array() == col(0)).all()) {
      spdlog::warn("fit_assignment: latent dim {} is constant and stays unassigned", d);
      continue;
    }
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < table.cols(); ++j)
      if (table(d, j) > table(d, best)) best = j;
    if (table(d, best) >= threshold) a.psi[d] = static_cast<int>(best);
  }
  return a;
}

std::string to_string(EncoderKind k) { return k == EncoderKind::kOracle ? "oracle" : "learned-linear"; }

Encoder Encoder::oracle(std::shared_ptr<const EnvironmentSpec> env) {
  if (!env) throw ContractViolation("Encoder::oracle: no environment");
  Encoder e;
  e.kind_ = EncoderKind::kOracle;
  e.environment_ = env->name;
  e.input_dim_ = env->process.observation.dim();
  e.assignment_ = Assignment::identity_blocks(env->process.graph.dims);
  e.env_ = std::move(env);
  return e;
}

Encoder Encoder::learned_linear(ParamVector params, ParamVector prior, DenseNet prior_shape,
                                Assignment assignment, std::string environment) {
  const int w = params.index_of("W");
  if (w < 0 || params.index_of("b") < 0) throw ContractViolation("Encoder: learned-linear params need blocks W and b");
  const auto& wb = params.blocks()[w];
  if (wb.cols != assignment.latent_dim() || params.block("b").cols != wb.cols) {
    throw ContractViolation("Encoder: assignment size does not match W");
  }
  assignment.validate();
  Encoder e;
  e.kind_ = EncoderKind::kLearnedLinear;
  e.environment_ = std::move(environment);
  e.input_dim_ = static_cast<int>(wb.rows);
  e.assignment_ = std::move(assignment);
  e.params_ = std::move(params);
  e.prior_params_ = std::move(prior);
  e.prior_net_ = std::move(prior_shape);
  return e;
}

void Encoder::set_assignment(Assignment a) {
  if (a.latent_dim() != latent_dim()) throw ContractViolation("Encoder::set_assignment: latent dim mismatch");
  a.validate();
  assignment_ = std::move(a);
}

Eigen::MatrixXd Encoder::encode_rows(const Eigen::MatrixXd& x) const {
  if (x.cols() != input_dim_) {
    throw ContractViolation(fmt::format("Encoder::encode: {} input columns, expected {}", x.cols(), input_dim_));
  }
  if (kind_ == EncoderKind::kOracle) {
    Eigen::MatrixXd z(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const Eigen::VectorXd c = invert_observation(env_->process.observation, x.row(r).transpose());
      z.row(r) = env_->to_environment(c).transpose();
    }
    return z;
  }
  Eigen::MatrixXd z = x * params_.view("W");
  z.rowwise() += params_.view("b").row(0);
  return z;
}

LatentSequence Encoder::encode(const Trajectory& traj) const {
  LatentSequence seq;
  seq.z = encode_rows(traj.observations);
  seq.assignment = assignment_;
  seq.environment = environment_;
  seq.encoder = to_string(kind_);
  return seq;
}

namespace {

constexpr double kLogVarLimit = 10.0;

// Mean Gaussian NLL of z1 under the prior, minus log|det W|.
ad::Var linear_flow_loss(ad::Tape& tape, const BoundParams& bound, const DenseNet& prior,
                         const Eigen::MatrixXd& x0, const Eigen::MatrixXd& x1,
                         const Eigen::MatrixXd& i1) {
  const ad::Var w = bound["enc/W"];
  const ad::Var b = bound["enc/b"];
  const auto m = w.cols();
  const ad::Var z0 = ad::add(ad::matmul(tape.constant(x0), w), b);
  const ad::Var z1 = ad::add(ad::matmul(tape.constant(x1), w), b);
  const ad::Var out = prior.forward(bound, ad::concat_cols({z0, tape.constant(i1)}), "prior/");
  const ad::Var mu = ad::slice_cols(out, 0, m);
  const ad::Var logvar =
      ad::scale(ad::tanh(ad::scale(ad::slice_cols(out, m, m), 1.0 / kLogVarLimit)), kLogVarLimit);
  const ad::Var sq = ad::mul(ad::square(ad::sub(z1, mu)), ad::exp(ad::neg(logvar)));
  const ad::Var nll = ad::scale(ad::add_scalar(ad::add(logvar, sq), std::log(2.0 * std::numbers::pi)), 0.5);
  return ad::sub(ad::scale(ad::sum(nll), 1.0 / static_cast<double>(x0.rows())), ad::log_abs_det(w));
}

}  // namespace

LinearEncoderFit train_linear_encoder(const Trajectory& traj, const LinearEncoderConfig& config,
                                      const Encoder* init) {
  const int n = traj.length() - 1;
  if (n < 1) throw ContractViolation("train_linear_encoder: need at least two steps");
  if (config.restarts < 1) throw ContractViolation("train_linear_encoder: restarts must be positive");
  const int d = static_cast<int>(traj.observations.cols());
  const int k = traj.num_variables();
  if (init && (init->kind() != EncoderKind::kLearnedLinear || init->input_dim() != d)) {
    throw ContractViolation("train_linear_encoder: init must be a learned-linear encoder of matching dim");
  }

  const Eigen::MatrixXd x0 = traj.observations.topRows(n);
  const Eigen::MatrixXd x1 = traj.observations.bottomRows(n);
  const Eigen::MatrixXd i1 = traj.targets.bottomRows(n).cast<double>();

  const int runs = init ? 1 : config.restarts;
  ParamVector best_enc;
  ParamVector best_prior;
  DenseNet prior;
  std::vector<double> best_curve;
  for (int run = 0; run < runs; ++run) {
    ParamVector enc;
    ParamVector prior_params;
    if (init) {
      enc = init->params();
      prior = init->prior_net();
      prior_params = init->prior_params();
    } else {
      enc.add_block("W", d, d);
      enc.add_block("b", 1, d);
      Rng rng = make_rng(config.train.seed, 0x656e63 + static_cast<std::uint64_t>(run));
      enc.view("W") = run == 0 ? Eigen::MatrixXd::Identity(d, d) : AffineMap::random_rotation(d, rng)->matrix();
      prior = DenseNet::random({d + k, config.prior_hidden, 2 * d}, Activation::kSwish, rng);
      prior_params = prior.params();
    }
    ParamVector all = ParamVector::concat({{"enc/", &enc}, {"prior/", &prior_params}});
    const BatchLoss loss = [&](ad::Tape& tape, const BoundParams& bound, std::span<const int> batch) {
      return linear_flow_loss(tape, bound, prior, take_rows(x0, batch), take_rows(x1, batch),
                              take_rows(i1, batch));
    };
    TrainConfig tc = config.train;
    tc.seed = config.train.seed + static_cast<std::uint64_t>(run);
    const TrainResult tr = train_minibatch(all, n, tc, loss);
    all.split_into({{"enc/", &enc}, {"prior/", &prior_params}});
    spdlog::debug("train_linear_encoder: run {} final loss {}", run,
                  tr.epoch_loss.empty() ? 0.0 : tr.epoch_loss.back());
    if (run == 0 || (!tr.epoch_loss.empty() && tr.epoch_loss.back() < best_curve.back())) {
      best_enc = std::move(enc);
      best_prior = std::move(prior_params);
      best_curve = tr.epoch_loss;
    }
  }

  Encoder out = Encoder::learned_linear(best_enc, best_prior, prior, Assignment::identity_blocks(std::vector<int>(d, 1)),
                                        init ? init->environment() : std::string("learned"));
  std::vector<Eigen::MatrixXd> truth;
  for (int i = 0; i < k; ++i) truth.push_back(traj.variable(i));
  Assignment psi = fit_assignment(out.encode_rows(traj.observations), truth, config.assignment_threshold);
  out = Encoder::learned_linear(best_enc, best_prior, prior, std::move(psi), out.environment());
  return {std::move(out), std::move(best_curve)};
}

double linear_encoder_nll(const Encoder& enc, const Trajectory& traj) {
  if (enc.kind() != EncoderKind::kLearnedLinear) throw ContractViolation("linear_encoder_nll: not a learned encoder");
  const int n = traj.length() - 1;
  ParamVector all = ParamVector::concat({{"enc/", &enc.params()}, {"prior/", &enc.prior_params()}});
  const Eigen::MatrixXd x0 = traj.observations.topRows(n);
  const Eigen::MatrixXd x1 = traj.observations.bottomRows(n);
  const Eigen::MatrixXd i1 = traj.targets.bottomRows(n).cast<double>();
  return evaluate_loss(all, n, 4096, [&](ad::Tape& tape, const BoundParams& bound, std::span<const int> batch) {
    return linear_flow_loss(tape, bound, enc.prior_net(), take_rows(x0, batch), take_rows(x1, batch),
                            take_rows(i1, batch));
  });
}

}  // namespace decaf
