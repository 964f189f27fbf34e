#include "decaf/flow.hpp"

#include <fmt/format.h>

#include <cmath>
#include <string>

#include "decaf/errors.hpp"

namespace decaf {

namespace {

std::string block_name(int l, std::string_view what) { return fmt::format("f{}/{}", l, what); }

// MADE masks for d inputs, h*d hidden units and outputs (shift_k, raw_k):
// hidden unit u has degree u mod (d-1) and sees inputs a <= degree; outputs
// for dim k see hidden units with degree < k.
DenseNet made_shape(int d, int hidden_per_dim) {
  const int h = hidden_per_dim * d;
  DenseNet net({d, h, 2 * d}, Activation::kSwish);
  Eigen::MatrixXd m0 = Eigen::MatrixXd::Zero(d, h);
  Eigen::MatrixXd m1 = Eigen::MatrixXd::Zero(h, 2 * d);
  for (int u = 0; u < h; ++u) {
    const int degree = d > 1 ? u % (d - 1) : -1;
    for (int a = 0; a < d; ++a) m0(a, u) = a <= degree ? 1.0 : 0.0;
    for (int k = 0; k < d; ++k) {
      m1(u, k) = degree < k ? 1.0 : 0.0;
      m1(u, d + k) = m1(u, k);
    }
  }
  net.set_masks({m0, m1});
  return net;
}

Eigen::MatrixXd reversal(int d) { return Eigen::MatrixXd::Identity(d, d).rowwise().reverse(); }

double swish(double x) { return x / (1.0 + std::exp(-x)); }

void check_finite(const Eigen::MatrixXd& x, int block, const char* where) {
  if (!x.allFinite()) throw NumericError(fmt::format("flow block {}: non-finite values in {}", block, where));
}

}  // namespace

AffineAutoregressiveFlow AffineAutoregressiveFlow::identity(int dim, const FlowConfig& config, Rng& rng) {
  if (dim < 1 || config.depth < 1 || config.hidden_per_dim < 1 || !(config.scale_limit > 0.0)) {
    throw ContractViolation("AffineAutoregressiveFlow: need dim, depth, hidden width and scale limit positive");
  }
  AffineAutoregressiveFlow f;
  f.dim_ = dim;
  f.config_ = config;
  f.made_ = made_shape(dim, config.hidden_per_dim);
  for (int l = 0; l < config.depth; ++l) {
    f.params_.add_block(block_name(l, "an_loc"), 1, dim);
    f.params_.add_block(block_name(l, "an_logs"), 1, dim);
    DenseNet init = DenseNet::random(f.made_.layer_sizes(), Activation::kSwish, rng);
    init.weight(1).setZero();
    init.bias(1).setZero();
    for (const auto& b : init.params().blocks()) {
      f.params_.add_block(block_name(l, b.name), b.rows, b.cols);
      f.params_.view(block_name(l, b.name)) = init.params().view(b.name);
    }
  }
  return f;
}

AffineAutoregressiveFlow AffineAutoregressiveFlow::random(int dim, const FlowConfig& config, Rng& rng,
                                                          double strength) {
  AffineAutoregressiveFlow f = identity(dim, config, rng);
  for (int l = 0; l < config.depth; ++l) {
    for (const char* name : {"an_loc", "an_logs", "W1", "b1"}) {
      auto v = f.params_.view(block_name(l, name));
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = strength * uniform(rng, -1.0, 1.0);
    }
  }
  return f;
}

std::pair<ad::Var, ad::Var> AffineAutoregressiveFlow::forward(const BoundParams& bound, const ad::Var& z,
                                                              std::string_view prefix) const {
  if (z.cols() != dim_) {
    throw ContractViolation(fmt::format("flow: {} input columns, expected {}", z.cols(), dim_));
  }
  ad::Tape& tape = bound.tape();
  const double lim = config_.scale_limit;
  ad::Var x = z;
  ad::Var log_det = tape.constant(Eigen::MatrixXd::Zero(z.rows(), 1));
  const ad::Var rev = tape.constant(reversal(dim_));
  for (int l = 0; l < config_.depth; ++l) {
    const std::string p = fmt::format("{}f{}/", prefix, l);
    const ad::Var logs = bound[p + "an_logs"];
    x = ad::add(ad::mul(x, ad::exp(logs)), bound[p + "an_loc"]);
    log_det = ad::add(log_det, ad::sum(logs));
    const ad::Var out = made_.forward(bound, x, p);
    const ad::Var shift = ad::slice_cols(out, 0, dim_);
    const ad::Var s = ad::scale(ad::tanh(ad::scale(ad::slice_cols(out, dim_, dim_), 1.0 / lim)), lim);
    x = ad::add(ad::mul(x, ad::exp(s)), shift);
    log_det = ad::add(log_det, ad::row_sum(s));
    if (l + 1 < config_.depth) x = ad::matmul(x, rev);
  }
  if (config_.depth % 2 == 0) x = ad::matmul(x, rev);
  return {x, log_det};
}

Eigen::MatrixXd AffineAutoregressiveFlow::made_outputs(int block, const Eigen::MatrixXd& x) const {
  const auto w0 = params_.view(block_name(block, "W0"));
  const auto b0 = params_.view(block_name(block, "b0"));
  const auto w1 = params_.view(block_name(block, "W1"));
  const auto b1 = params_.view(block_name(block, "b1"));
  Eigen::MatrixXd h = x * w0.cwiseProduct(made_.masks()[0]);
  h.rowwise() += b0.row(0);
  h = h.unaryExpr(&swish);
  Eigen::MatrixXd out = h * w1.cwiseProduct(made_.masks()[1]);
  out.rowwise() += b1.row(0);
  return out;
}

FlowOutput AffineAutoregressiveFlow::forward_rows(const Eigen::MatrixXd& z) const {
  if (z.cols() != dim_) throw ContractViolation(fmt::format("flow: {} input columns, expected {}", z.cols(), dim_));
  const double lim = config_.scale_limit;
  FlowOutput o;
  Eigen::MatrixXd x = z;
  o.log_det = Eigen::VectorXd::Zero(z.rows());
  for (int l = 0; l < config_.depth; ++l) {
    const Eigen::RowVectorXd logs = params_.view(block_name(l, "an_logs")).row(0);
    const Eigen::RowVectorXd loc = params_.view(block_name(l, "an_loc")).row(0);
    x = (x.array().rowwise() * logs.array().exp()).rowwise() + loc.array();
    o.log_det.array() += logs.sum();
    const Eigen::MatrixXd out = made_outputs(l, x);
    const Eigen::ArrayXXd s = lim * (out.rightCols(dim_).array() / lim).tanh();
    x = (x.array() * s.exp() + out.leftCols(dim_).array()).matrix();
    o.log_det += s.rowwise().sum().matrix();
    check_finite(x, l, "forward");
    if (l + 1 < config_.depth) x = x.rowwise().reverse().eval();
  }
  if (config_.depth % 2 == 0) x = x.rowwise().reverse().eval();
  o.r = std::move(x);
  return o;
}

std::pair<Eigen::VectorXd, double> AffineAutoregressiveFlow::forward(const Eigen::VectorXd& z) const {
  const FlowOutput o = forward_rows(z.transpose());
  return {o.r.row(0).transpose(), o.log_det(0)};
}

FlowOutput AffineAutoregressiveFlow::inverse_rows(const Eigen::MatrixXd& r) const {
  if (r.cols() != dim_) throw ContractViolation(fmt::format("flow: {} input columns, expected {}", r.cols(), dim_));
  const double lim = config_.scale_limit;
  FlowOutput o;
  Eigen::MatrixXd y = r;
  o.log_det = Eigen::VectorXd::Zero(r.rows());
  if (config_.depth % 2 == 0) y = y.rowwise().reverse().eval();
  for (int l = config_.depth - 1; l >= 0; --l) {
    if (l + 1 < config_.depth) y = y.rowwise().reverse().eval();
    // x_k depends on x_<k only, so dims are recovered in order.
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(y.rows(), dim_);
    for (int k = 0; k < dim_; ++k) {
      const Eigen::MatrixXd out = made_outputs(l, x);
      const Eigen::ArrayXd s = lim * (out.col(dim_ + k).array() / lim).tanh();
      x.col(k) = ((y.col(k) - out.col(k)).array() * (-s).exp()).matrix();
      o.log_det -= s.matrix();
    }
    const Eigen::RowVectorXd logs = params_.view(block_name(l, "an_logs")).row(0);
    const Eigen::RowVectorXd loc = params_.view(block_name(l, "an_loc")).row(0);
    y = ((x.array().rowwise() - loc.array()).rowwise() * (-logs.array()).exp()).matrix();
    o.log_det.array() -= logs.sum();
    check_finite(y, l, "inverse");
  }
  o.r = std::move(y);
  return o;
}

}  // namespace decaf
