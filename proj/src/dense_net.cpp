#include "decaf/dense_net.hpp"

#include <cmath>
#include <fmt/format.h>

#include "decaf/errors.hpp"

namespace decaf {

std::string_view to_string(Activation a) {
  return a == Activation::kSwish ? "swish" : "identity";
}

Activation activation_from_string(std::string_view s) {
  if (s == "swish") return Activation::kSwish;
  if (s == "identity") return Activation::kIdentity;
  throw ContractViolation(fmt::format("unknown activation '{}'", s));
}

DenseNet::DenseNet(std::vector<int> layer_sizes, Activation activation)
    : sizes_(std::move(layer_sizes)), activation_(activation) {
  if (sizes_.size() < 2) throw ContractViolation("DenseNet: need at least two layer sizes");
  for (int s : sizes_) {
    if (s <= 0) throw ContractViolation("DenseNet: layer sizes must be positive");
  }
  for (int l = 0; l < num_layers(); ++l) {
    params_.add_block(fmt::format("W{}", l), sizes_[l], sizes_[l + 1]);
    params_.add_block(fmt::format("b{}", l), 1, sizes_[l + 1]);
  }
}

DenseNet DenseNet::random(std::vector<int> layer_sizes, Activation activation, Rng& rng) {
  DenseNet net(std::move(layer_sizes), activation);
  for (int l = 0; l < net.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.sizes_[l]));
    auto w = net.weight(l);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = uniform(rng, -bound, bound);
    }
    auto b = net.bias(l);
    for (Eigen::Index c = 0; c < b.cols(); ++c) b(0, c) = uniform(rng, -bound, bound);
  }
  return net;
}

void DenseNet::set_masks(std::vector<Eigen::MatrixXd> masks) {
  if (!masks.empty()) {
    if (static_cast<int>(masks.size()) != num_layers()) {
      throw ContractViolation("DenseNet::set_masks: one mask per layer required");
    }
    for (int l = 0; l < num_layers(); ++l) {
      if (masks[l].rows() != sizes_[l] || masks[l].cols() != sizes_[l + 1]) {
        throw ContractViolation(fmt::format("DenseNet::set_masks: mask {} has wrong shape", l));
      }
    }
  }
  masks_ = std::move(masks);
}

Eigen::VectorXd DenseNet::forward(std::span<const double> input) const {
  if (static_cast<int>(input.size()) != input_dim()) {
    throw ContractViolation(
        fmt::format("DenseNet::forward: input length {} != {}", input.size(), input_dim()));
  }
  Eigen::MatrixXd x(1, input_dim());
  for (int i = 0; i < input_dim(); ++i) x(0, i) = input[i];
  return forward_batch(x).row(0).transpose();
}

Eigen::MatrixXd DenseNet::forward_batch(const Eigen::MatrixXd& inputs) const {
  if (inputs.cols() != input_dim()) {
    throw ContractViolation(fmt::format("DenseNet::forward_batch: {} input columns, expected {}",
                                        inputs.cols(), input_dim()));
  }
  Eigen::MatrixXd h = inputs;
  for (int l = 0; l < num_layers(); ++l) {
    Eigen::MatrixXd z;
    if (masks_.empty()) {
      z = h * weight(l);
    } else {
      z = h * weight(l).cwiseProduct(masks_[l]);
    }
    z.rowwise() += bias(l).row(0);
    if (l + 1 < num_layers() && activation_ == Activation::kSwish) {
      z = (z.array() / (1.0 + (-z.array()).exp())).matrix();
    }
    h = std::move(z);
  }
  return h;
}

ad::Var DenseNet::forward(const BoundParams& bound, const ad::Var& inputs,
                          std::string_view prefix) const {
  if (inputs.cols() != input_dim()) {
    throw ContractViolation(fmt::format("DenseNet::forward: {} input columns, expected {}",
                                        inputs.cols(), input_dim()));
  }
  ad::Tape& tape = bound.tape();
  ad::Var h = inputs;
  for (int l = 0; l < num_layers(); ++l) {
    ad::Var w = bound[fmt::format("{}W{}", prefix, l)];
    if (w.rows() != sizes_[l] || w.cols() != sizes_[l + 1]) {
      throw ContractViolation(fmt::format("DenseNet: bound weight {} has wrong shape", l));
    }
    if (!masks_.empty()) w = ad::mul(w, tape.constant(masks_[l]));
    h = ad::add(ad::matmul(h, w), bound[fmt::format("{}b{}", prefix, l)]);
    if (l + 1 < num_layers() && activation_ == Activation::kSwish) h = ad::swish(h);
  }
  return h;
}

}  // namespace decaf
