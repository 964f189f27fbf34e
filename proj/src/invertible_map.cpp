#include "decaf/invertible_map.hpp"

#include <fmt/format.h>

#include <cmath>

#include "decaf/errors.hpp"

namespace decaf {

Eigen::MatrixXd InvertibleMap::forward_rows(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) out.row(r) = forward(x.row(r).transpose()).transpose();
  return out;
}

Eigen::MatrixXd InvertibleMap::inverse_rows(const Eigen::MatrixXd& y) const {
  Eigen::MatrixXd out(y.rows(), y.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) out.row(r) = inverse(y.row(r).transpose()).transpose();
  return out;
}

void InvertibleMap::check_dim(const Eigen::VectorXd& v, const char* where) const {
  if (v.size() != dim()) {
    throw ContractViolation(
        fmt::format("{} ({}): expected dimension {}, got {}", where, kind(), dim(), v.size()));
  }
}

IdentityMap::IdentityMap(int dim) : dim_(dim) {
  if (dim < 0) throw ContractViolation("IdentityMap: negative dimension");
}

Eigen::VectorXd IdentityMap::forward(const Eigen::VectorXd& x) const {
  check_dim(x, "forward");
  return x;
}

Eigen::VectorXd IdentityMap::inverse(const Eigen::VectorXd& y) const {
  check_dim(y, "inverse");
  return y;
}

AffineMap::AffineMap(Eigen::MatrixXd a, Eigen::VectorXd b, std::string kind)
    : a_(std::move(a)), b_(std::move(b)), kind_(std::move(kind)) {
  if (a_.rows() != a_.cols() || a_.rows() != b_.size() || b_.size() == 0) {
    throw ContractViolation(fmt::format("AffineMap: matrix {}x{} does not match offset of size {}",
                                        a_.rows(), a_.cols(), b_.size()));
  }
  if (!a_.allFinite() || !b_.allFinite()) throw ContractViolation("AffineMap: non-finite parameters");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a_);
  const auto& s = svd.singularValues();
  const double smax = s(0);
  const double smin = s(s.size() - 1);
  if (!(smin > 1e-10 * smax)) {
    throw ContractViolation(
        fmt::format("AffineMap: matrix is not invertible (singular values {} / {})", smax, smin));
  }
  a_inv_ = a_.inverse();
}

Eigen::VectorXd AffineMap::forward(const Eigen::VectorXd& x) const {
  check_dim(x, "forward");
  return a_ * x + b_;
}

Eigen::VectorXd AffineMap::inverse(const Eigen::VectorXd& y) const {
  check_dim(y, "inverse");
  return a_inv_ * (y - b_);
}

std::shared_ptr<AffineMap> AffineMap::rotation2d(double radians) {
  Eigen::Matrix2d r;
  r << std::cos(radians), -std::sin(radians), std::sin(radians), std::cos(radians);
  return std::make_shared<AffineMap>(r, Eigen::Vector2d::Zero(), "rotation");
}

namespace {

Eigen::MatrixXd haar_orthogonal(int dim, Rng& rng) {
  Eigen::MatrixXd g(dim, dim);
  for (int c = 0; c < dim; ++c)
    for (int r = 0; r < dim; ++r) g(r, c) = std_normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd rmat = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < dim; ++i)
    if (rmat(i, i) < 0) q.col(i) = -q.col(i);
  if (q.determinant() < 0) q.col(0) = -q.col(0);
  return q;
}

}  // namespace

std::shared_ptr<AffineMap> AffineMap::random_rotation(int dim, Rng& rng) {
  if (dim <= 0) throw ContractViolation("random_rotation: dimension must be positive");
  return std::make_shared<AffineMap>(haar_orthogonal(dim, rng), Eigen::VectorXd::Zero(dim),
                                     "rotation");
}

std::shared_ptr<AffineMap> AffineMap::random_affine(int dim, Rng& rng, double min_scale,
                                                    double max_scale, double max_offset) {
  if (dim <= 0) throw ContractViolation("random_affine: dimension must be positive");
  if (!(min_scale > 0) || max_scale < min_scale) {
    throw ContractViolation("random_affine: need 0 < min_scale <= max_scale");
  }
  Eigen::MatrixXd q = haar_orthogonal(dim, rng);
  Eigen::VectorXd scales(dim);
  for (int i = 0; i < dim; ++i) scales(i) = uniform(rng, min_scale, max_scale);
  Eigen::VectorXd b(dim);
  for (int i = 0; i < dim; ++i) b(i) = uniform(rng, -max_offset, max_offset);
  return std::make_shared<AffineMap>(q * scales.asDiagonal(), b, "random-affine");
}

CouplingFlowMap::CouplingFlowMap(int dim, std::vector<Layer> layers, double scale_limit)
    : dim_(dim), split_(dim / 2), layers_(std::move(layers)), scale_limit_(scale_limit) {
  if (dim < 2) throw ContractViolation("CouplingFlowMap: dimension must be at least 2");
  if (!(scale_limit > 0)) throw ContractViolation("CouplingFlowMap: scale limit must be positive");
  for (const auto& layer : layers_) {
    if (layer.conditioner.input_dim() != split_ ||
        layer.conditioner.output_dim() != 2 * (dim_ - split_)) {
      throw ContractViolation(fmt::format(
          "CouplingFlowMap: conditioner must map {} -> {}", split_, 2 * (dim_ - split_)));
    }
    if (!layer.conditioner.params().values().allFinite()) {
      throw ContractViolation("CouplingFlowMap: non-finite conditioner parameters");
    }
  }
}

std::shared_ptr<CouplingFlowMap> CouplingFlowMap::random(int dim, Rng& rng, int num_layers,
                                                         int hidden, double strength) {
  if (dim < 2) throw ContractViolation("CouplingFlowMap: dimension must be at least 2");
  const int split = dim / 2;
  std::vector<Layer> layers;
  for (int l = 0; l < num_layers; ++l) {
    DenseNet net = DenseNet::random({split, hidden, 2 * (dim - split)}, Activation::kSwish, rng);
    net.weight(1) *= strength;
    net.bias(1) *= strength;
    layers.push_back({std::move(net)});
  }
  return std::make_shared<CouplingFlowMap>(dim, std::move(layers));
}

Eigen::VectorXd CouplingFlowMap::forward(const Eigen::VectorXd& x) const {
  check_dim(x, "forward");
  const int nb = dim_ - split_;
  Eigen::VectorXd v = x;
  for (const auto& layer : layers_) {
    Eigen::VectorXd st = layer.conditioner.forward({v.data(), static_cast<std::size_t>(split_)});
    for (int k = 0; k < nb; ++k) {
      const double s = scale_limit_ * std::tanh(st(k) / scale_limit_);
      v(split_ + k) = v(split_ + k) * std::exp(s) + st(nb + k);
    }
    v.reverseInPlace();
  }
  return v;
}

Eigen::VectorXd CouplingFlowMap::inverse(const Eigen::VectorXd& y) const {
  check_dim(y, "inverse");
  const int nb = dim_ - split_;
  Eigen::VectorXd v = y;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    v.reverseInPlace();
    Eigen::VectorXd st = it->conditioner.forward({v.data(), static_cast<std::size_t>(split_)});
    for (int k = 0; k < nb; ++k) {
      const double s = scale_limit_ * std::tanh(st(k) / scale_limit_);
      v(split_ + k) = (v(split_ + k) - st(nb + k)) * std::exp(-s);
    }
  }
  return v;
}

Eigen::VectorXd PolarMap::forward(const Eigen::VectorXd& x) const {
  check_dim(x, "forward");
  return Eigen::Vector2d(std::hypot(x(0), x(1)), std::atan2(x(1), x(0)));
}

Eigen::VectorXd PolarMap::inverse(const Eigen::VectorXd& y) const {
  check_dim(y, "inverse");
  return Eigen::Vector2d(y(0) * std::cos(y(1)), y(0) * std::sin(y(1)));
}

}  // namespace decaf
