#pragma once

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <vector>

#include "decaf/dense_net.hpp"
#include "decaf/random.hpp"

namespace decaf {

// Bijection R^d -> R^d. Implementations are immutable after construction and
// validate invertibility there, never at call time.
class InvertibleMap {
 public:
  virtual ~InvertibleMap() = default;

  virtual int dim() const = 0;
  virtual std::string kind() const = 0;
  virtual Eigen::VectorXd forward(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::VectorXd inverse(const Eigen::VectorXd& y) const = 0;

  // Row-wise application.
  Eigen::MatrixXd forward_rows(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd inverse_rows(const Eigen::MatrixXd& y) const;

 protected:
  void check_dim(const Eigen::VectorXd& v, const char* where) const;
};

using MapPtr = std::shared_ptr<const InvertibleMap>;

class IdentityMap final : public InvertibleMap {
 public:
  explicit IdentityMap(int dim);
  int dim() const override { return dim_; }
  std::string kind() const override { return "identity"; }
  Eigen::VectorXd forward(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd inverse(const Eigen::VectorXd& y) const override;

 private:
  int dim_;
};

// y = A x + b. Construction fails for singular or badly conditioned A.
class AffineMap final : public InvertibleMap {
 public:
  AffineMap(Eigen::MatrixXd a, Eigen::VectorXd b, std::string kind = "random-affine");

  int dim() const override { return static_cast<int>(b_.size()); }
  std::string kind() const override { return kind_; }
  Eigen::VectorXd forward(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd inverse(const Eigen::VectorXd& y) const override;

  const Eigen::MatrixXd& matrix() const { return a_; }
  const Eigen::VectorXd& offset() const { return b_; }

  // Planar rotation by `radians` (dim 2).
  static std::shared_ptr<AffineMap> rotation2d(double radians);
  // Haar-random orthogonal matrix with det +1.
  static std::shared_ptr<AffineMap> random_rotation(int dim, Rng& rng);
  // Random orthogonal times diagonal scales in [min_scale, max_scale], plus a
  // uniform offset in [-max_offset, max_offset].
  static std::shared_ptr<AffineMap> random_affine(int dim, Rng& rng, double min_scale = 0.7,
                                                  double max_scale = 1.4,
                                                  double max_offset = 0.2);

 private:
  Eigen::MatrixXd a_;
  Eigen::VectorXd b_;
  Eigen::MatrixXd a_inv_;
  std::string kind_;
};

// Stack of affine coupling layers (RealNVP style) with a reversal between
// layers. The log-scale is soft-clamped with scale_limit * tanh(raw / limit).
class CouplingFlowMap final : public InvertibleMap {
 public:
  struct Layer {
    DenseNet conditioner;  // x_a -> (raw log-scale, shift) for x_b
  };

  CouplingFlowMap(int dim, std::vector<Layer> layers, double scale_limit = 1.0);
  static std::shared_ptr<CouplingFlowMap> random(int dim, Rng& rng, int num_layers = 4,
                                                 int hidden = 16, double strength = 1.0);

  int dim() const override { return dim_; }
  std::string kind() const override { return "affine-coupling-flow"; }
  Eigen::VectorXd forward(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd inverse(const Eigen::VectorXd& y) const override;

 private:
  int dim_;
  int split_;
  std::vector<Layer> layers_;
  double scale_limit_;
};

// (x, y) -> (r, theta) with theta = atan2(y, x). Meaningful for r > 0.
class PolarMap final : public InvertibleMap {
 public:
  PolarMap() = default;
  int dim() const override { return 2; }
  std::string kind() const override { return "polar"; }
  Eigen::VectorXd forward(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd inverse(const Eigen::VectorXd& y) const override;
};

}  // namespace decaf
