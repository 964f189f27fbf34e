#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "decaf/autodiff.hpp"

namespace decaf {

struct ParamBlock {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index offset = 0;

  Eigen::Index size() const { return rows * cols; }
};

// Flat parameter storage with named matrix-shaped blocks (column-major).
class ParamVector {
 public:
  ParamVector() = default;

  void add_block(std::string name, Eigen::Index rows, Eigen::Index cols, double fill = 0.0);

  Eigen::Index size() const { return values_.size(); }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  int index_of(std::string_view name) const;  // -1 when absent
  const ParamBlock& block(std::string_view name) const;

  Eigen::Map<Eigen::MatrixXd> view(int block_index);
  Eigen::Map<const Eigen::MatrixXd> view(int block_index) const;
  Eigen::Map<Eigen::MatrixXd> view(std::string_view name) { return view(checked_index(name)); }
  Eigen::Map<const Eigen::MatrixXd> view(std::string_view name) const {
    return view(checked_index(name));
  }

  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }

  bool same_shape(const ParamVector& other) const;
  ParamVector zeros_like() const;
  // Name of the first block holding a NaN/Inf, if any.
  std::optional<std::string> first_non_finite_block() const;

  // Concatenate several vectors; block names become "<prefix><name>".
  static ParamVector concat(const std::vector<std::pair<std::string, const ParamVector*>>& parts);
  // Inverse of concat for vectors with matching shapes.
  void split_into(const std::vector<std::pair<std::string, ParamVector*>>& parts) const;

 private:
  int checked_index(std::string_view name) const;

  Eigen::VectorXd values_;
  std::vector<ParamBlock> blocks_;
};

// One tape leaf per block, addressable by block index or name.
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const ParamVector& params);

  const ad::Var& operator[](int block_index) const { return vars_[block_index]; }
  const ad::Var& operator[](std::string_view name) const;
  const ParamVector& shape() const { return *shape_; }
  ad::Tape& tape() const { return *tape_; }

  // Gradients of the last backward() pass, packed into a ParamVector.
  ParamVector gather_grad() const;

 private:
  ad::Tape* tape_;
  const ParamVector* shape_;
  std::vector<ad::Var> vars_;
};

using LossFn = std::function<ad::Var(ad::Tape&, const BoundParams&)>;

struct ValueAndGrad {
  double value = 0.0;
  ParamVector grad;
};

// Reverse-mode gradient of a scalar loss. Throws NumericError naming the
// offending block when the loss is not finite.
ValueAndGrad value_and_gradient(const LossFn& loss, const ParamVector& params);
ParamVector gradient(const LossFn& loss, const ParamVector& params);

}  // namespace decaf
