#include "decaf/param_vector.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "decaf/errors.hpp"

namespace decaf {

void ParamVector::add_block(std::string name, Eigen::Index rows, Eigen::Index cols, double fill) {
  if (rows <= 0 || cols <= 0) {
    throw ContractViolation(fmt::format("ParamVector: block '{}' has empty shape", name));
  }
  if (index_of(name) >= 0) {
    throw ContractViolation(fmt::format("ParamVector: duplicate block '{}'", name));
  }
  const Eigen::Index offset = values_.size();
  values_.conservativeResize(offset + rows * cols);
  values_.segment(offset, rows * cols).setConstant(fill);
  blocks_.push_back(ParamBlock{std::move(name), rows, cols, offset});
}

int ParamVector::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

int ParamVector::checked_index(std::string_view name) const {
  const int i = index_of(name);
  if (i < 0) throw ContractViolation(fmt::format("ParamVector: no block named '{}'", name));
  return i;
}

const ParamBlock& ParamVector::block(std::string_view name) const {
  return blocks_[checked_index(name)];
}

Eigen::Map<Eigen::MatrixXd> ParamVector::view(int block_index) {
  const ParamBlock& b = blocks_.at(block_index);
  return {values_.data() + b.offset, b.rows, b.cols};
}

Eigen::Map<const Eigen::MatrixXd> ParamVector::view(int block_index) const {
  const ParamBlock& b = blocks_.at(block_index);
  return {values_.data() + b.offset, b.rows, b.cols};
}

bool ParamVector::same_shape(const ParamVector& other) const {
  if (blocks_.size() != other.blocks_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].rows != other.blocks_[i].rows || blocks_[i].cols != other.blocks_[i].cols) {
      return false;
    }
  }
  return true;
}

ParamVector ParamVector::zeros_like() const {
  ParamVector out = *this;
  out.values_.setZero();
  return out;
}

std::optional<std::string> ParamVector::first_non_finite_block() const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (!view(static_cast<int>(i)).allFinite()) return blocks_[i].name;
  }
  return std::nullopt;
}

ParamVector ParamVector::concat(
    const std::vector<std::pair<std::string, const ParamVector*>>& parts) {
  ParamVector out;
  Eigen::Index total = 0;
  for (const auto& [prefix, pv] : parts) total += pv->size();
  out.values_.resize(total);
  Eigen::Index at = 0;
  for (const auto& [prefix, pv] : parts) {
    out.values_.segment(at, pv->size()) = pv->values_;
    for (const ParamBlock& b : pv->blocks_) {
      out.blocks_.push_back(ParamBlock{prefix + b.name, b.rows, b.cols, at + b.offset});
    }
    at += pv->size();
  }
  return out;
}

void ParamVector::split_into(const std::vector<std::pair<std::string, ParamVector*>>& parts) const {
  Eigen::Index at = 0;
  for (const auto& [prefix, pv] : parts) {
    if (at + pv->size() > size()) throw ContractViolation("ParamVector::split_into: size mismatch");
    pv->values_ = values_.segment(at, pv->size());
    at += pv->size();
  }
  if (at != size()) throw ContractViolation("ParamVector::split_into: size mismatch");
}

BoundParams::BoundParams(ad::Tape& tape, const ParamVector& params) : tape_(&tape), shape_(&params) {
  vars_.reserve(params.blocks().size());
  for (std::size_t i = 0; i < params.blocks().size(); ++i) {
    vars_.push_back(tape.variable(params.view(static_cast<int>(i))));
  }
}

const ad::Var& BoundParams::operator[](std::string_view name) const {
  const int i = shape_->index_of(name);
  if (i < 0) throw ContractViolation(fmt::format("BoundParams: no block named '{}'", name));
  return vars_[i];
}

ParamVector BoundParams::gather_grad() const {
  ParamVector g = shape_->zeros_like();
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    g.view(static_cast<int>(i)) = tape_->grad(vars_[i]);
  }
  return g;
}

namespace {

// Blame the first parameter block feeding the earliest non-finite node.
std::string offending_block(const ad::Tape& tape, const BoundParams& bound,
                            const ParamVector& params) {
  if (auto b = params.first_non_finite_block()) return *b;
  const int bad = tape.first_non_finite();
  if (bad >= 0) {
    const std::vector<int> leaves = tape.leaf_ancestors(bad);
    for (std::size_t i = 0; i < params.blocks().size(); ++i) {
      const int id = bound[static_cast<int>(i)].id();
      if (std::binary_search(leaves.begin(), leaves.end(), id)) return params.blocks()[i].name;
    }
  }
  return "<none>";
}

}  // namespace

ValueAndGrad value_and_gradient(const LossFn& loss, const ParamVector& params) {
  ad::Tape tape;
  BoundParams bound(tape, params);
  ad::Var out = loss(tape, bound);
  if (out.tape() != &tape) throw ContractViolation("gradient: loss recorded on a foreign tape");
  const double value = out.scalar();
  tape.backward(out);
  ValueAndGrad result{value, bound.gather_grad()};
  if (!std::isfinite(value)) {
    throw NumericError(fmt::format("non-finite loss ({}); offending parameter block '{}'", value,
                                   offending_block(tape, bound, params)));
  }
  return result;
}

ParamVector gradient(const LossFn& loss, const ParamVector& params) {
  return value_and_gradient(loss, params).grad;
}

}  // namespace decaf
