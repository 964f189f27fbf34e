#pragma once

#include <stdexcept>
#include <string>

namespace decaf {

// Caller broke a documented precondition (shapes, ranges, sizes).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values surfaced during a numeric computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A target column is constant, so no binary classifier can be fitted.
class DegenerateTargetError : public std::runtime_error {
 public:
  DegenerateTargetError(int target, const std::string& what)
      : std::runtime_error(what), target_(target) {}
  int target() const { return target_; }

 private:
  int target_;
};

// A causal variable has no latent dimension assigned to it.
class EmptyAssignmentError : public std::runtime_error {
 public:
  EmptyAssignmentError(int variable, const std::string& what)
      : std::runtime_error(what), variable_(variable) {}
  int variable() const { return variable_; }

 private:
  int variable_;
};

// Statistic undefined on the given data (constant input, zero variance).
class UndefinedStatisticError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace decaf
