#pragma once

// Reverse-mode differentiation over a recorded tape of dense matrix ops.
//
// Every op appends one node holding its value and a closure that pushes the
// node's incoming gradient to its inputs. Broadcasting follows a small rule
// set: a 1x1 operand broadcasts everywhere, a 1xN row broadcasts down rows,
// an Mx1 column broadcasts across columns.

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace decaf::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;

  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Input that never receives a gradient.
  Var constant(Matrix value);
  // Leaf that accumulates a gradient during backward().
  Var variable(Matrix value);

  const Matrix& value(const Var& v) const { return nodes_[v.id()].value; }
  const Matrix& value(int id) const { return nodes_[id].value; }
  // Gradient of the last backward() root w.r.t. v; zeros if v was not reached.
  Matrix grad(const Var& v) const;
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  // root must be 1x1.
  void backward(const Var& root);

  std::size_t size() const { return nodes_.size(); }

  // First node (in recording order) whose value has a NaN/Inf, or -1.
  int first_non_finite() const;
  // Ids of variable() leaves that `id` depends on, ascending.
  std::vector<int> leaf_ancestors(int id) const;

  // Record a derived node. requires_grad is inherited from the inputs.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward fn);
  Var record(Matrix value, const std::vector<Var>& inputs, Backward fn);

  // Used by backward closures.
  void accumulate(int id, const Matrix& g);
  bool wants(int id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
    std::vector<int> inputs;
  };
  std::vector<Node> nodes_;
};

// Elementwise arithmetic with broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);

Var matmul(const Var& a, const Var& b);
// log|det a| for square a (1x1 result).
Var log_abs_det(const Var& a);

// Elementwise nonlinearities.
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var swish(const Var& a);  // x * sigmoid(x)
Var softplus(const Var& a);
// max(a, lo); gradient is zero where the floor is active.
Var clamp_min(const Var& a, double lo);

// Reductions.
Var sum(const Var& a);       // 1x1
Var mean(const Var& a);      // 1x1
Var row_sum(const Var& a);   // Mx1, sums across columns
Var col_mean(const Var& a);  // 1xN, averages down rows

// Shape manipulation.
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var transpose(const Var& a);
Var softmax_rows(const Var& a);

// Elementwise binary cross-entropy on logits; targets in [0,1].
Var bce_with_logits(const Var& logits, const Matrix& targets);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& a) { return neg(a); }

}  // namespace decaf::ad
