#include "decaf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "decaf/errors.hpp"

namespace decaf::ad {

const Matrix& Var::value() const {
  if (!tape_) throw ContractViolation("ad::Var: use of an unbound variable");
  return tape_->value(*this);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) {
    throw ContractViolation(fmt::format("ad::Var::scalar on a {}x{} value", v.rows(), v.cols()));
  }
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward fn) {
  bool req = false;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const Var& v : inputs) {
    req = req || nodes_[v.id()].requires_grad;
    ids.push_back(v.id());
  }
  nodes_.push_back(
      Node{std::move(value), {}, req, false, req ? std::move(fn) : Backward{}, std::move(ids)});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, Backward fn) {
  bool req = false;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const Var& v : inputs) {
    req = req || nodes_[v.id()].requires_grad;
    ids.push_back(v.id());
  }
  nodes_.push_back(
      Node{std::move(value), {}, req, false, req ? std::move(fn) : Backward{}, std::move(ids)});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

int Tape::first_non_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].value.allFinite()) return static_cast<int>(i);
  }
  return -1;
}

std::vector<int> Tape::leaf_ancestors(int id) const {
  std::vector<char> seen(nodes_.size(), 0);
  std::vector<int> stack{id};
  std::vector<int> leaves;
  while (!stack.empty()) {
    const int n = stack.back();
    stack.pop_back();
    if (seen[n]) continue;
    seen[n] = 1;
    const Node& node = nodes_[n];
    if (node.inputs.empty() && node.requires_grad) leaves.push_back(n);
    for (int in : node.inputs) stack.push_back(in);
  }
  std::sort(leaves.begin(), leaves.end());
  return leaves;
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.has_grad) return n.grad;
  return Matrix::Zero(n.value.rows(), n.value.cols());
}

void Tape::backward(const Var& root) {
  if (root.tape() != this) throw ContractViolation("Tape::backward: root belongs to another tape");
  if (nodes_[root.id()].value.size() != 1) {
    throw ContractViolation("Tape::backward: root must be a scalar");
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  accumulate(root.id(), Matrix::Ones(1, 1));
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    // Copy out: the closure may accumulate into nodes while we hold a reference.
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw ContractViolation("ad: operands recorded on different tapes");
  }
  return *a.tape();
}

Eigen::Index broadcast_dim(Eigen::Index x, Eigen::Index y, const char* op) {
  if (x == y) return x;
  if (x == 1) return y;
  if (y == 1) return x;
  throw ContractViolation(fmt::format("ad::{}: incompatible extents {} and {}", op, x, y));
}

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

template <class Fwd, class Bwd>
Var unary(const Var& a, Fwd fwd, Bwd bwd) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Matrix out = fwd(a.value());
  return t.record(std::move(out), {a}, [ia, bwd](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, bwd(tp.value(ia), g));
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const auto r = broadcast_dim(a.rows(), b.rows(), "add");
  const auto c = broadcast_dim(a.cols(), b.cols(), "add");
  Matrix out;
  if (b.rows() == 1 && b.cols() == c && a.rows() == r && a.cols() == c && r > 1) {
    out = a.value().rowwise() + b.value().row(0);
  } else {
    out = expand(a.value(), r, c) + expand(b.value(), r, c);
  }
  const int ia = a.id(), ib = b.id();
  const auto ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return t.record(std::move(out), {a, b}, [=](Tape& tp, const Matrix& g) {
    if (tp.wants(ia)) tp.accumulate(ia, reduce_to(g, ar, ac));
    if (tp.wants(ib)) tp.accumulate(ib, reduce_to(g, br, bc));
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const auto r = broadcast_dim(a.rows(), b.rows(), "sub");
  const auto c = broadcast_dim(a.cols(), b.cols(), "sub");
  Matrix out = expand(a.value(), r, c) - expand(b.value(), r, c);
  const int ia = a.id(), ib = b.id();
  const auto ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return t.record(std::move(out), {a, b}, [=](Tape& tp, const Matrix& g) {
    if (tp.wants(ia)) tp.accumulate(ia, reduce_to(g, ar, ac));
    if (tp.wants(ib)) tp.accumulate(ib, reduce_to(-g, br, bc));
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const auto r = broadcast_dim(a.rows(), b.rows(), "mul");
  const auto c = broadcast_dim(a.cols(), b.cols(), "mul");
  Matrix out = expand(a.value(), r, c).cwiseProduct(expand(b.value(), r, c));
  const int ia = a.id(), ib = b.id();
  const auto ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return t.record(std::move(out), {a, b}, [=](Tape& tp, const Matrix& g) {
    if (tp.wants(ia)) {
      tp.accumulate(ia, reduce_to(g.cwiseProduct(expand(tp.value(ib), r, c)), ar, ac));
    }
    if (tp.wants(ib)) {
      tp.accumulate(ib, reduce_to(g.cwiseProduct(expand(tp.value(ia), r, c)), br, bc));
    }
  });
}

Var div(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const auto r = broadcast_dim(a.rows(), b.rows(), "div");
  const auto c = broadcast_dim(a.cols(), b.cols(), "div");
  Matrix out = expand(a.value(), r, c).cwiseQuotient(expand(b.value(), r, c));
  const int ia = a.id(), ib = b.id();
  const auto ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return t.record(std::move(out), {a, b}, [=](Tape& tp, const Matrix& g) {
    const Matrix bx = expand(tp.value(ib), r, c);
    if (tp.wants(ia)) tp.accumulate(ia, reduce_to(g.cwiseQuotient(bx), ar, ac));
    if (tp.wants(ib)) {
      const Matrix ax = expand(tp.value(ia), r, c);
      Matrix gb = -g.cwiseProduct(ax).cwiseQuotient(bx.cwiseProduct(bx));
      tp.accumulate(ib, reduce_to(gb, br, bc));
    }
  });
}

Var scale(const Var& a, double c) {
  return unary(
      a, [c](const Matrix& x) -> Matrix { return x * c; },
      [c](const Matrix&, const Matrix& g) -> Matrix { return g * c; });
}

Var add_scalar(const Var& a, double c) {
  return unary(
      a, [c](const Matrix& x) -> Matrix { return x.array() + c; },
      [](const Matrix&, const Matrix& g) -> Matrix { return g; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ContractViolation(fmt::format("ad::matmul: {}x{} times {}x{}", a.rows(), a.cols(),
                                        b.rows(), b.cols()));
  }
  Matrix out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.wants(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.wants(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var exp(const Var& a) {
  Tape& t = *a.tape();
  Matrix out = a.value().array().exp().matrix();
  const int ia = a.id();
  const int io = static_cast<int>(t.size());
  return t.record(std::move(out), {a}, [ia, io](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.cwiseProduct(tp.value(io)));
  });
}

Var log(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().log().matrix(); },
      [](const Matrix& x, const Matrix& g) -> Matrix { return g.cwiseQuotient(x); });
}

Var square(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().square().matrix(); },
      [](const Matrix& x, const Matrix& g) -> Matrix { return 2.0 * g.cwiseProduct(x); });
}

namespace {
Eigen::ArrayXXd logistic(const Matrix& x) {
  return (1.0 + (-x.array()).exp()).inverse();
}
}  // namespace

// d/dx s(x) = y (1 - y), read from the recorded output.
Var sigmoid(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const int io = static_cast<int>(t.size());
  return t.record(logistic(a.value()).matrix(), {a}, [ia, io](Tape& tp, const Matrix& g) {
    const auto y = tp.value(io).array();
    tp.accumulate(ia, (g.array() * y * (1.0 - y)).matrix());
  });
}

Var tanh(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().tanh().matrix(); },
      [](const Matrix& x, const Matrix& g) -> Matrix {
        const Eigen::ArrayXXd th = x.array().tanh();
        return (g.array() * (1.0 - th.square())).matrix();
      });
}

// The logistic factor is kept for the backward pass: d/dx x s(x) = s + y (1 - s).
Var swish(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  auto s = std::make_shared<Eigen::ArrayXXd>(logistic(a.value()));
  Matrix out = (a.value().array() * *s).matrix();
  const int io = static_cast<int>(t.size());
  return t.record(std::move(out), {a}, [ia, io, s](Tape& tp, const Matrix& g) {
    const Eigen::ArrayXXd& sv = *s;
    tp.accumulate(ia, (g.array() * (sv + tp.value(io).array() * (1.0 - sv))).matrix());
  });
}

namespace {
Eigen::ArrayXXd stable_softplus(const Matrix& x) {
  return x.array().max(0.0) + (-x.array().abs()).exp().log1p();
}
}  // namespace

Var softplus(const Var& a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return stable_softplus(x).matrix(); },
      [](const Matrix& x, const Matrix& g) -> Matrix {
        return (g.array() * logistic(x)).matrix();
      });
}

Var clamp_min(const Var& a, double lo) {
  return unary(
      a, [lo](const Matrix& x) -> Matrix { return x.array().max(lo).matrix(); },
      [lo](const Matrix& x, const Matrix& g) -> Matrix {
        return (x.array() >= lo).select(g.array(), 0.0).matrix();
      });
}

Var sum(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const auto r = a.rows(), c = a.cols();
  return t.record(Matrix::Constant(1, 1, a.value().sum()), {a},
                  [ia, r, c](Tape& tp, const Matrix& g) {
                    tp.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
                  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ContractViolation("ad::mean of an empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var row_sum(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const auto c = a.cols();
  Matrix out = a.value().rowwise().sum();
  return t.record(std::move(out), {a}, [ia, c](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.replicate(1, c));
  });
}

Var col_mean(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const auto r = a.rows();
  Matrix out = a.value().colwise().mean();
  return t.record(std::move(out), {a}, [ia, r](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, (g / static_cast<double>(r)).replicate(r, 1));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractViolation("ad::concat_cols: no operands");
  Tape& t = *parts.front().tape();
  const auto rows = parts.front().rows();
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractViolation("ad::concat_cols: mixed tapes");
    if (p.rows() != rows) {
      throw ContractViolation(
          fmt::format("ad::concat_cols: row mismatch {} vs {}", p.rows(), rows));
    }
    total += p.cols();
  }
  Matrix out(rows, total);
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  return t.record(std::move(out), parts, [ids, widths](Tape& tp, const Matrix& g) {
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.wants(ids[k])) tp.accumulate(ids[k], g.middleCols(off, widths[k]));
      off += widths[k];
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ContractViolation(
        fmt::format("ad::slice_cols: [{}, {}) outside {} columns", start, start + count, a.cols()));
  }
  Tape& t = *a.tape();
  const int ia = a.id();
  const auto r = a.rows(), c = a.cols();
  Matrix out = a.value().middleCols(start, count);
  return t.record(std::move(out), {a}, [=](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    full.middleCols(start, count) = g;
    tp.accumulate(ia, full);
  });
}

Var transpose(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(a.value().transpose(), {a}, [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g.transpose()); });
}

Var softmax_rows(const Var& a) {
  Tape& t = *a.tape();
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  const int ia = a.id();
  const int io = static_cast<int>(t.size());
  return t.record(std::move(out), {a}, [ia, io](Tape& tp, const Matrix& g) {
    const Matrix& s = tp.value(io);
    const Eigen::VectorXd dot = g.cwiseProduct(s).rowwise().sum();
    Matrix gi = s.cwiseProduct(g - dot.replicate(1, s.cols()));
    tp.accumulate(ia, gi);
  });
}

Var bce_with_logits(const Var& logits, const Matrix& targets) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
    throw ContractViolation("ad::bce_with_logits: target shape mismatch");
  }
  Tape& t = *logits.tape();
  const Matrix& x = logits.value();
  Matrix out = (stable_softplus(x) - targets.array() * x.array()).matrix();
  const int ia = logits.id();
  return t.record(std::move(out), {logits}, [ia, targets](Tape& tp, const Matrix& g) {
    const Eigen::ArrayXXd s = logistic(tp.value(ia));
    tp.accumulate(ia, (g.array() * (s - targets.array())).matrix());
  });
}

}  // namespace decaf::ad

namespace decaf::ad {

Var log_abs_det(const Var& a) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw ContractViolation(fmt::format("ad::log_abs_det: need a square matrix, got {}x{}", a.rows(), a.cols()));
  }
  Tape& t = *a.tape();
  const Eigen::PartialPivLU<Matrix> lu(a.value());
  const double v = lu.matrixLU().diagonal().cwiseAbs().array().log().sum();
  Matrix inv_t = lu.inverse().transpose();
  const int ia = a.id();
  return t.record(Matrix::Constant(1, 1, v), {a}, [ia, inv_t = std::move(inv_t)](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g(0, 0) * inv_t);
  });
}

}  // namespace decaf::ad
