#include "doctest.h"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "decaf/autodiff.hpp"
#include "decaf/dense_net.hpp"
#include "decaf/errors.hpp"
#include "decaf/optimizer.hpp"
#include "decaf/param_vector.hpp"
#include "support/finite_diff.hpp"

using decaf::Activation;
using decaf::BoundParams;
using decaf::DenseNet;
using decaf::ParamVector;
namespace ad = decaf::ad;

namespace {

double swish_ref(double x) { return x / (1.0 + std::exp(-x)); }

// Straight-line scalar evaluation of a DenseNet, independent of the Eigen path.
std::vector<double> reference_forward(const DenseNet& net, std::vector<double> x) {
  for (int l = 0; l < net.num_layers(); ++l) {
    const auto w = net.weight(l);
    const auto b = net.bias(l);
    std::vector<double> y(static_cast<std::size_t>(w.cols()));
    for (Eigen::Index o = 0; o < w.cols(); ++o) {
      double acc = b(0, o);
      for (Eigen::Index i = 0; i < w.rows(); ++i) acc += x[i] * w(i, o);
      if (l + 1 < net.num_layers() && net.activation() == Activation::kSwish) acc = swish_ref(acc);
      y[o] = acc;
    }
    x = std::move(y);
  }
  return x;
}

Eigen::MatrixXd random_matrix(decaf::Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = decaf::uniform(rng, lo, hi);
  return m;
}

}  // namespace

TEST_CASE("forward: identity network returns its input") {
  DenseNet net({2, 2}, Activation::kIdentity);
  net.weight(0) = Eigen::MatrixXd::Identity(2, 2);
  const std::vector<double> x{1.0, 2.0};
  const Eigen::VectorXd y = net.forward(x);
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);
}

TEST_CASE("forward: zero weights return the bias") {
  DenseNet net({3, 2}, Activation::kIdentity);
  net.bias(0) << 0.25, -4.0;
  const std::vector<double> x{7.0, -3.0, 11.0};
  const Eigen::VectorXd y = net.forward(x);
  CHECK(y[0] == 0.25);
  CHECK(y[1] == -4.0);
}

TEST_CASE("forward: seeded 2-layer net matches scalar re-evaluation") {
  decaf::Rng rng = decaf::make_rng(42);
  const DenseNet net = DenseNet::random({2, 8, 3}, Activation::kSwish, rng);
  const std::vector<double> x{0.5, -0.5};
  const Eigen::VectorXd y = net.forward(x);
  const std::vector<double> ref = reference_forward(net, x);
  REQUIRE(y.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  // Taped and batched paths agree with the single-sample path.
  ad::Tape tape;
  BoundParams bound(tape, net.params());
  Eigen::MatrixXd xb(1, 2);
  xb << 0.5, -0.5;
  const ad::Var yt = net.forward(bound, tape.constant(xb));
  for (int i = 0; i < 3; ++i) CHECK(yt.value()(0, i) == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("forward: dimension mismatch is a contract violation") {
  DenseNet net({3, 2}, Activation::kIdentity);
  const std::vector<double> x{1.0, 2.0};
  CHECK_THROWS_AS(net.forward(x), decaf::ContractViolation);
  CHECK_THROWS_AS(net.forward_batch(Eigen::MatrixXd::Zero(4, 2)), decaf::ContractViolation);
}

TEST_CASE("forward is pure and deterministic") {
  decaf::Rng rng = decaf::make_rng(3);
  const DenseNet net = DenseNet::random({4, 5, 2}, Activation::kSwish, rng);
  const Eigen::VectorXd before = net.params().values();
  const Eigen::MatrixXd x = random_matrix(rng, 6, 4);
  const Eigen::MatrixXd x_copy = x;
  const Eigen::MatrixXd a = net.forward_batch(x);
  const Eigen::MatrixXd b = net.forward_batch(x);
  CHECK(a == b);
  CHECK(x == x_copy);
  CHECK(net.params().values() == before);
}

TEST_CASE("gradient: sum of squares") {
  ParamVector p;
  p.add_block("theta", 2, 1);
  p.values() << 1.0, -2.0;
  const ParamVector g = decaf::gradient(
      [](ad::Tape&, const BoundParams& b) { return ad::sum(ad::square(b[0])); }, p);
  CHECK(g.values()[0] == 2.0);
  CHECK(g.values()[1] == -4.0);
  CHECK(p.values()[0] == 1.0);  // inputs untouched
}

TEST_CASE("gradient: constant loss has zero gradient") {
  ParamVector p;
  p.add_block("theta", 3, 1, 0.7);
  const ParamVector g = decaf::gradient(
      [](ad::Tape& t, const BoundParams&) { return t.constant(Eigen::MatrixXd::Constant(1, 1, 3.0)); },
      p);
  CHECK(g.values().isZero());
}

TEST_CASE("gradient: 2-layer MLP MSE matches central differences") {
  decaf::Rng rng = decaf::make_rng(11);
  const DenseNet net = DenseNet::random({3, 6, 2}, Activation::kSwish, rng);
  const Eigen::MatrixXd x = random_matrix(rng, 10, 3);
  const Eigen::MatrixXd y = random_matrix(rng, 10, 2);
  const decaf::LossFn loss = [&](ad::Tape& t, const BoundParams& b) {
    const ad::Var pred = net.forward(b, t.constant(x));
    return ad::mean(ad::square(ad::sub(pred, t.constant(y))));
  };
  const ParamVector g = decaf::gradient(loss, net.params());
  const Eigen::VectorXd fd = decaf::testing::central_difference(loss, net.params(), 1e-5);
  CHECK(decaf::testing::max_relative_error(g.values(), fd) <= 1e-4);
}

TEST_CASE("gradient: non-finite loss names the offending block") {
  ParamVector p;
  p.add_block("weights", 2, 1, 1.0);
  p.add_block("log_scale", 1, 1, -1.0);
  try {
    decaf::gradient([](ad::Tape&, const BoundParams& b) { return ad::sum(ad::log(b["log_scale"])); },
                    p);
    FAIL("expected NumericError");
  } catch (const decaf::NumericError& e) {
    CHECK(std::string(e.what()).find("log_scale") != std::string::npos);
  }
}

namespace {

struct OpCase {
  std::string name;
  std::vector<std::pair<int, int>> shapes;
  double lo = -1.5;
  double hi = 1.5;
  std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)> build;
};

}  // namespace

TEST_CASE("every differentiable op matches central differences on 100 random instances") {
  const Eigen::MatrixXd bce_targets = (Eigen::MatrixXd(3, 2) << 0, 1, 1, 0, 0.3, 1).finished();
  std::vector<OpCase> cases = {
      {"add_full", {{3, 2}, {3, 2}}, -1.5, 1.5, [](auto&, auto& v) { return ad::add(v[0], v[1]); }},
      {"add_row", {{3, 2}, {1, 2}}, -1.5, 1.5, [](auto&, auto& v) { return ad::add(v[0], v[1]); }},
      {"add_col", {{3, 2}, {3, 1}}, -1.5, 1.5, [](auto&, auto& v) { return ad::add(v[0], v[1]); }},
      {"sub_scalar", {{3, 2}, {1, 1}}, -1.5, 1.5, [](auto&, auto& v) { return ad::sub(v[0], v[1]); }},
      {"mul_row", {{3, 2}, {1, 2}}, -1.5, 1.5, [](auto&, auto& v) { return ad::mul(v[0], v[1]); }},
      {"div", {{3, 2}, {3, 2}}, 0.5, 2.0, [](auto&, auto& v) { return ad::div(v[0], v[1]); }},
      {"scale", {{2, 2}}, -1.5, 1.5, [](auto&, auto& v) { return ad::scale(v[0], -2.5); }},
      {"add_scalar", {{2, 2}}, -1.5, 1.5, [](auto&, auto& v) { return ad::add_scalar(v[0], 0.5); }},
      {"matmul", {{3, 4}, {4, 2}}, -1.5, 1.5, [](auto&, auto& v) { return ad::matmul(v[0], v[1]); }},
      {"log_abs_det", {{3, 3}}, -1.5, 1.5, [](auto&, auto& v) { return ad::log_abs_det(v[0]); }},
      {"exp", {{2, 3}}, -1.5, 1.5, [](auto&, auto& v) { return ad::exp(v[0]); }},
      {"log", {{2, 3}}, 0.3, 2.0, [](auto&, auto& v) { return ad::log(v[0]); }},
      {"square", {{2, 3}}, -1.5, 1.5, [](auto&, auto& v) { return ad::square(v[0]); }},
      {"sigmoid", {{2, 3}}, -3.0, 3.0, [](auto&, auto& v) { return ad::sigmoid(v[0]); }},
      {"tanh", {{2, 3}}, -2.0, 2.0, [](auto&, auto& v) { return ad::tanh(v[0]); }},
      {"swish", {{2, 3}}, -3.0, 3.0, [](auto&, auto& v) { return ad::swish(v[0]); }},
      {"softplus", {{2, 3}}, -3.0, 3.0, [](auto&, auto& v) { return ad::softplus(v[0]); }},
      {"clamp_min", {{2, 3}}, 0.2, 2.0, [](auto&, auto& v) { return ad::clamp_min(v[0], 0.1); }},
      {"row_sum", {{3, 4}}, -1.5, 1.5, [](auto&, auto& v) { return ad::row_sum(v[0]); }},
      {"col_mean", {{3, 4}}, -1.5, 1.5, [](auto&, auto& v) { return ad::col_mean(v[0]); }},
      {"mean", {{3, 4}}, -1.5, 1.5, [](auto&, auto& v) { return ad::mean(v[0]); }},
      {"concat", {{3, 1}, {3, 2}}, -1.5, 1.5,
       [](auto&, auto& v) { return ad::concat_cols({v[0], v[1], v[0]}); }},
      {"transpose", {{3, 4}, {3, 2}}, -1.5, 1.5,
       [](auto&, auto& v) { return ad::matmul(ad::transpose(v[0]), v[1]); }},
      {"slice", {{3, 4}}, -1.5, 1.5, [](auto&, auto& v) { return ad::slice_cols(v[0], 1, 2); }},
      {"softmax", {{3, 3}}, -2.0, 2.0, [](auto&, auto& v) { return ad::softmax_rows(v[0]); }},
      {"bce", {{3, 2}}, -3.0, 3.0,
       [bce_targets](auto&, auto& v) { return ad::bce_with_logits(v[0], bce_targets); }},
  };
  decaf::Rng rng = decaf::make_rng(2024);
  for (const OpCase& op : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      ParamVector p;
      for (std::size_t k = 0; k < op.shapes.size(); ++k) {
        p.add_block("in" + std::to_string(k), op.shapes[k].first, op.shapes[k].second);
      }
      for (Eigen::Index i = 0; i < p.size(); ++i) p.values()[i] = decaf::uniform(rng, op.lo, op.hi);
      // Random projection of the op output to a scalar.
      Eigen::MatrixXd proj;
      const decaf::LossFn loss = [&](ad::Tape& t, const BoundParams& b) {
        std::vector<ad::Var> ins;
        for (std::size_t k = 0; k < op.shapes.size(); ++k) ins.push_back(b[static_cast<int>(k)]);
        const ad::Var out = op.build(t, ins);
        if (proj.size() == 0) proj = random_matrix(rng, out.rows(), out.cols());
        return ad::sum(ad::mul(out, t.constant(proj)));
      };
      const ParamVector g = decaf::gradient(loss, p);
      const Eigen::VectorXd fd = decaf::testing::central_difference(loss, p, 1e-5);
      worst = std::max(worst, decaf::testing::max_relative_error(g.values(), fd));
    }
    INFO("op = " << op.name);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("adamw: zero gradient and zero decay leaves params unchanged") {
  ParamVector p;
  p.add_block("w", 3, 1, 0.5);
  decaf::OptimizerState s = decaf::make_adamw(p, 0.1, 0.0);
  decaf::adamw_step(s, p, p.zeros_like());
  CHECK(p.values().isApproxToConstant(0.5, 0.0));
  CHECK(s.step == 1);
  CHECK(s.first_moment.size() == p.size());
}

TEST_CASE("adamw: single step on a scalar matches the hand-computed update") {
  ParamVector p;
  p.add_block("w", 1, 1, 1.0);
  ParamVector g = p.zeros_like();
  g.values()[0] = 1.0;
  decaf::OptimizerState s = decaf::make_adamw(p, 0.1, 0.0);
  decaf::adamw_step(s, p, g);
  // m = 0.1, v = 0.001; bias-corrected m_hat = 1, v_hat = 1.
  // p = 1 - 0.1 * 1 / (sqrt(1) + 1e-8)
  const double expected = 1.0 - 0.1 / (1.0 + 1e-8);
  CHECK(p.values()[0] == doctest::Approx(expected).epsilon(1e-15));
  CHECK(s.first_moment[0] == doctest::Approx(0.1));
  CHECK(s.second_moment[0] == doctest::Approx(0.001));
}

TEST_CASE("adamw: decoupled weight decay shrinks multiplicatively") {
  ParamVector p;
  p.add_block("w", 2, 1);
  p.values() << 2.0, -4.0;
  decaf::OptimizerState s = decaf::make_adamw(p, 0.01, 0.5);
  decaf::adamw_step(s, p, p.zeros_like());
  CHECK(p.values()[0] == doctest::Approx(2.0 * (1.0 - 0.01 * 0.5)).epsilon(1e-15));
  CHECK(p.values()[1] == doctest::Approx(-4.0 * (1.0 - 0.01 * 0.5)).epsilon(1e-15));
}

TEST_CASE("adamw: non-finite gradient and shape mismatch are rejected") {
  ParamVector p;
  p.add_block("w", 2, 1, 1.0);
  decaf::OptimizerState s = decaf::make_adamw(p, 0.1);
  ParamVector g = p.zeros_like();
  g.values()[1] = std::nan("");
  CHECK_THROWS_AS(decaf::adamw_step(s, p, g), decaf::NumericError);
  CHECK(s.step == 0);
  ParamVector other;
  other.add_block("w", 3, 1);
  CHECK_THROWS_AS(decaf::adamw_step(s, p, other), decaf::ContractViolation);
}

TEST_CASE("optimizer trajectories are bit-reproducible") {
  auto run = [] {
    decaf::Rng rng = decaf::make_rng(5);
    DenseNet net = DenseNet::random({2, 4, 1}, Activation::kSwish, rng);
    const Eigen::MatrixXd x = random_matrix(rng, 16, 2);
    const Eigen::MatrixXd y = random_matrix(rng, 16, 1);
    decaf::OptimizerState s = decaf::make_adamw(net.params(), 1e-2, 1e-3);
    for (int step = 0; step < 50; ++step) {
      const auto vg = decaf::value_and_gradient(
          [&](ad::Tape& t, const BoundParams& b) {
            return ad::mean(ad::square(ad::sub(net.forward(b, t.constant(x)), t.constant(y))));
          },
          net.params());
      decaf::adamw_step(s, net.params(), vg.grad, decaf::cosine_warmup_factor(step, 10, 50));
      CHECK(net.params().values().allFinite());
    }
    return net.params().values();
  };
  const Eigen::VectorXd a = run();
  const Eigen::VectorXd b = run();
  CHECK(a == b);
  CHECK(a.size() == 2 * 4 + 4 + 4 + 1);
}

TEST_CASE("param vector: block bookkeeping and concat/split") {
  ParamVector a;
  a.add_block("W0", 2, 3);
  a.add_block("b0", 1, 3);
  CHECK(a.size() == 9);
  CHECK_THROWS_AS(a.add_block("W0", 1, 1), decaf::ContractViolation);
  ParamVector b;
  b.add_block("x", 2, 2, 1.5);
  ParamVector joined = ParamVector::concat({{"a.", &a}, {"b.", &b}});
  CHECK(joined.size() == 13);
  CHECK(joined.index_of("b.x") == 2);
  joined.values().setConstant(3.0);
  joined.split_into({{"a.", &a}, {"b.", &b}});
  CHECK(a.values().isApproxToConstant(3.0));
  CHECK(b.view("x")(1, 1) == 3.0);
}
