#include <doctest.h>

#include <cmath>

#include "decaf/errors.hpp"
#include "decaf/flow.hpp"
#include "support/finite_diff.hpp"

using namespace decaf;

namespace {

Eigen::MatrixXd random_rows(int n, int d, Rng& rng, double scale = 1.5) {
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = scale * std_normal(rng);
  return x;
}

// sign * log|det| of the central-difference Jacobian at z.
double fd_log_abs_det(const AffineAutoregressiveFlow& f, const Eigen::VectorXd& z) {
  const int d = f.dim();
  Eigen::MatrixXd jac(d, d);
  const double h = 1e-6;
  for (int c = 0; c < d; ++c) {
    Eigen::VectorXd up = z, down = z;
    up[c] += h;
    down[c] -= h;
    jac.col(c) = (f.forward(up).first - f.forward(down).first) / (2.0 * h);
  }
  return std::log(std::abs(jac.determinant()));
}

}  // namespace

TEST_CASE("identity-initialized flow is the identity") {
  Rng rng = make_rng(1);
  for (int depth : {1, 2, 4}) {
    FlowConfig cfg;
    cfg.depth = depth;
    const AffineAutoregressiveFlow f = AffineAutoregressiveFlow::identity(3, cfg, rng);
    const Eigen::MatrixXd z = random_rows(20, 3, rng);
    const FlowOutput o = f.forward_rows(z);
    CHECK(o.r == z);
    CHECK(o.log_det.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("pure scaling block has log-det d ln 2") {
  Rng rng = make_rng(2);
  FlowConfig cfg;
  cfg.depth = 1;
  for (int d : {1, 2, 5}) {
    AffineAutoregressiveFlow f = AffineAutoregressiveFlow::identity(d, cfg, rng);
    f.params().view("f0/an_logs").setConstant(std::log(2.0));
    const Eigen::VectorXd z = Eigen::VectorXd::LinSpaced(d, -1.0, 2.0);
    const auto [r, ld] = f.forward(z);
    CHECK((r - 2.0 * z).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(ld == doctest::Approx(d * std::log(2.0)).epsilon(1e-14));
  }
}

TEST_CASE("log-det matches the finite-difference Jacobian") {
  Rng rng = make_rng(3);
  for (int d : {1, 2, 3, 5}) {
    for (int depth : {1, 2, 4}) {
      FlowConfig cfg;
      cfg.depth = depth;
      const AffineAutoregressiveFlow f = AffineAutoregressiveFlow::random(d, cfg, rng, 0.5);
      for (int s = 0; s < 5; ++s) {
        const Eigen::VectorXd z = random_rows(1, d, rng).row(0).transpose();
        const double ld = f.forward(z).second;
        const double fd = fd_log_abs_det(f, z);
        CHECK(std::abs(ld - fd) / std::max(1.0, std::abs(fd)) <= 1e-4);
      }
    }
  }
}

TEST_CASE("flow round trip on 1000 random points at three depths") {
  Rng rng = make_rng(4);
  for (int depth : {1, 2, 4}) {
    FlowConfig cfg;
    cfg.depth = depth;
    for (int d : {1, 2, 3}) {
      const AffineAutoregressiveFlow f = AffineAutoregressiveFlow::random(d, cfg, rng, 0.7);
      const Eigen::MatrixXd z = random_rows(1000, d, rng);
      const FlowOutput fwd = f.forward_rows(z);
      const FlowOutput inv = f.inverse_rows(fwd.r);
      CHECK((inv.r - z).cwiseAbs().maxCoeff() <= 1e-6);
      CHECK((fwd.log_det + inv.log_det).cwiseAbs().maxCoeff() <= 1e-6);
    }
  }
}

TEST_CASE("taped forward agrees with the direct evaluation and its gradient") {
  Rng rng = make_rng(5);
  FlowConfig cfg;
  cfg.depth = 2;
  cfg.hidden_per_dim = 3;
  const AffineAutoregressiveFlow f = AffineAutoregressiveFlow::random(2, cfg, rng, 0.5);
  const Eigen::MatrixXd z = random_rows(6, 2, rng);
  const FlowOutput direct = f.forward_rows(z);
  ad::Tape tape;
  BoundParams bound(tape, f.params());
  const auto [r, ld] = f.forward(bound, tape.constant(z));
  CHECK((r.value() - direct.r).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((ld.value().col(0) - direct.log_det).cwiseAbs().maxCoeff() <= 1e-12);

  const LossFn loss = [&](ad::Tape& t, const BoundParams& b) {
    const auto [rr, l] = f.forward(b, t.constant(z));
    return ad::add(ad::mean(ad::square(rr)), ad::mean(l));
  };
  const Eigen::VectorXd g = gradient(loss, f.params()).values();
  const Eigen::VectorXd fd = testing::central_difference(loss, f.params());
  CHECK(testing::max_relative_error(g, fd, 1e-6) <= 1e-4);
}

TEST_CASE("autoregressive structure: output k ignores inputs after k in one block") {
  Rng rng = make_rng(6);
  FlowConfig cfg;
  cfg.depth = 1;
  const AffineAutoregressiveFlow f = AffineAutoregressiveFlow::random(4, cfg, rng, 0.8);
  const Eigen::VectorXd z = random_rows(1, 4, rng).row(0).transpose();
  const Eigen::VectorXd r = f.forward(z).first;
  for (int c = 0; c < 4; ++c) {
    Eigen::VectorXd z2 = z;
    z2[c] += 0.7;
    const Eigen::VectorXd r2 = f.forward(z2).first;
    for (int k = 0; k < c; ++k) CHECK(r2[k] == r[k]);
  }
}

TEST_CASE("non-finite values are reported with the block") {
  Rng rng = make_rng(7);
  FlowConfig cfg;
  cfg.depth = 2;
  AffineAutoregressiveFlow f = AffineAutoregressiveFlow::identity(2, cfg, rng);
  f.params().view("f1/an_logs").setConstant(800.0);
  try {
    f.forward_rows(Eigen::MatrixXd::Ones(1, 2));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("block 1") != std::string::npos);
  }
  CHECK_THROWS_AS(f.forward_rows(Eigen::MatrixXd::Ones(1, 3)), ContractViolation);
  CHECK_THROWS_AS(AffineAutoregressiveFlow::identity(0, cfg, rng), ContractViolation);
}
