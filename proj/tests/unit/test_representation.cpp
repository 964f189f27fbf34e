#include <doctest.h>

#include <chrono>
#include <cmath>

#include "decaf/errors.hpp"
#include "decaf/metrics.hpp"
#include "decaf/representation.hpp"

using namespace decaf;

namespace {

std::shared_ptr<EnvironmentSpec> make_env(int k, std::uint64_t seed, MapPtr mixing) {
  Rng rng = make_rng(seed);
  auto env = std::make_shared<EnvironmentSpec>();
  env->name = "env";
  env->process.graph = CausalGraph::random_dag(std::vector<int>(k, 1), 0.4, rng);
  env->process.mechanisms = MechanismSet::random(env->process.graph, rng);
  env->process.policy = InterventionPolicy::uniform(k, 0.1, -2.0, 2.0);
  env->process.observation.mixing = mixing ? mixing : std::make_shared<IdentityMap>(k);
  env->partition = VariablePartition::from_changed(k, {});
  env->transform = ChangeTransform::identity(0);
  return env;
}

std::vector<Eigen::MatrixXd> truth_blocks(const Trajectory& t) {
  std::vector<Eigen::MatrixXd> out;
  for (int i = 0; i < t.num_variables(); ++i) out.push_back(t.variable(i));
  return out;
}

std::vector<Eigen::MatrixXd> psi_blocks(const LatentSequence& seq) {
  std::vector<Eigen::MatrixXd> out;
  for (int i = 0; i < seq.assignment.num_variables; ++i) {
    if (!seq.assignment.dims_of(i).empty()) out.push_back(slice_latents(seq, i));
  }
  return out;
}

}  // namespace

TEST_CASE("oracle encoder with identity mixing returns the observations") {
  auto env = make_env(4, 1, nullptr);
  const Trajectory t = realize_environment(*env, 200, 3);
  const LatentSequence z = Encoder::oracle(env).encode(t);
  CHECK(z.z == t.observations);
  CHECK(z.length() == t.length());
}

TEST_CASE("oracle encoder inverts a rotation mixing") {
  Rng rng = make_rng(2);
  auto rot = AffineMap::random_rotation(5, rng);
  auto env = make_env(5, 2, rot);
  const Trajectory t = realize_environment(*env, 500, 4);
  const LatentSequence z = Encoder::oracle(env).encode(t);
  const Eigen::MatrixXd expected = t.observations * rot->matrix();  // R^T x per row
  CHECK((z.z - expected).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((z.z - t.states).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("oracle encoder of a changed environment reproduces its states") {
  Rng rng = make_rng(3);
  auto env = make_env(4, 3, CouplingFlowMap::random(4, rng));
  env->partition = VariablePartition::from_changed(4, {1, 2});
  env->transform = ChangeTransform::random_affine(2, rng);
  const Trajectory t = realize_environment(*env, 400, 5);
  const LatentSequence z = Encoder::oracle(env).encode(t);
  CHECK((z.z - t.states).cwiseAbs().maxCoeff() <= 1e-9);
  const auto s = match_and_score(psi_blocks(z), truth_blocks(t), MetricKind::kSpearman).second;
  CHECK(std::abs(s.diag - 1.0) <= 1e-6);
}

TEST_CASE("slice_latents examples") {
  LatentSequence seq;
  seq.z = Eigen::MatrixXd::Random(10, 5);
  seq.assignment = Assignment::identity_blocks({2, 1, 2});
  const Eigen::MatrixXd s = slice_latents(seq, 2);
  CHECK(s.cols() == 2);
  CHECK(s.col(0) == seq.z.col(3));
  CHECK(s.col(1) == seq.z.col(4));
  seq.assignment.psi = {0, 0, -1, 2, 2};
  CHECK_THROWS_AS(slice_latents(seq, 1), EmptyAssignmentError);
  try {
    slice_latents(seq, 1);
  } catch (const EmptyAssignmentError& e) {
    CHECK(e.variable() == 1);
  }
}

TEST_CASE("slice_latents equals a brute-force filter and partitions the dims") {
  Rng rng = make_rng(6);
  for (int n = 0; n < 50; ++n) {
    LatentSequence seq;
    seq.z = Eigen::MatrixXd::Random(7, 8);
    seq.assignment.num_variables = 3;
    for (int d = 0; d < 8; ++d) seq.assignment.psi.push_back(static_cast<int>(uniform(rng, -1, 3)));
    int covered = static_cast<int>(seq.assignment.dims_of(-1).size());
    for (int i = 0; i < 3; ++i) {
      std::vector<int> brute;
      for (int d = 0; d < 8; ++d)
        if (seq.assignment.psi[d] == i) brute.push_back(d);
      covered += static_cast<int>(brute.size());
      if (brute.empty()) {
        CHECK_THROWS_AS(slice_latents(seq, i), EmptyAssignmentError);
        continue;
      }
      const Eigen::MatrixXd s = slice_latents(seq, i);
      REQUIRE(s.cols() == static_cast<Eigen::Index>(brute.size()));
      for (std::size_t c = 0; c < brute.size(); ++c) CHECK(s.col(c) == seq.z.col(brute[c]));
    }
    CHECK(covered == 8);
  }
}

TEST_CASE("fit_assignment recovers a permutation") {
  Rng rng = make_rng(7);
  Eigen::MatrixXd truth(500, 4);
  for (int i = 0; i < truth.size(); ++i) truth.data()[i] = std_normal(rng);
  const std::vector<int> perm{2, 0, 3, 1};
  Eigen::MatrixXd z(500, 4);
  for (int d = 0; d < 4; ++d) z.col(d) = truth.col(perm[d]);
  std::vector<Eigen::MatrixXd> blocks;
  for (int i = 0; i < 4; ++i) blocks.emplace_back(truth.col(i));
  CHECK(fit_assignment(z, blocks).psi == perm);
  // Rank-based: monotone per-dim transforms keep the assignment.
  Eigen::MatrixXd zt = z;
  zt.col(0) = z.col(0).array().exp();
  zt.col(2) = -z.col(2).array().cube();
  CHECK(fit_assignment(zt, blocks).psi == perm);
}

TEST_CASE("fit_assignment leaves noise unassigned") {
  Rng rng = make_rng(8);
  Eigen::MatrixXd truth(1000, 3), z(1000, 4);
  for (int i = 0; i < truth.size(); ++i) truth.data()[i] = std_normal(rng);
  for (int i = 0; i < z.size(); ++i) z.data()[i] = std_normal(rng);
  std::vector<Eigen::MatrixXd> blocks;
  for (int i = 0; i < 3; ++i) blocks.emplace_back(truth.col(i));
  CHECK(fit_assignment(z, blocks).psi == std::vector<int>(4, -1));
  z.col(1).setConstant(2.0);
  CHECK(fit_assignment(z, blocks).psi[1] == -1);
}

TEST_CASE("fit_assignment maps an exact copy") {
  Rng rng = make_rng(9);
  Eigen::MatrixXd truth(100, 5);
  for (int i = 0; i < truth.size(); ++i) truth.data()[i] = std_normal(rng);
  std::vector<Eigen::MatrixXd> blocks;
  for (int i = 0; i < 5; ++i) blocks.emplace_back(truth.col(i));
  CHECK(fit_assignment(truth.col(3), blocks).psi == std::vector<int>{3});
  CHECK_THROWS_AS(fit_assignment(truth.topRows(20), blocks), ContractViolation);
}

TEST_CASE("assignment validation") {
  Assignment a;
  a.num_variables = 3;
  a.psi = {0, 1, 2};
  a.validate();
  a.unassigned_slot = true;
  CHECK_THROWS_AS(a.validate(), ContractViolation);
  a.psi = {0, 1, 2, -1};
  a.validate();
  a.psi = {0, 4, 2, -1};
  CHECK_THROWS_AS(a.validate(), ContractViolation);
}

TEST_CASE("learned-linear encoder identifies factors under linear mixing") {
  Rng rng = make_rng(10);
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(4, 4);
  for (int i = 0; i < a.size(); ++i) a.data()[i] += uniform(rng, -0.5, 0.5);
  auto env = make_env(4, 11, std::make_shared<AffineMap>(a, Eigen::VectorXd::Zero(4)));
  const Trajectory train = realize_environment(*env, 5000, 12);
  const Trajectory test = realize_environment(*env, 3000, 13);
  LinearEncoderConfig cfg;
  const auto start = std::chrono::steady_clock::now();
  const LinearEncoderFit fit = train_linear_encoder(train, cfg);
  MESSAGE("linear encoder training took "
          << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s");
  CHECK(fit.curve.back() < fit.curve.front());
  const LatentSequence z = fit.encoder.encode(test);
  const auto before = match_and_score({test.observations.col(0), test.observations.col(1),
                                       test.observations.col(2), test.observations.col(3)},
                                      truth_blocks(test), MetricKind::kSpearman).second;
  const auto s = match_and_score(psi_blocks(z), truth_blocks(test), MetricKind::kSpearman).second;
  MESSAGE("mixed diag " << before.diag << ", learned diag " << s.diag << ", off " << s.off_diag);
  CHECK(s.diag >= 0.95);

  // Encoding is deterministic and training is reproducible.
  const LinearEncoderFit again = train_linear_encoder(train, cfg);
  CHECK(again.encoder.params().values() == fit.encoder.params().values());
}
