#include <doctest.h>

#include <cmath>
#include <numbers>

#include "decaf/env_transform.hpp"
#include "decaf/errors.hpp"

using namespace decaf;

namespace {

EnvironmentSpec base_env(int k, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  EnvironmentSpec env;
  env.name = "base";
  env.process.graph = CausalGraph::random_dag(std::vector<int>(k, 1), 0.4, rng);
  env.process.mechanisms = MechanismSet::random(env.process.graph, rng);
  env.process.policy = InterventionPolicy::uniform(k, 0.15, -1.5, 1.5);
  env.process.observation.mixing = CouplingFlowMap::random(k, rng);
  env.partition = VariablePartition::from_changed(k, {});
  env.transform = ChangeTransform::identity(0);
  return env;
}

}  // namespace

TEST_CASE("identity environment reproduces the base process") {
  EnvironmentSpec env = base_env(5, 1);
  const Trajectory a = realize_environment(env, 300, 9);
  const Trajectory b = sample_trajectory(env.process, 300, 9);
  CHECK(a.states == b.states);
  CHECK(a.observations == b.observations);
  CHECK(a.targets == b.targets);

  env.partition = VariablePartition::from_changed(5, {1, 3});
  env.transform = ChangeTransform::identity(2);
  const Trajectory c = realize_environment(env, 300, 9);
  CHECK(c.states == b.states);
}

TEST_CASE("30 degree rotation of the changed block") {
  const ChangeTransform rot = ChangeTransform::rotation2d(std::numbers::pi / 6);
  const Eigen::VectorXd e = apply_change(rot, Eigen::Vector2d(1, 0));
  CHECK(e(0) == doctest::Approx(0.86603).epsilon(1e-5));
  CHECK(e(1) == doctest::Approx(0.5).epsilon(1e-12));

  EnvironmentSpec env = base_env(4, 2);
  env.partition = VariablePartition::from_changed(4, {0, 2});
  env.transform = rot;
  Eigen::VectorXd base(4);
  base << 1, 7, 0, 9;
  const Eigen::VectorXd s = env.to_environment(base);
  CHECK(s(0) == doctest::Approx(std::cos(std::numbers::pi / 6)));
  CHECK(s(2) == doctest::Approx(0.5));
  CHECK(s(1) == 7);
  CHECK(s(3) == 9);
  CHECK((env.to_base(s) - base).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("coarsened groups share target bits on every step") {
  EnvironmentSpec env = base_env(6, 3);
  env.coarsening = {{3, 4}};
  const Trajectory t = realize_environment(env, 10000, 5);
  CHECK((t.targets.col(3).array() == t.targets.col(4).array()).all());
  CHECK(t.targets.col(3).sum() > 500);
}

TEST_CASE("apply_change examples") {
  Rng rng = make_rng(4);
  const Eigen::Vector3d c(0.3, -1.2, 2.0);
  CHECK(apply_change(ChangeTransform::identity(3), c) == c);
  CHECK_THROWS_AS(apply_change(ChangeTransform::identity(2), c), ContractViolation);

  Eigen::MatrixXd a(3, 3);
  a << 1.0, 0.5, 0.0, -0.2, 1.3, 0.1, 0.0, 0.4, 0.9;
  const Eigen::Vector3d b(0.1, 0.2, -0.3);
  const ChangeTransform aff = ChangeTransform::affine(a, b);
  const Eigen::VectorXd y = apply_change(aff, c);
  CHECK((y - (a * c + b)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((invert_change(aff, y) - c).cwiseAbs().maxCoeff() < 1e-9);

  for (const ChangeTransform& t :
       {ChangeTransform::random_affine(3, rng), ChangeTransform::coupling_flow(3, rng),
        ChangeTransform::random_rotation(3, rng)}) {
    double worst = 0;
    for (int n = 0; n < 1000; ++n) {
      Eigen::VectorXd v(3);
      for (int i = 0; i < 3; ++i) v(i) = uniform(rng, -2, 2);
      worst = std::max(worst, (invert_change(t, apply_change(t, v)) - v).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("polar change round-trips on r > 0") {
  const ChangeTransform p = ChangeTransform::polar();
  const Eigen::VectorXd rt = apply_change(p, Eigen::Vector2d(0, 2));
  CHECK(rt(0) == doctest::Approx(2));
  CHECK(rt(1) == doctest::Approx(std::numbers::pi / 2));
  Rng rng = make_rng(6);
  for (int n = 0; n < 1000; ++n) {
    const Eigen::Vector2d v(uniform(rng, 0.1, 2), uniform(rng, -2, 2));
    CHECK((invert_change(p, apply_change(p, v)) - v).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("transformed environments conserve dimension and keep shared values") {
  EnvironmentSpec env = base_env(5, 7);
  Rng rng = make_rng(8);
  env.partition = VariablePartition::from_changed(5, {1, 2, 4});
  env.transform = ChangeTransform::random_affine(3, rng);
  const Trajectory t = realize_environment(env, 2000, 10);
  CHECK(t.states.cols() == env.process.graph.total_dim());
  for (int v : env.partition.shared) CHECK(t.states.col(v) == t.base_states.col(v));
  double worst = 0;
  for (int s = 0; s < t.length(); ++s) {
    const Eigen::VectorXd env_state = env.to_environment(t.base_states.row(s).transpose());
    worst = std::max(worst, (env_state - t.states.row(s).transpose()).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("interventions act in the environment's coordinates") {
  EnvironmentSpec env = base_env(3, 11);
  env.partition = VariablePartition::from_changed(3, {0, 1});
  env.transform = ChangeTransform::polar();
  env.process.policy.low = {0.5, -0.9, -1};
  env.process.policy.high = {2.0, 0.9, 1};
  env.process.policy.probability = {0.0, 0.0, 0.0};
  env.process.policy.schedule.push_back({4, 0, Eigen::VectorXd::Constant(1, 1.7)});
  const Trajectory t = realize_environment(env, 8, 2);
  // do(r = 1.7) keeps the observational angle.
  CHECK(t.states(4, 0) == 1.7);
  CHECK(std::hypot(t.base_states(4, 0), t.base_states(4, 1)) == doctest::Approx(1.7));
  CHECK(std::atan2(t.base_states(4, 1), t.base_states(4, 0)) == doctest::Approx(t.states(4, 1)));
}

TEST_CASE("environment validation") {
  EnvironmentSpec env = base_env(4, 12);
  env.partition = VariablePartition::from_changed(4, {0, 1});
  env.transform = ChangeTransform::identity(3);
  CHECK_THROWS_AS(env.validate(), ContractViolation);
  env.transform = ChangeTransform::identity(2);
  env.validate();
  env.coarsening = {{1, 2}};
  env.no_overlap = true;
  CHECK_THROWS_AS(env.validate(), ContractViolation);
  env.coarsening = {{2, 3}};
  env.validate();
  env.coarsening = {{2, 3}, {3}};
  CHECK_THROWS_AS(env.validate(), ContractViolation);
  VariablePartition bad{{0, 1}, {1, 2, 3}};
  CHECK_THROWS_AS(bad.validate(4), ContractViolation);
}

TEST_CASE("composition coverage") {
  CompositionSpec comp;
  comp.target = base_env(4, 13);
  comp.sources = {base_env(4, 13), base_env(4, 13)};
  comp.shared_sets = {{0, 1}, {2}};
  CHECK(comp.uncovered() == std::vector<int>{3});
  comp.full_coverage = true;
  CHECK_THROWS_AS(comp.validate(), ContractViolation);
  comp.shared_sets = {{0, 1}, {2, 3}};
  comp.validate();
}
