#include <doctest.h>

#include <fmt/format.h>

#include <limits>

#include "decaf/composition.hpp"
#include "decaf/errors.hpp"

using namespace decaf;

namespace {

// Report over k variables with the listed detections and per-variable deltas.
ChangeReport report(int k, std::vector<int> detected, std::vector<double> deltas) {
  ChangeReport r;
  r.num_variables = k;
  r.tau = 0.2;
  r.detected = std::move(detected);
  r.max_delta = std::move(deltas);
  return r;
}

LatentSequence random_latents(int t, const std::vector<int>& dims, Rng& rng) {
  LatentSequence s;
  s.assignment = Assignment::identity_blocks(dims);
  s.z.resize(t, s.assignment.latent_dim());
  for (Eigen::Index i = 0; i < s.z.size(); ++i) s.z.data()[i] = std_normal(rng);
  return s;
}

}  // namespace

TEST_CASE("disjoint shared sets cover all variables") {
  // Source A has variable 2 changed; source B has variables 0 and 1 changed.
  const Assignment a = Assignment::identity_blocks({2, 1, 3});
  const Assignment b = Assignment::identity_blocks({1, 2, 1});
  const StitchPlan plan =
      plan_stitch({{"A", a, report(3, {2}, {0.01, 0.02, 0.5})}, {"B", b, report(3, {0, 1}, {0.4, 0.3, 0.03})}},
                  {0, 1, 2});
  CHECK(plan.uncovered.empty());
  CHECK(plan.overlaps.empty());
  CHECK(plan.covered() == std::vector<int>{0, 1, 2});
  CHECK(plan.stitched_dim() == 2 + 1 + 1);
  CHECK(plan.blocks[0].source == 0);
  CHECK(plan.blocks[1].source == 0);
  CHECK(plan.blocks[2].source == 1);
  CHECK(plan.blocks[2].dims == std::vector<int>{3});
}

TEST_CASE("overlap goes to the smaller delta") {
  const Assignment a = Assignment::identity_blocks({1, 1, 1});
  const StitchPlan plan =
      plan_stitch({{"A", a, report(3, {0}, {0.5, 0.01, 0.05})}, {"B", a, report(3, {1}, {0.01, 0.5, 0.12})}},
                  {0, 1, 2});
  REQUIRE(plan.overlaps.size() == 1);
  CHECK(plan.overlaps[0].variable == 2);
  CHECK(plan.overlaps[0].winner == 0);
  CHECK(plan.blocks[2].source == 0);

  SUBCASE("ties go to the lower source index") {
    const StitchPlan tie =
        plan_stitch({{"A", a, report(3, {}, {0.1, 0.1, 0.1})}, {"B", a, report(3, {}, {0.1, 0.1, 0.1})}}, {0, 1, 2});
    for (const auto& blk : tie.blocks) CHECK(blk.source == 0);
  }
}

TEST_CASE("coverage gaps are reported and composition proceeds") {
  const Assignment a = Assignment::identity_blocks({1, 1, 1});
  const StitchPlan plan =
      plan_stitch({{"A", a, report(3, {1}, {0, 0.4, 0})}, {"B", a, report(3, {1, 2}, {0, 0.6, 0.5})}}, {0, 1, 2});
  CHECK(plan.uncovered == std::vector<int>{1});
  CHECK(plan.covered() == std::vector<int>{0, 2});
  CHECK_FALSE(plan.warnings.empty());
}

TEST_CASE("excluded variables and variables without dims are not kept") {
  Assignment a;
  a.num_variables = 3;
  a.psi = {0, 2, -1};
  ChangeReport r = report(3, {}, {0.0, 0.0, std::numeric_limits<double>::quiet_NaN()});
  r.excluded = {2};
  const StitchPlan plan = plan_stitch({{"A", a, r}}, {0, 1, 2});
  CHECK(plan.kept[0] == std::vector<int>{0});
  CHECK(plan.uncovered == std::vector<int>{1, 2});
}

TEST_CASE("fully overlapping unchanged sources keep one copy per variable") {
  const Assignment a = Assignment::identity_blocks({2, 1, 1});
  std::vector<StitchSource> sources;
  for (int l = 0; l < 3; ++l) sources.push_back({fmt::format("S{}", l), a, report(3, {}, {0.1, 0.2, 0.3})});
  const StitchPlan plan = plan_stitch(sources, {0, 1, 2});
  CHECK(plan.blocks.size() == 3);
  CHECK(plan.stitched_dim() == 4);
  CHECK(plan.overlaps.size() == 3);
}

TEST_CASE("plan_stitch rejects inconsistent inputs") {
  const Assignment a = Assignment::identity_blocks({1, 1});
  CHECK_THROWS_AS(plan_stitch({}, {0}), ContractViolation);
  CHECK_THROWS_AS(plan_stitch({{"A", a, report(3, {}, {0, 0, 0})}}, {0}), ContractViolation);
  CHECK_THROWS_AS(plan_stitch({{"A", a, report(2, {}, {0, 0})}}, {5}), ContractViolation);
}

TEST_CASE("stitch of a single fully kept source reproduces its latents") {
  Rng rng = make_rng(3, 1);
  const LatentSequence s = random_latents(50, {2, 1, 1}, rng);
  const StitchPlan plan = plan_stitch({{"A", s.assignment, report(3, {}, {0, 0, 0})}}, {0, 1, 2});
  const LatentSequence out = stitch(plan, {s});
  CHECK(out.z == s.z);
  CHECK(out.assignment.psi == s.assignment.psi);
}

TEST_CASE("stitched columns equal their source columns") {
  Rng rng = make_rng(4, 1);
  const LatentSequence a = random_latents(40, {2, 1}, rng);
  const LatentSequence b = random_latents(40, {1, 1}, rng);
  const StitchPlan plan =
      plan_stitch({{"A", a.assignment, report(2, {1}, {0, 0.5})}, {"B", b.assignment, report(2, {0}, {0.5, 0})}},
                  {0, 1});
  const LatentSequence out = stitch(plan, {a, b});
  REQUIRE(out.z.cols() == 3);
  // Scan each stitched column for a bit-identical column in the sources.
  const std::vector<std::pair<const LatentSequence*, int>> expected = {{&a, 0}, {&a, 1}, {&b, 1}};
  for (int c = 0; c < 3; ++c) {
    CHECK(out.z.col(c) == expected[c].first->z.col(expected[c].second));
  }
  CHECK(out.assignment.psi == std::vector<int>{0, 0, 1});
  CHECK(out.assignment.num_variables == 2);
  CHECK(stitch(plan, {a, b}).z == out.z);
}

TEST_CASE("stitch guards") {
  Rng rng = make_rng(5, 1);
  const LatentSequence a = random_latents(40, {1, 1}, rng);
  const LatentSequence shorter = random_latents(39, {1, 1}, rng);
  const StitchPlan empty = plan_stitch({{"A", a.assignment, report(2, {0, 1}, {1, 1})}}, {0, 1});
  CHECK_THROWS_AS(stitch(empty, {a}), ContractViolation);
  const StitchPlan two = plan_stitch(
      {{"A", a.assignment, report(2, {1}, {0, 1})}, {"B", a.assignment, report(2, {0}, {1, 0})}}, {0, 1});
  CHECK_THROWS_AS(stitch(two, {a, shorter}), ContractViolation);
  CHECK_THROWS_AS(stitch(two, {a}), ContractViolation);
}

TEST_CASE("plan json records provenance") {
  const Assignment a = Assignment::identity_blocks({1, 1});
  const StitchPlan plan =
      plan_stitch({{"A", a, report(2, {}, {0.05, 0.1})}, {"B", a, report(2, {}, {0.12, 0.01})}}, {0, 1});
  const nlohmann::json j = to_json(plan);
  CHECK(j["sources"] == nlohmann::json({"A", "B"}));
  CHECK(j["blocks"][0]["source"] == "A");
  CHECK(j["blocks"][1]["source"] == "B");
  CHECK(j["overlaps"].size() == 2);
  CHECK(j["stitched_dim"] == 2);
}

TEST_CASE("projection learns a linear map") {
  Rng rng = make_rng(6, 1);
  const int t = 2000, d = 3;
  Eigen::MatrixXd x(t, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std_normal(rng);
  Eigen::MatrixXd a(d, d);
  a << 1.0, 0.5, 0.0, -0.3, 1.0, 0.2, 0.0, 0.4, 0.8;
  const Eigen::MatrixXd y = x * a;
  ProjectionConfig cfg;
  cfg.train.epochs = 300;
  cfg.train.learning_rate = 3e-3;
  cfg.train.batch_size = 256;
  const ProjectionFit fit = fit_projection(x, d, y, cfg);
  CHECK(fit.projection.output_dim() == d);
  CHECK(fit.warnings.empty());
  CHECK(fit.final_heldout_mse <= 1e-3 * fit.initial_heldout_mse);
}

TEST_CASE("projection defaults, zero epochs and guards") {
  const ProjectionConfig cfg;
  CHECK(cfg.hidden == 128);
  CHECK(cfg.train.learning_rate == 1e-3);
  CHECK(cfg.train.batch_size == 512);
  CHECK(cfg.train.epochs == 10);

  Rng rng = make_rng(7, 1);
  Eigen::MatrixXd x(100, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std_normal(rng);
  const Eigen::MatrixXd copy = x;
  ProjectionConfig zero;
  zero.train.epochs = 0;
  const ProjectionFit fit = fit_projection(x, 2, x, zero);
  Rng init_rng = make_rng(0, 0x70726f);
  const DenseNet init = DenseNet::random({2, 128, 2}, Activation::kSwish, init_rng);
  CHECK(fit.projection.net.params().values() == init.params().values());
  CHECK(fit.final_heldout_mse == fit.initial_heldout_mse);
  CHECK(x == copy);

  CHECK_THROWS_AS(fit_projection(x, 0, Eigen::MatrixXd(100, 0), cfg), ContractViolation);
  CHECK_THROWS_AS(fit_projection(x, 3, x, cfg), ContractViolation);
}

TEST_CASE("projection wider than a degenerate input is reported") {
  Rng rng = make_rng(8, 1);
  Eigen::MatrixXd x(200, 2);
  for (int r = 0; r < 200; ++r) {
    x(r, 0) = std_normal(rng);
    x(r, 1) = 2.0 * x(r, 0);
  }
  Eigen::MatrixXd y(200, 3);
  y << x.col(0), x.col(1), -x.col(0);
  ProjectionConfig cfg;
  cfg.train.epochs = 50;
  const ProjectionFit fit = fit_projection(x, 3, y, cfg);
  REQUIRE(fit.warnings.size() == 1);
  CHECK(fit.warnings[0].find("rank 1") != std::string::npos);
  CHECK(fit.final_heldout_mse < fit.initial_heldout_mse);
}
