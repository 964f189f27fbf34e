#include <doctest.h>

#include <fmt/format.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "decaf/errors.hpp"
#include "decaf/experiment.hpp"

using namespace decaf;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / fmt::format("decaf-test-{}", name);
  fs::remove_all(d);
  return d;
}

// Seconds-scale configuration: small budgets and few epochs.
ExperimentConfig tiny(const std::string& preset, Task task) {
  ExperimentConfig c = preset_config(preset, task);
  c.seeds = {0, 1};
  c.samples.classifier = 600;
  c.samples.source_eval = 300;
  c.samples.target = 200;
  c.samples.test = 300;
  c.classifier.train.epochs = 3;
  c.classifier.hidden = 8;
  c.adaptation.train.epochs = 3;
  c.encoder_training.train.epochs = 3;
  c.encoder_training.restarts = 1;
  return c;
}

ScoreRow row(std::uint64_t seed, const std::string& baseline, double diag, double off, double cc) {
  return {seed, 100, baseline, MetricKind::kSpearman, diag, off, cc, {}, {}};
}

}  // namespace

TEST_CASE("task and baseline strings round-trip") {
  for (auto t : {Task::kAdapt, Task::kCompose}) CHECK(task_from_string(to_string(t)) == t);
  for (auto b : {Baseline::kZeroShot, Baseline::kFineTune, Baseline::kDecaf, Baseline::kScratch})
    CHECK(baseline_from_string(to_string(b)) == b);
  CHECK(to_string(Baseline::kZeroShot) == "0shot");
  CHECK_THROWS_AS(task_from_string("transfer"), ContractViolation);
  CHECK_THROWS_AS(baseline_from_string("oracle"), ContractViolation);
}

TEST_CASE("preset configs validate and carry preset values") {
  for (const auto& name : preset_names()) {
    for (auto task : {Task::kAdapt, Task::kCompose}) {
      const ExperimentConfig c = preset_config(name, task);
      CHECK_NOTHROW(c.validate());
      CHECK(c.tau == preset_defaults(name).tau);
      CHECK(c.samples.target == preset_defaults(name).target_samples);
      CHECK(c.sources.size() == (task == Task::kAdapt ? 1u : 2u));
    }
  }
  const ExperimentConfig pong = preset_config("pong-like", Task::kCompose);
  CHECK(pong.sources[0].name == "CA-jPA");
  CHECK(pong.sources[1].name == "PO-PA");
  CHECK(pong.target.name == "CA-PA");
}

TEST_CASE("config json round-trips") {
  for (const auto& name : preset_names()) {
    for (auto task : {Task::kAdapt, Task::kCompose}) {
      ExperimentConfig c = preset_config(name, task);
      c.seeds = {4, 7};
      c.tau = 0.33;
      c.samples.target_sweep = {100, 200};
      c.jobs = 2;
      const nlohmann::json j = to_json(c);
      CHECK(to_json(config_from_json(j)) == j);
    }
  }
}

TEST_CASE("config json keeps preset defaults for absent keys") {
  const ExperimentConfig c = config_from_json({{"preset", "c3d-like"}, {"task", "adapt"}, {"tau", 0.05}});
  const ExperimentConfig d = preset_config("c3d-like", Task::kAdapt);
  CHECK(c.tau == 0.05);
  CHECK(c.samples.target == d.samples.target);
  CHECK(c.classifier.train.epochs == d.classifier.train.epochs);
  CHECK_THROWS_AS(config_from_json({{"preset", "nope"}}), ContractViolation);
}

TEST_CASE("validate rejects broken configs") {
  ExperimentConfig c = preset_config("c3d-like", Task::kAdapt);
  auto broken = [&](auto mutate) {
    ExperimentConfig b = c;
    mutate(b);
    CHECK_THROWS_AS(b.validate(), ContractViolation);
  };
  broken([](ExperimentConfig& b) { b.seeds.clear(); });
  broken([](ExperimentConfig& b) { b.baselines.clear(); });
  broken([](ExperimentConfig& b) { b.metrics.clear(); });
  broken([](ExperimentConfig& b) { b.tau = 1.0; });
  broken([](ExperimentConfig& b) { b.tau = 0.0; });
  broken([](ExperimentConfig& b) { b.jobs = 0; });
  broken([](ExperimentConfig& b) { b.samples.target = 5; });
  broken([](ExperimentConfig& b) { b.sources.push_back(b.target); });
  broken([](ExperimentConfig& b) {
    b.task = Task::kCompose;
    b.sources.resize(1);
  });
}

TEST_CASE("budget list") {
  SampleBudgets b;
  b.target = 300;
  CHECK(b.target_budgets() == std::vector<int>{300});
  b.target_sweep = {100, 1000};
  CHECK(b.target_budgets() == std::vector<int>{100, 1000});
}

TEST_CASE("scores csv round-trips with NA cells") {
  const std::vector<ScoreRow> rows = {row(0, "0shot", 0.5, 0.25, 0.6), row(1, "ft", NAN, NAN, NAN)};
  const std::string text = scores_csv(rows);
  CHECK(text ==
        "seed,target_samples,baseline,metric,diag,off_diag,CC\n"
        "0,100,0shot,spearman,0.500000,0.250000,0.600000\n"
        "1,100,ft,spearman,NA,NA,NA\n");
  const auto back = parse_scores_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].cc == 0.6);
  CHECK_FALSE(back[1].applicable());
  CHECK(scores_csv(back) == text);
  CHECK_THROWS_AS(parse_scores_csv("seed,CC\n"), ContractViolation);
}

TEST_CASE("summary mean and sample std") {
  std::vector<ScoreRow> rows;
  for (std::uint64_t s = 0; s < 5; ++s) rows.push_back(row(s, "decaf", 0.9, 0.1, 0.9));
  const std::vector<double> cc = {0.1, 0.4, 0.2, 0.8};
  for (std::uint64_t s = 0; s < cc.size(); ++s) rows.push_back(row(s, "0shot", 1.0, 0.0, cc[s]));
  rows.push_back(row(9, "0shot", NAN, NAN, NAN));

  const auto summary = summarize(rows);
  REQUIRE(summary.size() == 2);
  CHECK(summary[0].baseline == "decaf");
  CHECK(summary[0].n == 5);
  CHECK(summary[0].diag_mean == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(summary[0].diag_std == doctest::Approx(0.0));
  CHECK(summary[0].cc_std == doctest::Approx(0.0));

  // Oracle: mean 0.375, squared deviations sum 0.2875 over n - 1 = 3.
  CHECK(summary[1].n == 4);
  CHECK(summary[1].cc_mean == doctest::Approx(0.375).epsilon(1e-12));
  CHECK(summary[1].cc_std == doctest::Approx(std::sqrt(0.2875 / 3.0)).epsilon(1e-12));
  CHECK(summary[1].off_diag_std == 0.0);

  const auto one = summarize({row(0, "x", 0.3, 0.2, 0.1)});
  CHECK(one[0].cc_std == 0.0);
}

TEST_CASE("plot csv orders by budget") {
  std::vector<ScoreRow> rows = {row(0, "a", 1, 0, 0.5), row(0, "a", 1, 0, 0.7)};
  rows[0].target_samples = 500;
  rows[1].target_samples = 100;
  const std::string plot = plot_csv(summarize(rows));
  CHECK(plot ==
        "target_samples,baseline,metric,CC_mean,CC_std\n"
        "100,a,spearman,0.700000,0.000000\n"
        "500,a,spearman,0.500000,0.000000\n");
}

TEST_CASE("report on an incomplete bundle lists every missing artifact") {
  const fs::path dir = scratch_dir("incomplete");
  CHECK_THROWS_AS(emit_report(dir), IncompleteBundleError);
  fs::create_directories(dir);
  ExperimentConfig c = preset_config("c3d-like", Task::kAdapt);
  c.seeds = {0, 1};
  std::ofstream(dir / "config.json") << to_json(c).dump();
  fs::create_directories(dir / "seed-0");
  std::ofstream(dir / "seed-0" / "scores.csv") << scores_csv({row(0, "a", 1, 0, 1)});
  try {
    emit_report(dir);
    FAIL("expected IncompleteBundleError");
  } catch (const IncompleteBundleError& e) {
    CHECK(e.missing() == std::vector<std::string>{"scores.csv", "seed-1/scores.csv"});
  }
  std::ofstream(dir / "scores.csv") << scores_csv({row(0, "a", 1, 0, 1)});
  fs::create_directories(dir / "seed-1");
  std::ofstream(dir / "seed-1" / "scores.csv") << scores_csv({});
  try {
    emit_report(dir);
    FAIL("expected IncompleteBundleError");
  } catch (const IncompleteBundleError& e) {
    CHECK(e.missing() == std::vector<std::string>{"scores.csv rows for seed 1"});
  }
  fs::remove_all(dir);
}

TEST_CASE("adaptation run writes a bundle and reports it") {
  ExperimentConfig c = tiny("c3d-like", Task::kAdapt);
  const fs::path dir = scratch_dir("adapt");
  const RunBundle b = run_experiment(c, dir);
  // 4 baselines x 2 metrics per seed.
  REQUIRE(b.rows().size() == 16);
  for (const auto& r : b.rows()) {
    if (r.baseline == "ft") {
      CHECK_FALSE(r.applicable());  // nothing to fine-tune in an oracle encoder
    } else {
      CHECK(r.applicable());
      CHECK(r.variables.size() == r.per_variable.size());
    }
  }
  for (const char* f : {"config.json", "scores.csv", "run.log", "seed-0/scores.csv", "seed-0/flags.json",
                        "seed-0/per_variable.csv", "seed-1/n200/change_report.json", "seed-1/source/classifier.json"})
    CHECK_MESSAGE(fs::exists(dir / f), f);
  CHECK(parse_scores_csv(slurp(dir / "scores.csv")).size() == 16);

  const ReportFiles files = emit_report(dir);
  CHECK(fs::exists(files.summary));
  CHECK_FALSE(files.plot.has_value());
  // The report reads the 6-decimal CSV, not the in-memory rows.
  const auto summary = summarize(parse_scores_csv(slurp(dir / "scores.csv")));
  CHECK(summary.size() == 8);
  CHECK(slurp(files.summary) == summary_csv(summary));
  fs::remove_all(dir);
}

TEST_CASE("identical config and seed give byte-identical scores") {
  ExperimentConfig c = tiny("voronoi-like", Task::kAdapt);
  c.seeds = {3};
  c.baselines = {Baseline::kZeroShot, Baseline::kDecaf, Baseline::kScratch};
  const fs::path a = scratch_dir("det-a"), b = scratch_dir("det-b");
  run_experiment(c, a);
  c.jobs = 2;
  run_experiment(c, b);
  CHECK(slurp(a / "scores.csv") == slurp(b / "scores.csv"));
  CHECK(slurp(a / "seed-3" / "per_variable.csv") == slurp(b / "seed-3" / "per_variable.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("seed results do not depend on the other seeds") {
  ExperimentConfig c = tiny("c3d-like", Task::kAdapt);
  c.baselines = {Baseline::kZeroShot, Baseline::kDecaf};
  c.seeds = {0, 1};
  const RunBundle both = run_experiment(c);
  c.seeds = {1};
  const RunBundle one = run_experiment(c);
  CHECK(scores_csv(both.seeds[1].rows) == scores_csv(one.seeds[0].rows));
}

TEST_CASE("budget sweep scores every budget and writes a plot") {
  ExperimentConfig c = tiny("c3d-like", Task::kAdapt);
  c.seeds = {0};
  c.baselines = {Baseline::kZeroShot, Baseline::kDecaf};
  c.metrics = {MetricKind::kSpearman};
  c.samples.target_sweep = {100, 200};
  const fs::path dir = scratch_dir("sweep");
  const RunBundle b = run_experiment(c, dir);
  CHECK(b.rows().size() == 4);
  const ReportFiles files = emit_report(dir);
  REQUIRE(files.plot.has_value());
  CHECK(fs::exists(*files.plot));
  fs::remove_all(dir);
}

TEST_CASE("composition run stitches the sources") {
  ExperimentConfig c = tiny("pong-like", Task::kCompose);
  c.seeds = {0};
  c.baselines = {Baseline::kZeroShot, Baseline::kDecaf};
  c.metrics = {MetricKind::kSpearman};
  c.use_projection = true;
  c.projection.train.epochs = 2;
  const fs::path dir = scratch_dir("compose");
  const RunBundle b = run_experiment(c, dir);
  const auto rows = b.rows();
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].baseline == "0shot-CA-jPA");
  CHECK(rows[1].baseline == "0shot-PO-PA");
  CHECK(rows[2].baseline == "decaf");
  REQUIRE(b.seeds[0].plans.size() == 1);
  CHECK(b.seeds[0].plans[0].source_names == std::vector<std::string>{"CA-jPA", "PO-PA"});
  for (const char* f : {"seed-0/n200/stitch_plan.json", "seed-0/n200/projection.json", "seed-0/source-CA-jPA/encoder.json"})
    CHECK_MESSAGE(fs::exists(dir / f), f);
  fs::remove_all(dir);
}
