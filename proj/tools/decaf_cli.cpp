// Command-line front end for the experiment harness.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "decaf/errors.hpp"
#include "decaf/experiment.hpp"
#include "decaf/runtime.hpp"

namespace fs = std::filesystem;
using namespace decaf;

namespace {

struct Options {
  std::string config_path;
  std::string preset;
  std::string task = "adapt";
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> tau;
  std::optional<int> target_samples;
  std::optional<int> jobs;
  std::string log_level = "info";
};

void add_common(CLI::App* cmd, Options& o, bool needs_out) {
  auto* config = cmd->add_option("--config", o.config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
  auto* preset = cmd->add_option("--preset", o.preset, "named preset")->check(CLI::IsMember(preset_names()));
  config->excludes(preset);
  cmd->add_option("--task", o.task, "task for --preset")->check(CLI::IsMember({"adapt", "compose"}));
  cmd->add_option("--seed", o.seed, "run this seed only");
  auto* out = cmd->add_option("--out", o.out, "bundle directory");
  if (needs_out) out->required();
  cmd->add_option("--tau", o.tau, "detection threshold")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--target-samples", o.target_samples, "target sample budget")->check(CLI::PositiveNumber);
  cmd->add_option("--jobs", o.jobs, "parallel seeds")->check(CLI::PositiveNumber);
  cmd->add_option("--log-level", o.log_level, "trace, debug, info, warn, error");
}

ExperimentConfig resolve(const Options& o, std::optional<Task> force_task) {
  ExperimentConfig c;
  if (!o.config_path.empty()) {
    c = load_config(o.config_path);
  } else if (!o.preset.empty()) {
    c = preset_config(o.preset, task_from_string(o.task));
  } else {
    throw ContractViolation("one of --config or --preset is required");
  }
  if (force_task && c.task != *force_task) {
    if (!o.config_path.empty()) {
      throw ContractViolation(fmt::format("config task is '{}', expected '{}'", to_string(c.task),
                                          to_string(*force_task)));
    }
    c = preset_config(c.preset, *force_task);
  }
  if (o.seed) c.seeds = {*o.seed};
  if (o.tau) c.tau = *o.tau;
  if (o.target_samples) {
    c.samples.target = *o.target_samples;
    c.samples.target_sweep.clear();
  }
  if (o.jobs) c.jobs = *o.jobs;
  c.validate();
  return c;
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", p.string()));
  out << text;
}

void snapshot_config(const fs::path& out, const ExperimentConfig& c) {
  write_file(out / "config.json", to_json(c).dump(2) + "\n");
}

int cmd_generate(const ExperimentConfig& c, const fs::path& out) {
  snapshot_config(out, c);
  for (auto seed : c.seeds) {
    const SeedWorld world = make_world(c, seed);
    const fs::path dir = out / fmt::format("seed-{}", seed);
    for (std::size_t l = 0; l < c.sources.size(); ++l) {
      const Trajectory t = source_data(c, world, c.sources[l], seed, static_cast<int>(l));
      write_file(dir / fmt::format("source-{}.csv", c.sources[l].name), trajectory_csv(t));
    }
    write_file(dir / fmt::format("target-{}.csv", c.target.name), trajectory_csv(target_data(c, world, seed)));
    write_file(dir / fmt::format("test-{}.csv", c.target.name), trajectory_csv(test_data(c, world, seed)));
    spdlog::info("run={} seed={} stage=generate dir={}", c.name, seed, dir.string());
  }
  return 0;
}

// Trains every configured source; with `detect` also reports the change set
// of the target against each source at every budget.
int cmd_sources(const ExperimentConfig& c, const fs::path& out, bool detect) {
  if (!out.empty()) snapshot_config(out, c);
  for (auto seed : c.seeds) {
    const SeedWorld world = make_world(c, seed);
    const Trajectory target = detect ? target_data(c, world, seed) : Trajectory{};
    const fs::path dir = out.empty() ? fs::path{} : out / fmt::format("seed-{}", seed);
    for (std::size_t l = 0; l < c.sources.size(); ++l) {
      const auto& role = c.sources[l];
      spdlog::info("run={} seed={} stage=source env={}", c.name, seed, role.name);
      const SourceModel m = train_source(c, world, role, seed, static_cast<int>(l));
      const fs::path sdir = dir / fmt::format("source-{}", role.name);
      if (!out.empty()) {
        write_file(sdir / "encoder.json", encoder_json(m.encoder, m.encoder_curve).dump(2) + "\n");
        write_file(sdir / "classifier.json", classifier_json(m).dump(2) + "\n");
      }
      if (!detect) continue;
      for (int n : c.samples.target_budgets()) {
        const ChangeReport r = detect_on_target(c, m, target.slice(0, n));
        std::cout << fmt::format("seed={} source={} target={} budget={} detected={} max_delta=[{:.3f}]\n", seed,
                                 role.name, c.target.name, n, r.detected, fmt::join(r.max_delta, ", "));
        if (!out.empty()) {
          write_file(dir / fmt::format("n{}", n) / fmt::format("change_report-{}.json", role.name),
                     to_json(r).dump(2) + "\n");
        }
      }
    }
  }
  return 0;
}

int cmd_run(const ExperimentConfig& c, const fs::path& out) {
  const RunBundle b = run_experiment(c, out);
  const ReportFiles files = emit_report(out);
  std::cout << summary_csv(summarize(parse_scores_csv(scores_csv(b.rows()))));
  for (const auto& s : b.seeds)
    for (const auto& f : s.flags) std::cout << fmt::format("flag seed={}: {}\n", s.seed, f);
  spdlog::info("run={} stage=report summary={}", c.name, files.summary.string());
  return 0;
}

int cmd_report(const fs::path& dir) {
  const ReportFiles files = emit_report(dir);
  std::ifstream in(files.summary, std::ios::binary);
  std::cout << in.rdbuf();
  if (files.plot) spdlog::info("plot data: {}", files.plot->string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Detect, adapt and compose causal representations across environments."};
  app.require_subcommand(1);
  Options o;
  std::string report_dir;

  auto* generate = app.add_subcommand("generate", "write source, target and test trajectories");
  add_common(generate, o, true);
  auto* train = app.add_subcommand("train-source", "train the source encoders and target classifiers");
  add_common(train, o, true);
  auto* detect = app.add_subcommand("detect", "detect changed variables of the target against each source");
  add_common(detect, o, false);
  auto* adapt = app.add_subcommand("adapt", "run the adaptation experiment and report it");
  add_common(adapt, o, true);
  auto* compose = app.add_subcommand("compose", "run the composition experiment and report it");
  add_common(compose, o, true);
  auto* evaluate = app.add_subcommand("evaluate", "run the configured task with all its baselines and report it");
  add_common(evaluate, o, true);
  auto* report = app.add_subcommand("report", "summarize an existing run bundle");
  report->add_option("--out", report_dir, "bundle directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(o.log_level));
  spdlog::set_pattern("%Y-%m-%dT%H:%M:%S.%e %l %v");

  try {
    if (report->parsed()) return cmd_report(report_dir);
    if (generate->parsed()) return cmd_generate(resolve(o, std::nullopt), o.out);
    if (train->parsed()) return cmd_sources(resolve(o, std::nullopt), o.out, false);
    if (detect->parsed()) return cmd_sources(resolve(o, std::nullopt), o.out, true);
    if (adapt->parsed()) return cmd_run(resolve(o, Task::kAdapt), o.out);
    if (compose->parsed()) return cmd_run(resolve(o, Task::kCompose), o.out);
    return cmd_run(resolve(o, std::nullopt), o.out);
  } catch (const IncompleteBundleError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const ContractViolation& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
