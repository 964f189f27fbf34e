#pragma once

// Experiment orchestration: configs with named presets, the per-seed
// adaptation and composition protocols, run bundles on disk and the report
// reduction over seeds.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "decaf/adaptation.hpp"
#include "decaf/composition.hpp"
#include "decaf/metrics.hpp"
#include "decaf/presets.hpp"
#include "decaf/representation.hpp"
#include "decaf/target_classifier.hpp"

namespace decaf {

enum class Task { kAdapt, kCompose };
enum class Baseline { kZeroShot, kFineTune, kDecaf, kScratch };

std::string to_string(Task t);
Task task_from_string(const std::string& s);
std::string to_string(Baseline b);
Baseline baseline_from_string(const std::string& s);

struct SampleBudgets {
  int source = 50000;      // learned-linear source encoder
  int classifier = 6000;   // source transitions for the target classifier
  int source_eval = 5000;  // held-out source data for the source rates
  int target = 750;
  int test = 5000;         // held-out target data for scoring
  std::vector<int> target_sweep;  // empty: only `target`

  std::vector<int> target_budgets() const;
};

struct EnvironmentRole {
  std::string name;
  Variant variant;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string preset = "voronoi-like";
  Task task = Task::kAdapt;
  std::vector<Baseline> baselines;
  EncoderKind encoder = EncoderKind::kOracle;
  ChangeKind change = ChangeKind::kIdentity;
  MixingKind mixing = MixingKind::kAffine;
  SampleBudgets samples;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double tau = 0.2;
  DetectionCriterion criterion = DetectionCriterion::kFprOnly;
  std::vector<MetricKind> metrics{MetricKind::kSpearman, MetricKind::kR2};
  // adapt: sources.front() is the source; compose: all are sources.
  std::vector<EnvironmentRole> sources;
  EnvironmentRole target;
  bool use_projection = false;
  LinearEncoderConfig encoder_training;
  ClassifierConfig classifier;
  AdaptationConfig adaptation;
  ProjectionConfig projection;
  int jobs = 1;

  // Throws ContractViolation on the first problem found.
  void validate() const;
};

// Desk-scale defaults for a preset and task.
ExperimentConfig preset_config(const std::string& preset, Task task);

nlohmann::json to_json(const ExperimentConfig& config);
// Keys absent from j keep the defaults of preset_config(j.preset, j.task).
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const ParamVector& params);
nlohmann::json to_json(const ScoreSummary& summary);

struct ScoreRow {
  std::uint64_t seed = 0;
  int target_samples = 0;
  std::string baseline;
  MetricKind metric = MetricKind::kSpearman;
  // NaN marks a baseline that does not apply to the configuration.
  double diag = 0.0;
  double off_diag = 0.0;
  double cc = 0.0;
  // Scored truth variables and their matched diagonal values; empty for NA
  // rows and rows read back from CSV.
  std::vector<int> variables;
  std::vector<double> per_variable;

  bool applicable() const;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<ScoreRow> rows;
  std::vector<ChangeReport> reports;  // per (budget, source), budget-major
  std::vector<StitchPlan> plans;      // compose: one per budget
  std::vector<std::string> flags;
};

struct RunBundle {
  std::filesystem::path dir;  // empty when nothing was written
  ExperimentConfig config;
  std::vector<SeedResult> seeds;

  std::vector<ScoreRow> rows() const;
};

// One seed's world: the underlying process and change transform.
struct SeedWorld {
  PresetDefaults preset;
  CausalProcess process;
  ChangeTransform change;

  std::shared_ptr<EnvironmentSpec> environment(const EnvironmentRole& role) const;
};
SeedWorld make_world(const ExperimentConfig& config, std::uint64_t seed);

// Independent sampling seed for a data stream of one experiment seed.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream);

struct SourceModel {
  std::shared_ptr<EnvironmentSpec> env;
  Encoder encoder;
  TargetClassifier classifier;
  RateTensor rates;  // on held-out source data
  std::vector<double> encoder_curve;
  std::vector<double> classifier_curve;
};

// Builds the encoder (oracle, or learned-linear on samples.source), trains
// the target classifier on samples.classifier transitions and measures its
// rates on samples.source_eval held-out transitions. `index` separates the
// data streams of several sources.
SourceModel train_source(const ExperimentConfig& config, const SeedWorld& world, const EnvironmentRole& role,
                         std::uint64_t seed, int index = 0);

// Source transitions the target classifier is trained on.
Trajectory source_data(const ExperimentConfig& config, const SeedWorld& world, const EnvironmentRole& role,
                       std::uint64_t seed, int index = 0);
// Target training data at the largest budget (smaller budgets are its
// prefixes) and held-out target test data.
Trajectory target_data(const ExperimentConfig& config, const SeedWorld& world, std::uint64_t seed);
Trajectory test_data(const ExperimentConfig& config, const SeedWorld& world, std::uint64_t seed);

// Change report of `target` against the source model's held-out rates.
ChangeReport detect_on_target(const ExperimentConfig& config, const SourceModel& source, const Trajectory& target);

// Columns t, s<d> (environment coordinates), I<k>.
std::string trajectory_csv(const Trajectory& t);
nlohmann::json encoder_json(const Encoder& encoder, const std::vector<double>& curve);
nlohmann::json classifier_json(const SourceModel& source);

// Scores `vars` of `truth` against the latent blocks assigned to them.
ScoreSummary score_latents(const LatentSequence& latents, const Trajectory& truth, const std::vector<int>& vars,
                           MetricKind metric);

// Seeds run as parallel jobs (config.jobs); with a non-empty `out` every seed
// writes its own seed-<s>/ directory and the bundle gets config.json,
// scores.csv and run.log.
RunBundle run_adaptation_experiment(const ExperimentConfig& config, const std::filesystem::path& out = {});
RunBundle run_composition_experiment(const ExperimentConfig& config, const std::filesystem::path& out = {});
RunBundle run_experiment(const ExperimentConfig& config, const std::filesystem::path& out = {});

// CSV with header seed,target_samples,baseline,metric,diag,off_diag,CC;
// values with 6 decimals, NA for non-applicable rows.
std::string scores_csv(const std::vector<ScoreRow>& rows);
std::vector<ScoreRow> parse_scores_csv(const std::string& text);
// Long format: seed,target_samples,baseline,metric,variable,diag.
std::string per_variable_csv(const std::vector<ScoreRow>& rows);

struct SummaryRow {
  std::string baseline;
  MetricKind metric = MetricKind::kSpearman;
  int target_samples = 0;
  int n = 0;  // applicable seeds
  double diag_mean = 0.0, diag_std = 0.0;
  double off_diag_mean = 0.0, off_diag_std = 0.0;
  double cc_mean = 0.0, cc_std = 0.0;
};

// Mean and sample standard deviation (n - 1; 0 for one seed) per
// (baseline, metric, target_samples), in first-appearance order.
std::vector<SummaryRow> summarize(const std::vector<ScoreRow>& rows);
std::string summary_csv(const std::vector<SummaryRow>& rows);
// x = target_samples, y = CC per (baseline, metric).
std::string plot_csv(const std::vector<SummaryRow>& rows);

struct ReportFiles {
  std::filesystem::path summary;
  std::optional<std::filesystem::path> plot;  // only for sweeps
};

// Reads config.json and scores.csv of a bundle and writes summary.csv (and
// plot.csv for budget sweeps). Throws IncompleteBundleError listing every
// missing artifact.
ReportFiles emit_report(const std::filesystem::path& bundle_dir);

class IncompleteBundleError : public std::runtime_error {
 public:
  IncompleteBundleError(std::vector<std::string> missing);
  const std::vector<std::string>& missing() const { return missing_; }

 private:
  std::vector<std::string> missing_;
};

}  // namespace decaf
