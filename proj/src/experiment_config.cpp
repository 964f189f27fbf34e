#include <fmt/format.h>

#include <fstream>

#include "decaf/errors.hpp"
#include "decaf/experiment.hpp"

namespace decaf {

namespace {

nlohmann::json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"weight_decay", t.weight_decay},
          {"warmup_fraction", t.warmup_fraction}};
}

void read_train(const nlohmann::json& j, TrainConfig& t) {
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.warmup_fraction = j.value("warmup_fraction", t.warmup_fraction);
}

nlohmann::json role_json(const EnvironmentRole& r) {
  return {{"name", r.name}, {"changed", r.variant.changed}, {"coarse", r.variant.coarse}};
}

EnvironmentRole read_role(const nlohmann::json& j, EnvironmentRole r) {
  r.name = j.value("name", r.name);
  r.variant.changed = j.value("changed", r.variant.changed);
  r.variant.coarse = j.value("coarse", r.variant.coarse);
  return r;
}

EnvironmentRole role(const PresetDefaults& p, bool changed, std::optional<bool> coarse) {
  std::string name = changed ? p.changed_label : p.base_label;
  if (coarse) name += "-" + (*coarse ? p.joint_label : p.independent_label);
  return {name, {changed, coarse.value_or(false)}};
}

}  // namespace

std::string to_string(Task t) { return t == Task::kAdapt ? "adapt" : "compose"; }

Task task_from_string(const std::string& s) {
  if (s == "adapt") return Task::kAdapt;
  if (s == "compose") return Task::kCompose;
  throw ContractViolation(fmt::format("unknown task '{}' (adapt, compose)", s));
}

std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::kZeroShot: return "0shot";
    case Baseline::kFineTune: return "ft";
    case Baseline::kDecaf: return "decaf";
    case Baseline::kScratch: return "scratch";
  }
  return "0shot";
}

Baseline baseline_from_string(const std::string& s) {
  for (auto b : {Baseline::kZeroShot, Baseline::kFineTune, Baseline::kDecaf, Baseline::kScratch})
    if (to_string(b) == s) return b;
  throw ContractViolation(fmt::format("unknown baseline '{}' (0shot, ft, decaf, scratch)", s));
}

std::vector<int> SampleBudgets::target_budgets() const {
  return target_sweep.empty() ? std::vector<int>{target} : target_sweep;
}

void ExperimentConfig::validate() const {
  preset_defaults(preset);
  if (seeds.empty()) throw ContractViolation("config: the seeds list is empty");
  if (baselines.empty()) throw ContractViolation("config: no baselines");
  if (metrics.empty()) throw ContractViolation("config: no metrics");
  if (!(tau > 0.0 && tau < 1.0)) throw ContractViolation(fmt::format("config: tau {} outside (0, 1)", tau));
  if (jobs < 1) throw ContractViolation("config: jobs must be at least 1");
  for (int b : samples.target_budgets())
    if (b < 10) throw ContractViolation(fmt::format("config: target budget {} below 10 samples", b));
  if (samples.test < 10 || samples.classifier < 10 || samples.source_eval < 10 || samples.source < 10) {
    throw ContractViolation("config: sample budgets must be at least 10");
  }
  if (task == Task::kAdapt && sources.size() != 1) throw ContractViolation("config: adapt needs exactly one source");
  if (task == Task::kCompose && sources.size() < 2) throw ContractViolation("config: compose needs at least two sources");
}

ExperimentConfig preset_config(const std::string& preset, Task task) {
  const PresetDefaults& p = preset_defaults(preset);
  ExperimentConfig c;
  c.name = fmt::format("{}-{}", preset, to_string(task));
  c.preset = preset;
  c.task = task;
  c.baselines = {Baseline::kZeroShot, Baseline::kFineTune, Baseline::kDecaf, Baseline::kScratch};
  c.change = p.change;
  c.mixing = p.mixing;
  c.tau = p.tau;
  c.samples.target = p.target_samples;
  c.classifier.train = {p.classifier_epochs, 512, 1e-2, 0.0, 0.05, 0};
  c.adaptation.flow.depth = p.flow_depth;
  c.adaptation.beta_reg = p.beta_reg;
  c.adaptation.beta_alo = p.beta_alo;
  // About 300 to 500 optimizer steps at batch 1024.
  c.adaptation.train.epochs = p.target_samples > 2048 ? 100 : 300;
  if (task == Task::kAdapt) {
    c.sources = {role(p, false, std::nullopt)};
    c.target = role(p, true, std::nullopt);
  } else {
    c.sources = {role(p, false, true), role(p, true, false)};
    c.target = role(p, false, false);
  }
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json baselines = nlohmann::json::array(), metrics = nlohmann::json::array(),
                 sources = nlohmann::json::array();
  for (auto b : c.baselines) baselines.push_back(to_string(b));
  for (auto m : c.metrics) metrics.push_back(to_string(m));
  for (const auto& s : c.sources) sources.push_back(role_json(s));
  nlohmann::json encoder_training = train_json(c.encoder_training.train);
  encoder_training["restarts"] = c.encoder_training.restarts;
  encoder_training["prior_hidden"] = c.encoder_training.prior_hidden;
  encoder_training["assignment_threshold"] = c.encoder_training.assignment_threshold;
  nlohmann::json classifier = train_json(c.classifier.train);
  classifier["hidden"] = c.classifier.hidden;
  nlohmann::json adaptation = train_json(c.adaptation.train);
  adaptation["flow_depth"] = c.adaptation.flow.depth;
  adaptation["hidden_per_dim"] = c.adaptation.flow.hidden_per_dim;
  adaptation["scale_limit"] = c.adaptation.flow.scale_limit;
  adaptation["prior_hidden"] = c.adaptation.prior.hidden;
  adaptation["aux_weight"] = c.adaptation.aux_weight;
  adaptation["aux_hidden"] = c.adaptation.aux_hidden;
  adaptation["beta_reg"] = c.adaptation.beta_reg;
  adaptation["beta_alo"] = c.adaptation.beta_alo;
  nlohmann::json projection = train_json(c.projection.train);
  projection["hidden"] = c.projection.hidden;
  projection["holdout_fraction"] = c.projection.holdout_fraction;
  return {{"name", c.name},
          {"preset", c.preset},
          {"task", to_string(c.task)},
          {"baselines", baselines},
          {"encoder", to_string(c.encoder)},
          {"change", to_string(c.change)},
          {"mixing", to_string(c.mixing)},
          {"samples",
           {{"source", c.samples.source},
            {"classifier", c.samples.classifier},
            {"source_eval", c.samples.source_eval},
            {"target", c.samples.target},
            {"test", c.samples.test},
            {"target_sweep", c.samples.target_sweep}}},
          {"seeds", c.seeds},
          {"tau", c.tau},
          {"criterion", to_string(c.criterion)},
          {"metrics", metrics},
          {"sources", sources},
          {"target", role_json(c.target)},
          {"use_projection", c.use_projection},
          {"encoder_training", encoder_training},
          {"classifier", classifier},
          {"adaptation", adaptation},
          {"projection", projection},
          {"jobs", c.jobs}};
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractViolation("config: expected a JSON object");
  ExperimentConfig c =
      preset_config(j.value("preset", std::string("voronoi-like")), task_from_string(j.value("task", std::string("adapt"))));
  c.name = j.value("name", c.name);
  if (j.contains("baselines")) {
    c.baselines.clear();
    for (const auto& b : j["baselines"]) c.baselines.push_back(baseline_from_string(b.get<std::string>()));
  }
  if (j.contains("encoder")) {
    const auto e = j["encoder"].get<std::string>();
    if (e == to_string(EncoderKind::kOracle)) {
      c.encoder = EncoderKind::kOracle;
    } else if (e == to_string(EncoderKind::kLearnedLinear)) {
      c.encoder = EncoderKind::kLearnedLinear;
    } else {
      throw ContractViolation(fmt::format("config: unknown encoder '{}'", e));
    }
  }
  if (j.contains("change")) c.change = change_kind_from_string(j["change"].get<std::string>());
  if (j.contains("mixing")) c.mixing = mixing_from_string(j["mixing"].get<std::string>());
  if (j.contains("samples")) {
    const auto& s = j["samples"];
    c.samples.source = s.value("source", c.samples.source);
    c.samples.classifier = s.value("classifier", c.samples.classifier);
    c.samples.source_eval = s.value("source_eval", c.samples.source_eval);
    c.samples.target = s.value("target", c.samples.target);
    c.samples.test = s.value("test", c.samples.test);
    c.samples.target_sweep = s.value("target_sweep", c.samples.target_sweep);
  }
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  c.tau = j.value("tau", c.tau);
  if (j.contains("criterion")) c.criterion = detection_criterion_from_string(j["criterion"].get<std::string>());
  if (j.contains("metrics")) {
    c.metrics.clear();
    for (const auto& m : j["metrics"]) c.metrics.push_back(metric_from_string(m.get<std::string>()));
  }
  if (j.contains("sources")) {
    c.sources.clear();
    for (const auto& s : j["sources"]) c.sources.push_back(read_role(s, {}));
  }
  if (j.contains("target")) c.target = read_role(j["target"], c.target);
  c.use_projection = j.value("use_projection", c.use_projection);
  if (j.contains("encoder_training")) {
    const auto& e = j["encoder_training"];
    read_train(e, c.encoder_training.train);
    c.encoder_training.restarts = e.value("restarts", c.encoder_training.restarts);
    c.encoder_training.prior_hidden = e.value("prior_hidden", c.encoder_training.prior_hidden);
    c.encoder_training.assignment_threshold = e.value("assignment_threshold", c.encoder_training.assignment_threshold);
  }
  if (j.contains("classifier")) {
    read_train(j["classifier"], c.classifier.train);
    c.classifier.hidden = j["classifier"].value("hidden", c.classifier.hidden);
  }
  if (j.contains("adaptation")) {
    const auto& a = j["adaptation"];
    read_train(a, c.adaptation.train);
    c.adaptation.flow.depth = a.value("flow_depth", c.adaptation.flow.depth);
    c.adaptation.flow.hidden_per_dim = a.value("hidden_per_dim", c.adaptation.flow.hidden_per_dim);
    c.adaptation.flow.scale_limit = a.value("scale_limit", c.adaptation.flow.scale_limit);
    c.adaptation.prior.hidden = a.value("prior_hidden", c.adaptation.prior.hidden);
    c.adaptation.aux_weight = a.value("aux_weight", c.adaptation.aux_weight);
    c.adaptation.aux_hidden = a.value("aux_hidden", c.adaptation.aux_hidden);
    c.adaptation.beta_reg = a.value("beta_reg", c.adaptation.beta_reg);
    c.adaptation.beta_alo = a.value("beta_alo", c.adaptation.beta_alo);
  }
  if (j.contains("projection")) {
    read_train(j["projection"], c.projection.train);
    c.projection.hidden = j["projection"].value("hidden", c.projection.hidden);
    c.projection.holdout_fraction = j["projection"].value("holdout_fraction", c.projection.holdout_fraction);
  }
  c.jobs = j.value("jobs", c.jobs);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ContractViolation(fmt::format("config: cannot open '{}'", path.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ContractViolation(fmt::format("config: '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return config_from_json(j);
}

nlohmann::json to_json(const ParamVector& params) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : params.blocks()) {
    const auto v = params.view(b.name);
    blocks.push_back({{"name", b.name},
                      {"rows", b.rows},
                      {"cols", b.cols},
                      {"values", std::vector<double>(v.data(), v.data() + v.size())}});
  }
  return {{"blocks", blocks}};
}

nlohmann::json to_json(const ScoreSummary& s) {
  return {{"metric", to_string(s.metric)}, {"diag", s.diag},
          {"off_diag", s.off_diag},        {"cc", s.cc},
          {"per_variable", s.per_variable}, {"unmatched", s.unmatched}};
}

}  // namespace decaf
