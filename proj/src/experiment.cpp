#include "decaf/experiment.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "decaf/errors.hpp"

namespace decaf {

namespace fs = std::filesystem;

namespace {

// Data and training streams of one experiment seed.
enum Stream : std::uint64_t {
  kSourceTrain = 0x100,
  kSourceClassifier = 0x200,
  kSourceEval = 0x300,
  kTarget = 0x400,
  kTest = 0x500,
  kEncoderFit = 0x600,
  kClassifierFit = 0x700,
  kAdaptFit = 0x800,
  kScratchFit = 0x900,
  kFineTuneFit = 0xa00,
  kProjectionFit = 0xb00,
};

constexpr double kNa = std::numeric_limits<double>::quiet_NaN();

struct SeedContext {
  const ExperimentConfig& config;
  std::uint64_t seed;
  std::optional<fs::path> dir;
  std::shared_ptr<spdlog::logger> log;

  template <typename... Args>
  void info(fmt::format_string<Args...> f, Args&&... args) const {
    log->info("run={} seed={} {}", config.name, seed, fmt::format(f, std::forward<Args>(args)...));
  }
  template <typename... Args>
  void warn(fmt::format_string<Args...> f, Args&&... args) const {
    log->warn("run={} seed={} {}", config.name, seed, fmt::format(f, std::forward<Args>(args)...));
  }
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }


std::vector<int> all_variables(int k) {
  std::vector<int> v(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

void add_scores(std::vector<ScoreRow>& rows, const ExperimentConfig& cfg, std::uint64_t seed, int budget,
                const std::string& baseline, const LatentSequence* latents, const Trajectory& test,
                const std::vector<int>& vars) {
  for (MetricKind m : cfg.metrics) {
    ScoreRow row{seed, budget, baseline, m, kNa, kNa, kNa, {}, {}};
    if (latents) {
      const ScoreSummary s = score_latents(*latents, test, vars, m);
      row.diag = s.diag;
      row.off_diag = s.off_diag;
      row.cc = s.cc;
      row.variables = vars;
      row.per_variable = s.per_variable;
    }
    rows.push_back(row);
  }
}


void check_detection(SeedContext& ctx, SeedResult& res, const ChangeReport& report, const std::vector<int>& truth,
                     int budget, const std::string& source) {
  std::vector<int> missed, spurious;
  for (int v : truth)
    if (!report.is_detected(v)) missed.push_back(v);
  for (int v : report.detected)
    if (!std::binary_search(truth.begin(), truth.end(), v)) spurious.push_back(v);
  const std::string where = fmt::format("budget {} source {}", budget, source);
  if (!truth.empty() && report.detected.empty()) {
    res.flags.push_back(fmt::format("{}: detection returned no change although {} changed", where, truth));
  } else if (!missed.empty()) {
    res.flags.push_back(fmt::format("{}: changed variables {} not detected", where, missed));
  }
  if (!spurious.empty()) res.flags.push_back(fmt::format("{}: false detections {}", where, spurious));
  for (const auto& w : report.warnings) res.flags.push_back(fmt::format("{}: {}", where, w));
  ctx.info("stage=detect source={} budget={} detected={} max_delta={}", source, budget, report.detected,
           report.max_delta);
}

// Variables a role changes relative to the base coordinates.
std::vector<int> changed_of(const SeedWorld& w, const EnvironmentRole& r) {
  return r.variant.changed && w.change.kind != ChangeKind::kIdentity ? w.preset.changed : std::vector<int>{};
}

// Variables whose coordinates differ between two roles.
std::vector<int> changed_between(const SeedWorld& w, const EnvironmentRole& a, const EnvironmentRole& b) {
  return changed_of(w, a) == changed_of(w, b) ? std::vector<int>{} : w.preset.changed;
}

SeedResult run_adapt_seed(SeedContext& ctx) {
  const ExperimentConfig& cfg = ctx.config;
  const std::uint64_t seed = ctx.seed;
  SeedResult res;
  res.seed = seed;
  const SeedWorld world = make_world(cfg, seed);
  const auto tgt_env = world.environment(cfg.target);
  const int k = tgt_env->num_variables();
  const std::vector<int> truth_changed = changed_between(world, cfg.sources.front(), cfg.target);
  const std::vector<int> scored = truth_changed.empty() ? all_variables(k) : truth_changed;

  ctx.info("stage=source env={}", cfg.sources.front().name);
  const SourceModel source = train_source(cfg, world, cfg.sources.front(), seed);
  const auto budgets = cfg.samples.target_budgets();
  const Trajectory target_full = target_data(cfg, world, seed);
  const Trajectory test = test_data(cfg, world, seed);
  const LatentSequence z_test = source.encoder.encode(test);
  if (ctx.dir) {
    write_text(*ctx.dir / "target_train.csv", trajectory_csv(target_full));
    write_json(*ctx.dir / "source" / "encoder.json", encoder_json(source.encoder, source.encoder_curve));
    write_json(*ctx.dir / "source" / "classifier.json", classifier_json(source));
  }

  for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
    const int n = budgets[bi];
    const Trajectory tt = target_full.slice(0, n);
    const LatentSequence z_tt = source.encoder.encode(tt);
    const ChangeReport report =
        detect_changes(source.rates, compute_rates(source.classifier, z_tt, tt.targets), cfg.tau, cfg.criterion);
    check_detection(ctx, res, report, truth_changed, n, cfg.sources.front().name);
    res.reports.push_back(report);
    const std::optional<fs::path> bdir = ctx.dir ? std::optional(*ctx.dir / fmt::format("n{}", n)) : std::nullopt;
    if (bdir) write_json(*bdir / "change_report.json", to_json(report));

    for (Baseline b : cfg.baselines) {
      const std::string name = to_string(b);
      switch (b) {
        case Baseline::kZeroShot: add_scores(res.rows, cfg, seed, n, name, &z_test, test, scored); break;
        case Baseline::kFineTune: {
          if (cfg.encoder != EncoderKind::kLearnedLinear) {
            res.flags.push_back(fmt::format("budget {}: ft is not applicable to the {} encoder", n,
                                            to_string(cfg.encoder)));
            add_scores(res.rows, cfg, seed, n, name, nullptr, test, scored);
            break;
          }
          LinearEncoderConfig ec = cfg.encoder_training;
          ec.train.seed = stream_seed(seed, kFineTuneFit + bi);
          const LinearEncoderFit ft = train_linear_encoder(tt, ec, &source.encoder);
          const LatentSequence z = ft.encoder.encode(test);
          add_scores(res.rows, cfg, seed, n, name, &z, test, scored);
          if (bdir) write_json(*bdir / "ft_encoder.json", encoder_json(ft.encoder, ft.curve));
          break;
        }
        case Baseline::kDecaf: {
          AdaptationConfig ac = cfg.adaptation;
          ac.train.seed = stream_seed(seed, kAdaptFit + bi);
          try {
            const AdaptationResult ad = train_adaptation(z_tt, tt.targets, report.detected, ac);
            const LatentSequence z = substitute(z_test, ad);
            add_scores(res.rows, cfg, seed, n, name, &z, test, scored);
            if (bdir) {
              write_json(*bdir / "decaf.json", {{"changed_variables", ad.changed_variables},
                                                {"changed_dims", ad.changed_dims},
                                                {"psi_ch", ad.psi_ch},
                                                {"curve", ad.curve},
                                                {"floor_hits", ad.floor_hits},
                                                {"params", to_json(ad.model.packed_params())}});
            }
          } catch (const DegenerateTargetError& e) {
            res.flags.push_back(fmt::format("budget {}: decaf skipped: {}", n, e.what()));
            add_scores(res.rows, cfg, seed, n, name, nullptr, test, scored);
          } catch (const EmptyAssignmentError& e) {
            res.flags.push_back(fmt::format("budget {}: decaf skipped: {}", n, e.what()));
            add_scores(res.rows, cfg, seed, n, name, nullptr, test, scored);
          }
          break;
        }
        case Baseline::kScratch: {
          LinearEncoderConfig ec = cfg.encoder_training;
          ec.train.seed = stream_seed(seed, kScratchFit + bi);
          const LinearEncoderFit fit = train_linear_encoder(tt, ec);
          const LatentSequence z = fit.encoder.encode(test);
          add_scores(res.rows, cfg, seed, n, name, &z, test, scored);
          if (bdir) write_json(*bdir / "scratch_encoder.json", encoder_json(fit.encoder, fit.curve));
          break;
        }
      }
      ctx.info("stage=evaluate budget={} baseline={}", n, name);
    }
  }
  return res;
}

SeedResult run_compose_seed(SeedContext& ctx) {
  const ExperimentConfig& cfg = ctx.config;
  const std::uint64_t seed = ctx.seed;
  SeedResult res;
  res.seed = seed;
  const SeedWorld world = make_world(cfg, seed);
  const auto tgt_env = world.environment(cfg.target);
  const int k = tgt_env->num_variables();
  const std::vector<int> everything = all_variables(k);

  std::vector<SourceModel> sources;
  for (std::size_t l = 0; l < cfg.sources.size(); ++l) {
    ctx.info("stage=source env={}", cfg.sources[l].name);
    sources.push_back(train_source(cfg, world, cfg.sources[l], seed, static_cast<int>(l)));
    if (ctx.dir) {
      const fs::path sdir = *ctx.dir / ("source-" + cfg.sources[l].name);
      write_json(sdir / "encoder.json", encoder_json(sources.back().encoder, sources.back().encoder_curve));
      write_json(sdir / "classifier.json", classifier_json(sources.back()));
    }
  }
  const auto budgets = cfg.samples.target_budgets();
  const Trajectory target_full = target_data(cfg, world, seed);
  const Trajectory test = test_data(cfg, world, seed);
  std::vector<LatentSequence> z_test;
  for (const auto& s : sources) z_test.push_back(s.encoder.encode(test));
  if (ctx.dir) write_text(*ctx.dir / "target_train.csv", trajectory_csv(target_full));

  for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
    const int n = budgets[bi];
    const Trajectory tt = target_full.slice(0, n);
    const std::optional<fs::path> bdir = ctx.dir ? std::optional(*ctx.dir / fmt::format("n{}", n)) : std::nullopt;
    std::vector<StitchSource> stitch_sources;
    for (std::size_t l = 0; l < sources.size(); ++l) {
      const LatentSequence z_tt = sources[l].encoder.encode(tt);
      const ChangeReport report = detect_changes(
          sources[l].rates, compute_rates(sources[l].classifier, z_tt, tt.targets), cfg.tau, cfg.criterion);
      check_detection(ctx, res, report, changed_between(world, cfg.sources[l], cfg.target), n, cfg.sources[l].name);
      res.reports.push_back(report);
      if (bdir) write_json(*bdir / fmt::format("change_report-{}.json", cfg.sources[l].name), to_json(report));
      stitch_sources.push_back({cfg.sources[l].name, sources[l].encoder.assignment(), report});
    }
    const StitchPlan plan = plan_stitch(stitch_sources, everything);
    res.plans.push_back(plan);
    for (const auto& w : plan.warnings) res.flags.push_back(fmt::format("budget {}: {}", n, w));
    if (bdir) write_json(*bdir / "stitch_plan.json", to_json(plan));
    ctx.info("stage=stitch budget={} covered={} uncovered={}", n, plan.covered(), plan.uncovered);

    for (Baseline b : cfg.baselines) {
      switch (b) {
        case Baseline::kZeroShot:
          for (std::size_t l = 0; l < sources.size(); ++l)
            add_scores(res.rows, cfg, seed, n, "0shot-" + cfg.sources[l].name, &z_test[l], test, everything);
          break;
        case Baseline::kFineTune:
          for (std::size_t l = 0; l < sources.size(); ++l) {
            const std::string name = "ft-" + cfg.sources[l].name;
            if (cfg.encoder != EncoderKind::kLearnedLinear) {
              add_scores(res.rows, cfg, seed, n, name, nullptr, test, everything);
              continue;
            }
            LinearEncoderConfig ec = cfg.encoder_training;
            ec.train.seed = stream_seed(seed, kFineTuneFit + 16 * bi + l);
            const LinearEncoderFit ft = train_linear_encoder(tt, ec, &sources[l].encoder);
            const LatentSequence z = ft.encoder.encode(test);
            add_scores(res.rows, cfg, seed, n, name, &z, test, everything);
          }
          if (cfg.encoder != EncoderKind::kLearnedLinear) {
            res.flags.push_back(fmt::format("budget {}: ft is not applicable to the {} encoder", n,
                                            to_string(cfg.encoder)));
          }
          break;
        case Baseline::kDecaf: {
          if (plan.blocks.empty()) {
            res.flags.push_back(fmt::format("budget {}: no variable kept, nothing to stitch", n));
            add_scores(res.rows, cfg, seed, n, "decaf", nullptr, test, everything);
            break;
          }
          const LatentSequence stitched = stitch(plan, z_test);
          add_scores(res.rows, cfg, seed, n, "decaf", &stitched, test, plan.covered());
          if (cfg.use_projection) {
            // rho reconstructs source 0's representation from stitched source-0 data.
            const Trajectory src_eval = realize_environment(*sources.front().env, cfg.samples.source_eval,
                                                            stream_seed(seed, kSourceEval));
            std::vector<LatentSequence> z_src;
            for (const auto& s : sources) z_src.push_back(s.encoder.encode(src_eval));
            ProjectionConfig pc = cfg.projection;
            pc.train.seed = stream_seed(seed, kProjectionFit + bi);
            const Eigen::MatrixXd& recon = z_src.front().z;
            const ProjectionFit pf =
                fit_projection(stitch(plan, z_src).z, static_cast<int>(recon.cols()), recon, pc);
            for (const auto& w : pf.warnings) res.flags.push_back(fmt::format("budget {}: projection: {}", n, w));
            if (bdir) {
              write_json(*bdir / "projection.json", {{"initial_heldout_mse", pf.initial_heldout_mse},
                                                     {"final_heldout_mse", pf.final_heldout_mse},
                                                     {"curve", pf.curve},
                                                     {"params", to_json(pf.projection.net.params())}});
            }
          }
          break;
        }
        case Baseline::kScratch: {
          LinearEncoderConfig ec = cfg.encoder_training;
          ec.train.seed = stream_seed(seed, kScratchFit + bi);
          const LinearEncoderFit fit = train_linear_encoder(tt, ec);
          const LatentSequence z = fit.encoder.encode(test);
          add_scores(res.rows, cfg, seed, n, "scratch", &z, test, everything);
          break;
        }
      }
      ctx.info("stage=evaluate budget={} baseline={}", n, to_string(b));
    }
  }
  return res;
}

using SeedFn = SeedResult (*)(SeedContext&);

RunBundle run_seeds(const ExperimentConfig& config, const fs::path& out, SeedFn fn) {
  config.validate();
  RunBundle bundle;
  bundle.config = config;
  std::shared_ptr<spdlog::logger> log;
  if (!out.empty()) {
    fs::create_directories(out);
    bundle.dir = out;
    write_json(out / "config.json", to_json(config));
    auto sink = std::make_shared<spdlog::sinks::basic_file_sink_mt>((out / "run.log").string(), true);
    log = std::make_shared<spdlog::logger>("run", sink);
    log->set_pattern("%Y-%m-%dT%H:%M:%S.%e %l %v");
    log->flush_on(spdlog::level::info);
  } else {
    log = spdlog::default_logger();
  }

  const std::size_t n = config.seeds.size();
  std::vector<SeedResult> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      SeedContext ctx{config, config.seeds[i], std::nullopt, log};
      if (!out.empty()) ctx.dir = out / fmt::format("seed-{}", config.seeds[i]);
      try {
        results[i] = fn(ctx);
        for (const auto& f : results[i].flags) ctx.warn("flag: {}", f);
        if (ctx.dir) {
          write_text(*ctx.dir / "scores.csv", scores_csv(results[i].rows));
          write_json(*ctx.dir / "flags.json", results[i].flags);
          write_text(*ctx.dir / "per_variable.csv", per_variable_csv(results[i].rows));
        }
        ctx.info("stage=done rows={}", results[i].rows.size());
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int jobs = std::min<int>(config.jobs, static_cast<int>(n));
  std::vector<std::thread> threads;
  for (int j = 1; j < jobs; ++j) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  bundle.seeds = std::move(results);
  if (!out.empty()) write_text(out / "scores.csv", scores_csv(bundle.rows()));
  return bundle;
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) { return make_rng(seed, stream)(); }

std::shared_ptr<EnvironmentSpec> SeedWorld::environment(const EnvironmentRole& role) const {
  return make_environment(preset, process, change, role.name, role.variant);
}

SeedWorld make_world(const ExperimentConfig& config, std::uint64_t seed) {
  SeedWorld w;
  w.preset = preset_defaults(config.preset);
  w.process = preset_process(w.preset, config.mixing, seed);
  w.change = preset_change(w.preset, config.change, seed);
  return w;
}

SourceModel train_source(const ExperimentConfig& config, const SeedWorld& world, const EnvironmentRole& role,
                         std::uint64_t seed, int index) {
  const auto l = static_cast<std::uint64_t>(index);
  SourceModel m;
  m.env = world.environment(role);
  if (config.encoder == EncoderKind::kOracle) {
    m.encoder = Encoder::oracle(m.env);
  } else {
    const Trajectory train = realize_environment(*m.env, config.samples.source, stream_seed(seed, kSourceTrain + l));
    LinearEncoderConfig ec = config.encoder_training;
    ec.train.seed = stream_seed(seed, kEncoderFit + l);
    LinearEncoderFit fit = train_linear_encoder(train, ec);
    m.encoder = std::move(fit.encoder);
    m.encoder_curve = std::move(fit.curve);
  }
  const Trajectory cls = source_data(config, world, role, seed, index);
  ClassifierConfig cc = config.classifier;
  cc.train.seed = stream_seed(seed, kClassifierFit + l);
  ClassifierFit fit = train_classifier(m.encoder.encode(cls), cls.targets, cc);
  m.classifier = std::move(fit.classifier);
  m.classifier_curve = std::move(fit.curve);
  const Trajectory eval = realize_environment(*m.env, config.samples.source_eval, stream_seed(seed, kSourceEval + l));
  m.rates = compute_rates(m.classifier, m.encoder.encode(eval), eval.targets);
  return m;
}

std::string trajectory_csv(const Trajectory& t) {
  std::string out = "t";
  for (Eigen::Index d = 0; d < t.states.cols(); ++d) out += fmt::format(",s{}", d);
  for (Eigen::Index k = 0; k < t.targets.cols(); ++k) out += fmt::format(",I{}", k);
  out += "\n";
  for (int r = 0; r < t.length(); ++r) {
    out += fmt::format("{}", r);
    for (Eigen::Index d = 0; d < t.states.cols(); ++d) out += fmt::format(",{:.9g}", t.states(r, d));
    for (Eigen::Index k = 0; k < t.targets.cols(); ++k) out += fmt::format(",{}", t.targets(r, k));
    out += "\n";
  }
  return out;
}

nlohmann::json encoder_json(const Encoder& e, const std::vector<double>& curve) {
  nlohmann::json j = {{"kind", to_string(e.kind())},
                      {"environment", e.environment()},
                      {"psi", e.assignment().psi},
                      {"curve", curve}};
  if (e.kind() == EncoderKind::kLearnedLinear) j["params"] = to_json(e.params());
  return j;
}

nlohmann::json classifier_json(const SourceModel& m) {
  return {{"params", to_json(m.classifier.packed_params())}, {"curve", m.classifier_curve}};
}

Trajectory source_data(const ExperimentConfig& config, const SeedWorld& world, const EnvironmentRole& role,
                       std::uint64_t seed, int index) {
  return realize_environment(*world.environment(role), config.samples.classifier,
                             stream_seed(seed, kSourceClassifier + static_cast<std::uint64_t>(index)));
}

Trajectory target_data(const ExperimentConfig& config, const SeedWorld& world, std::uint64_t seed) {
  const auto budgets = config.samples.target_budgets();
  return realize_environment(*world.environment(config.target), *std::max_element(budgets.begin(), budgets.end()),
                             stream_seed(seed, kTarget));
}

Trajectory test_data(const ExperimentConfig& config, const SeedWorld& world, std::uint64_t seed) {
  return realize_environment(*world.environment(config.target), config.samples.test, stream_seed(seed, kTest));
}

ChangeReport detect_on_target(const ExperimentConfig& config, const SourceModel& source, const Trajectory& target) {
  const LatentSequence z = source.encoder.encode(target);
  return detect_changes(source.rates, compute_rates(source.classifier, z, target.targets), config.tau,
                        config.criterion);
}

ScoreSummary score_latents(const LatentSequence& latents, const Trajectory& truth, const std::vector<int>& vars,
                           MetricKind metric) {
  std::vector<Eigen::MatrixXd> blocks, gt;
  for (int v : vars) {
    if (!latents.assignment.dims_of(v).empty()) blocks.push_back(slice_latents(latents, v));
    gt.push_back(truth.variable(v));
  }
  return match_and_score(blocks, gt, metric).second;
}

std::vector<ScoreRow> RunBundle::rows() const {
  std::vector<ScoreRow> out;
  for (const auto& s : seeds) out.insert(out.end(), s.rows.begin(), s.rows.end());
  return out;
}

RunBundle run_adaptation_experiment(const ExperimentConfig& config, const fs::path& out) {
  if (config.task != Task::kAdapt) throw ContractViolation("run_adaptation_experiment: task is not adapt");
  return run_seeds(config, out, &run_adapt_seed);
}

RunBundle run_composition_experiment(const ExperimentConfig& config, const fs::path& out) {
  if (config.task != Task::kCompose) throw ContractViolation("run_composition_experiment: task is not compose");
  return run_seeds(config, out, &run_compose_seed);
}

RunBundle run_experiment(const ExperimentConfig& config, const fs::path& out) {
  return config.task == Task::kAdapt ? run_adaptation_experiment(config, out) : run_composition_experiment(config, out);
}

}  // namespace decaf
