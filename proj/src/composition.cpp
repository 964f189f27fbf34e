#include "decaf/composition.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "decaf/errors.hpp"

namespace decaf {

int StitchPlan::stitched_dim() const {
  int d = 0;
  for (const auto& b : blocks) d += static_cast<int>(b.dims.size());
  return d;
}

std::vector<int> StitchPlan::covered() const {
  std::vector<int> out;
  for (const auto& b : blocks) out.push_back(b.variable);
  return out;
}

StitchPlan plan_stitch(const std::vector<StitchSource>& sources, const std::vector<int>& target_variables) {
  if (sources.empty()) throw ContractViolation("plan_stitch: no sources");
  StitchPlan plan;
  plan.num_variables = sources.front().assignment.num_variables;
  for (const auto& s : sources) {
    if (s.assignment.num_variables != plan.num_variables || s.report.num_variables != plan.num_variables) {
      throw ContractViolation(fmt::format("plan_stitch: source '{}' has a different variable count", s.name));
    }
    plan.source_names.push_back(s.name);
  }
  std::vector<int> targets = target_variables;
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  for (int v : targets) {
    if (v < 0 || v >= plan.num_variables) throw ContractViolation(fmt::format("plan_stitch: variable {} out of range", v));
  }

  const auto excluded = [](const ChangeReport& r, int v) {
    return std::find(r.excluded.begin(), r.excluded.end(), v) != r.excluded.end();
  };
  plan.kept.resize(sources.size());
  for (std::size_t l = 0; l < sources.size(); ++l) {
    for (int v : targets) {
      if (sources[l].assignment.dims_of(v).empty() || sources[l].report.is_detected(v)) continue;
      if (excluded(sources[l].report, v)) {
        plan.warnings.push_back(
            fmt::format("source '{}': variable {} has no evaluable rates and is not kept", sources[l].name, v));
        continue;
      }
      plan.kept[l].push_back(v);
    }
  }

  for (int v : targets) {
    OverlapResolution res;
    res.variable = v;
    for (std::size_t l = 0; l < sources.size(); ++l) {
      if (std::find(plan.kept[l].begin(), plan.kept[l].end(), v) == plan.kept[l].end()) continue;
      res.candidates.push_back(static_cast<int>(l));
      res.deltas.push_back(sources[l].report.max_delta[v]);
    }
    if (res.candidates.empty()) {
      plan.uncovered.push_back(v);
      plan.warnings.push_back(fmt::format("variable {} is kept by no source", v));
      spdlog::warn("plan_stitch: variable {} is kept by no source; composing the covered subset", v);
      continue;
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < res.candidates.size(); ++c)
      if (res.deltas[c] < res.deltas[best]) best = c;
    res.winner = res.candidates[best];
    if (res.candidates.size() > 1) plan.overlaps.push_back(res);
    plan.blocks.push_back({v, res.winner, sources[res.winner].assignment.dims_of(v)});
  }
  return plan;
}

LatentSequence stitch(const StitchPlan& plan, const std::vector<LatentSequence>& latents) {
  if (plan.blocks.empty()) throw ContractViolation("stitch: the plan keeps no variable");
  if (latents.size() != plan.source_names.size()) {
    throw ContractViolation(fmt::format("stitch: {} latent sequences for {} sources", latents.size(),
                                        plan.source_names.size()));
  }
  const int t = latents.front().length();
  for (const auto& s : latents) {
    if (s.length() != t) throw ContractViolation("stitch: latent sequences differ in length");
  }
  LatentSequence out;
  out.z.resize(t, plan.stitched_dim());
  out.assignment.num_variables = plan.num_variables;
  out.environment = latents.front().environment;
  out.encoder = "stitched";
  Eigen::Index col = 0;
  for (const auto& b : plan.blocks) {
    const LatentSequence& src = latents[b.source];
    for (int d : b.dims) {
      if (d >= src.z.cols()) throw ContractViolation("stitch: kept dim outside the source latents");
      out.z.col(col++) = src.z.col(d);
      out.assignment.psi.push_back(b.variable);
    }
  }
  return out;
}

nlohmann::json to_json(const StitchPlan& plan) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : plan.blocks) {
    blocks.push_back({{"variable", b.variable}, {"source", plan.source_names[b.source]}, {"dims", b.dims}});
  }
  nlohmann::json overlaps = nlohmann::json::array();
  for (const auto& o : plan.overlaps) {
    std::vector<std::string> names;
    for (int c : o.candidates) names.push_back(plan.source_names[c]);
    overlaps.push_back({{"variable", o.variable},
                        {"candidates", names},
                        {"deltas", o.deltas},
                        {"winner", plan.source_names[o.winner]}});
  }
  nlohmann::json kept = nlohmann::json::object();
  for (std::size_t l = 0; l < plan.kept.size(); ++l) kept[plan.source_names[l]] = plan.kept[l];
  return {{"sources", plan.source_names}, {"num_variables", plan.num_variables},
          {"kept", kept},                 {"blocks", blocks},
          {"overlaps", overlaps},         {"uncovered", plan.uncovered},
          {"stitched_dim", plan.stitched_dim()}, {"warnings", plan.warnings}};
}

ProjectionFit fit_projection(const Eigen::MatrixXd& stitched, int required_dim, const Eigen::MatrixXd& targets,
                             const ProjectionConfig& config) {
  if (required_dim <= 0) throw ContractViolation("fit_projection: required dim must be positive");
  if (targets.cols() != required_dim || targets.rows() != stitched.rows()) {
    throw ContractViolation("fit_projection: targets must be T x required_dim aligned with the inputs");
  }
  if (stitched.cols() < 1) throw ContractViolation("fit_projection: no stitched columns");
  const auto t = static_cast<int>(stitched.rows());
  const int held = static_cast<int>(std::floor(config.holdout_fraction * t));
  const int n = t - held;
  if (n < 1 || held < 1) throw ContractViolation("fit_projection: need rows for both training and held-out data");

  ProjectionFit fit;
  if (required_dim > stitched.cols()) {
    const Eigen::MatrixXd centered = stitched.rowwise() - stitched.colwise().mean();
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
    const auto& sv = svd.singularValues();
    const Eigen::Index rank = (sv.array() > 1e-9 * std::max(1.0, sv(0))).count();
    fit.warnings.push_back(fmt::format("required dim {} exceeds stitched dim {} (numerical rank {})", required_dim,
                                       stitched.cols(), rank));
    spdlog::warn("fit_projection: {}", fit.warnings.back());
  }
  Rng rng = make_rng(config.train.seed, 0x70726f);
  fit.projection.net =
      DenseNet::random({static_cast<int>(stitched.cols()), config.hidden, required_dim}, Activation::kSwish, rng);
  const Eigen::MatrixXd x_train = stitched.topRows(n), y_train = targets.topRows(n);
  const Eigen::MatrixXd x_held = stitched.bottomRows(held), y_held = targets.bottomRows(held);
  const auto mse = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).squaredNorm() / a.size(); };
  fit.initial_heldout_mse = mse(fit.projection.apply(x_held), y_held);

  ParamVector params = fit.projection.net.params();
  const DenseNet& shape = fit.projection.net;
  const BatchLoss loss = [&](ad::Tape& tape, const BoundParams& bound, std::span<const int> batch) {
    const ad::Var out = shape.forward(bound, tape.constant(take_rows(x_train, batch)));
    return ad::mean(ad::square(ad::sub(out, tape.constant(take_rows(y_train, batch)))));
  };
  fit.curve = train_minibatch(params, n, config.train, loss).epoch_loss;
  fit.projection.net.params() = params;
  fit.final_heldout_mse = mse(fit.projection.apply(x_held), y_held);
  return fit;
}

}  // namespace decaf
