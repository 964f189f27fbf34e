#include "decaf/presets.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <numbers>

#include "decaf/errors.hpp"

namespace decaf {

namespace {

std::vector<PresetDefaults> make_presets() {
  PresetDefaults voronoi;
  voronoi.name = "voronoi-like";
  voronoi.variables = {"c0", "c1", "c2", "c3", "c4", "c5"};
  voronoi.changed = {3, 4, 5};
  voronoi.change = ChangeKind::kRandomAffine;
  voronoi.coarse_group = {1, 2};
  voronoi.mixing = MixingKind::kCouplingFlow;
  voronoi.tau = 0.15;
  voronoi.target_samples = 750;
  voronoi.flow_depth = 2;
  voronoi.beta_reg = 4.0;
  voronoi.beta_alo = 4.0;

  PresetDefaults pong;
  pong.name = "pong-like";
  pong.variables = {"ball_x", "ball_y", "paddle_l", "paddle_r"};
  pong.changed = {0, 1};
  pong.change = ChangeKind::kPolar;
  pong.coarse_group = {2, 3};
  pong.tau = 0.2;
  pong.target_samples = 5000;
  pong.classifier_epochs = 100;
  pong.base_label = "CA";
  pong.changed_label = "PO";
  pong.joint_label = "jPA";
  pong.independent_label = "PA";

  PresetDefaults c3d;
  c3d.name = "c3d-like";
  c3d.variables = {"pos_x", "pos_y", "pos_z", "rot", "hue_obj", "hue_spot", "hue_bg"};
  c3d.changed = {0, 1};
  c3d.change = ChangeKind::kRotation;
  c3d.coarse_group = {4, 5, 6};
  c3d.tau = 0.1;
  c3d.target_samples = 1000;
  c3d.base_label = "CA";
  c3d.changed_label = "ROT";
  c3d.joint_label = "jHUE";
  c3d.independent_label = "HUE";
  return {voronoi, pong, c3d};
}

const std::vector<PresetDefaults>& presets() {
  static const std::vector<PresetDefaults> p = make_presets();
  return p;
}

DenseNet linear_mechanism(std::vector<double> weights, double bias) {
  DenseNet net({static_cast<int>(weights.size()), 1}, Activation::kIdentity);
  for (std::size_t i = 0; i < weights.size(); ++i) net.weight(0)(static_cast<Eigen::Index>(i), 0) = weights[i];
  net.bias(0)(0, 0) = bias;
  return net;
}

// Ball mean-reverts to (1, 0) and stays right of the origin, so its polar
// angle never wraps; its height is persistent so that angle moves with
// ball_x. Paddles track the ball height.
CausalProcess pong_process(double p) {
  CausalProcess proc;
  proc.graph.dims = {1, 1, 1, 1};
  proc.graph.parents = {{0, 1}, {0, 1}, {1, 2}, {1, 3}};
  proc.mechanisms.nets = {linear_mechanism({0.8, 0.0}, 0.2), linear_mechanism({0.0, 0.95}, 0.0),
                          linear_mechanism({0.35, 0.6}, 0.0), linear_mechanism({0.35, 0.6}, 0.0)};
  proc.mechanisms.noise_scale = {0.1, 0.1, 0.1, 0.1};
  proc.policy = InterventionPolicy::uniform(4, p, -2.0, 2.0);
  proc.policy.low[0] = 0.2;
  proc.policy.high[0] = 2.0;
  return proc;
}

std::vector<int> block_coordinates(const CausalGraph& g, const std::vector<int>& vars) {
  std::vector<int> coords;
  for (int v : vars)
    for (int d = 0; d < g.dims[v]; ++d) coords.push_back(g.offset(v) + d);
  return coords;
}

}  // namespace

std::string to_string(MixingKind m) { return m == MixingKind::kAffine ? "affine" : "coupling-flow"; }

MixingKind mixing_from_string(const std::string& s) {
  if (s == "affine") return MixingKind::kAffine;
  if (s == "coupling-flow") return MixingKind::kCouplingFlow;
  throw ContractViolation(fmt::format("unknown mixing '{}'", s));
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& p : presets()) n.push_back(p.name);
    return n;
  }();
  return names;
}

const PresetDefaults& preset_defaults(std::string_view name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  throw ContractViolation(fmt::format("unknown preset '{}' (known: {})", name, preset_names()));
}

CausalProcess preset_process(const PresetDefaults& preset, MixingKind mixing, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x707265);
  const int k = static_cast<int>(preset.variables.size());
  CausalProcess proc;
  if (preset.name == "pong-like") {
    proc = pong_process(preset.intervention_probability);
  } else {
    proc.graph = CausalGraph::random_dag(std::vector<int>(k, 1), 0.4, rng);
    proc.mechanisms = MechanismSet::random(proc.graph, rng);
    proc.policy = InterventionPolicy::uniform(k, preset.intervention_probability, -2.0, 2.0);
  }
  const int d = proc.graph.total_dim();
  proc.observation.mixing = mixing == MixingKind::kAffine ? MapPtr(AffineMap::random_affine(d, rng))
                                                          : MapPtr(CouplingFlowMap::random(d, rng));
  proc.validate();
  return proc;
}

ChangeTransform preset_change(const PresetDefaults& preset, ChangeKind kind, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x636867);
  const int dim = static_cast<int>(preset.changed.size());
  switch (kind) {
    case ChangeKind::kIdentity: return ChangeTransform::identity(dim);
    case ChangeKind::kRotation:
      return dim == 2 ? ChangeTransform::rotation2d(std::numbers::pi / 6.0) : ChangeTransform::random_rotation(dim, rng);
    case ChangeKind::kRandomAffine: return ChangeTransform::random_affine(dim, rng);
    case ChangeKind::kAffineCouplingFlow: return ChangeTransform::coupling_flow(dim, rng);
    case ChangeKind::kPolar:
      if (dim != 2) throw ContractViolation(fmt::format("preset '{}': polar change needs a 2-d block", preset.name));
      return ChangeTransform::polar();
  }
  throw ContractViolation("preset_change: unknown kind");
}

std::shared_ptr<EnvironmentSpec> make_environment(const PresetDefaults& preset, const CausalProcess& process,
                                                  const ChangeTransform& change, std::string name, Variant variant) {
  auto env = std::make_shared<EnvironmentSpec>();
  env->name = std::move(name);
  env->process = process;
  const int k = process.graph.num_variables();
  if (variant.changed) {
    env->partition = VariablePartition::from_changed(k, preset.changed);
    env->transform = change;
    if (change.kind != ChangeKind::kIdentity) {
      // Per-coordinate quantiles of the base box mapped through the change.
      const auto coords = block_coordinates(process.graph, preset.changed);
      const int n = 4000;
      Rng rng = make_rng(0, 0x726e67);
      Eigen::MatrixXd mapped(n, static_cast<Eigen::Index>(coords.size()));
      Eigen::VectorXd c(static_cast<Eigen::Index>(coords.size()));
      for (int r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < coords.size(); ++j) {
          const int v = preset.changed[j];
          c(static_cast<Eigen::Index>(j)) = uniform(rng, process.policy.low[v], process.policy.high[v]);
        }
        mapped.row(r) = apply_change(change, c).transpose();
      }
      for (std::size_t j = 0; j < coords.size(); ++j) {
        std::vector<double> col(mapped.col(static_cast<Eigen::Index>(j)).data(),
                                mapped.col(static_cast<Eigen::Index>(j)).data() + n);
        std::sort(col.begin(), col.end());
        const int v = preset.changed[j];
        env->process.policy.low[v] = col[static_cast<std::size_t>(0.02 * n)];
        env->process.policy.high[v] = col[static_cast<std::size_t>(0.98 * n)];
      }
    }
  } else {
    env->partition = VariablePartition::from_changed(k, {});
    env->transform = ChangeTransform::identity(0);
  }
  if (variant.coarse) {
    env->coarsening = {preset.coarse_group};
    env->no_overlap = true;
  }
  env->validate();
  return env;
}

}  // namespace decaf
