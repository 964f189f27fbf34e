#include "decaf/env_transform.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <set>

#include "decaf/errors.hpp"

namespace decaf {

void VariablePartition::validate(int num_variables) const {
  std::vector<int> all;
  all.insert(all.end(), changed.begin(), changed.end());
  all.insert(all.end(), shared.begin(), shared.end());
  std::sort(all.begin(), all.end());
  bool ok = static_cast<int>(all.size()) == num_variables;
  for (int i = 0; ok && i < num_variables; ++i) ok = all[i] == i;
  ok = ok && std::is_sorted(changed.begin(), changed.end()) &&
       std::is_sorted(shared.begin(), shared.end());
  if (!ok) {
    throw ContractViolation(fmt::format(
        "VariablePartition: changed {} and shared {} must split 0..{} in ascending order",
        changed, shared, num_variables - 1));
  }
}

VariablePartition VariablePartition::from_changed(int num_variables, std::vector<int> changed) {
  std::sort(changed.begin(), changed.end());
  VariablePartition p;
  p.changed = changed;
  for (int i = 0; i < num_variables; ++i)
    if (!std::binary_search(changed.begin(), changed.end(), i)) p.shared.push_back(i);
  p.validate(num_variables);
  return p;
}

std::string to_string(ChangeKind k) {
  switch (k) {
    case ChangeKind::kIdentity: return "identity";
    case ChangeKind::kRotation: return "rotation";
    case ChangeKind::kRandomAffine: return "random-affine";
    case ChangeKind::kAffineCouplingFlow: return "affine-coupling-flow";
    case ChangeKind::kPolar: return "polar";
  }
  return "identity";
}

ChangeKind change_kind_from_string(const std::string& s) {
  for (auto k : {ChangeKind::kIdentity, ChangeKind::kRotation, ChangeKind::kRandomAffine,
                 ChangeKind::kAffineCouplingFlow, ChangeKind::kPolar})
    if (to_string(k) == s) return k;
  throw ContractViolation(fmt::format("unknown change kind '{}'", s));
}

ChangeTransform ChangeTransform::identity(int dim) {
  return {ChangeKind::kIdentity, std::make_shared<IdentityMap>(dim), dim};
}

ChangeTransform ChangeTransform::rotation2d(double radians) {
  return {ChangeKind::kRotation, AffineMap::rotation2d(radians), 2};
}

ChangeTransform ChangeTransform::random_rotation(int dim, Rng& rng) {
  return {ChangeKind::kRotation, AffineMap::random_rotation(dim, rng), dim};
}

ChangeTransform ChangeTransform::random_affine(int dim, Rng& rng) {
  return {ChangeKind::kRandomAffine, AffineMap::random_affine(dim, rng), dim};
}

ChangeTransform ChangeTransform::affine(Eigen::MatrixXd a, Eigen::VectorXd b) {
  const int dim = static_cast<int>(b.size());
  return {ChangeKind::kRandomAffine, std::make_shared<AffineMap>(std::move(a), std::move(b)), dim};
}

ChangeTransform ChangeTransform::coupling_flow(int dim, Rng& rng, int layers) {
  return {ChangeKind::kAffineCouplingFlow, CouplingFlowMap::random(dim, rng, layers), dim};
}

ChangeTransform ChangeTransform::polar() {
  return {ChangeKind::kPolar, std::make_shared<PolarMap>(), 2};
}

Eigen::VectorXd apply_change(const ChangeTransform& transform, const Eigen::VectorXd& c_ch) {
  if (c_ch.size() != transform.input_dim) {
    throw ContractViolation(fmt::format("apply_change: expected {} values, got {}",
                                        transform.input_dim, c_ch.size()));
  }
  return transform.map->forward(c_ch);
}

Eigen::VectorXd invert_change(const ChangeTransform& transform, const Eigen::VectorXd& e_ch) {
  if (e_ch.size() != transform.input_dim) {
    throw ContractViolation(fmt::format("invert_change: expected {} values, got {}",
                                        transform.input_dim, e_ch.size()));
  }
  return transform.map->inverse(e_ch);
}

int EnvironmentSpec::changed_dim() const {
  int d = 0;
  for (int v : partition.changed) d += process.graph.dims[v];
  return d;
}

void EnvironmentSpec::validate() const {
  process.validate();
  const int k = num_variables();
  partition.validate(k);
  if (!transform.map || transform.map->dim() != transform.input_dim) {
    throw ContractViolation(fmt::format("EnvironmentSpec '{}': transform has no map of its declared dim", name));
  }
  if (transform.input_dim != changed_dim()) {
    throw ContractViolation(fmt::format("EnvironmentSpec '{}': transform dim {} != changed block dim {}",
                                        name, transform.input_dim, changed_dim()));
  }
  std::set<int> seen;
  for (const auto& g : coarsening) {
    if (g.empty()) throw ContractViolation(fmt::format("EnvironmentSpec '{}': empty coarsening group", name));
    for (int v : g) {
      if (v < 0 || v >= k || !seen.insert(v).second) {
        throw ContractViolation(fmt::format("EnvironmentSpec '{}': coarsening groups must be disjoint variables", name));
      }
      if (no_overlap && std::binary_search(partition.changed.begin(), partition.changed.end(), v)) {
        throw ContractViolation(fmt::format(
            "EnvironmentSpec '{}': coarsened variable {} is also changed", name, v));
      }
    }
  }
  effective_policy().validate(process.graph);
}

namespace {

std::vector<int> changed_coordinates(const EnvironmentSpec& spec) {
  std::vector<int> coords;
  for (int v : spec.partition.changed) {
    const int off = spec.process.graph.offset(v);
    for (int c = 0; c < spec.process.graph.dims[v]; ++c) coords.push_back(off + c);
  }
  return coords;
}

class EnvironmentChart final : public StateChart {
 public:
  explicit EnvironmentChart(const EnvironmentSpec& spec)
      : spec_(spec), coords_(changed_coordinates(spec)), buf_(coords_.size()) {}

  void to_chart(Eigen::VectorXd& s) const override { apply(s, true); }
  void to_base(Eigen::VectorXd& s) const override { apply(s, false); }

 private:
  void apply(Eigen::VectorXd& s, bool forward) const {
    if (coords_.empty() || spec_.transform.kind == ChangeKind::kIdentity) return;
    for (std::size_t c = 0; c < coords_.size(); ++c) buf_(c) = s(coords_[c]);
    const Eigen::VectorXd out =
        forward ? spec_.transform.map->forward(buf_) : spec_.transform.map->inverse(buf_);
    for (std::size_t c = 0; c < coords_.size(); ++c) s(coords_[c]) = out(c);
  }

  const EnvironmentSpec& spec_;
  std::vector<int> coords_;
  mutable Eigen::VectorXd buf_;
};

}  // namespace

Eigen::VectorXd EnvironmentSpec::to_environment(const Eigen::VectorXd& base_state) const {
  if (base_state.size() != process.graph.total_dim()) throw ContractViolation("to_environment: dim mismatch");
  Eigen::VectorXd s = base_state;
  EnvironmentChart(*this).to_chart(s);
  return s;
}

Eigen::VectorXd EnvironmentSpec::to_base(const Eigen::VectorXd& env_state) const {
  if (env_state.size() != process.graph.total_dim()) throw ContractViolation("to_base: dim mismatch");
  Eigen::VectorXd s = env_state;
  EnvironmentChart(*this).to_base(s);
  return s;
}

InterventionPolicy EnvironmentSpec::effective_policy() const {
  InterventionPolicy p = process.policy;
  if (!coarsening.empty()) p.groups = coarsening;
  return p;
}

Trajectory realize_environment(const EnvironmentSpec& spec, int T, std::uint64_t seed) {
  spec.validate();
  CausalProcess p = spec.process;
  p.policy = spec.effective_policy();
  EnvironmentChart chart(spec);
  return sample_trajectory(p, T, seed, &chart);
}

void CompositionSpec::validate() const {
  if (sources.size() < 2) throw ContractViolation("CompositionSpec: need at least two sources");
  if (shared_sets.size() != sources.size()) {
    throw ContractViolation("CompositionSpec: one shared set per source required");
  }
  target.validate();
  const int k = target.num_variables();
  for (const auto& s : sources) {
    s.validate();
    if (s.num_variables() != k) throw ContractViolation("CompositionSpec: sources and target differ in K");
  }
  for (const auto& set : shared_sets)
    for (int v : set)
      if (v < 0 || v >= k) throw ContractViolation(fmt::format("CompositionSpec: bad shared variable {}", v));
  if (full_coverage && !uncovered().empty()) {
    throw ContractViolation(fmt::format("CompositionSpec: variables {} are not covered", uncovered()));
  }
}

std::vector<int> CompositionSpec::uncovered() const {
  std::set<int> covered(target.partition.changed.begin(), target.partition.changed.end());
  for (const auto& set : shared_sets) covered.insert(set.begin(), set.end());
  std::vector<int> out;
  for (int i = 0; i < target.num_variables(); ++i)
    if (!covered.count(i)) out.push_back(i);
  return out;
}

}  // namespace decaf
