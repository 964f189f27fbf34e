#pragma once

// Environments derived from one underlying process: the changed block is
// re-expressed through an invertible map, shared variables are left as they
// are, and groups of intervention targets may be merged (coarsening).

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "decaf/causal_process.hpp"
#include "decaf/invertible_map.hpp"

namespace decaf {

struct VariablePartition {
  std::vector<int> changed;  // ascending
  std::vector<int> shared;   // ascending

  void validate(int num_variables) const;
  static VariablePartition from_changed(int num_variables, std::vector<int> changed);
};

enum class ChangeKind { kIdentity, kRotation, kRandomAffine, kAffineCouplingFlow, kPolar };

std::string to_string(ChangeKind k);
ChangeKind change_kind_from_string(const std::string& s);

struct ChangeTransform {
  ChangeKind kind = ChangeKind::kIdentity;
  MapPtr map;
  int input_dim = 0;

  static ChangeTransform identity(int dim);
  static ChangeTransform rotation2d(double radians);
  static ChangeTransform random_rotation(int dim, Rng& rng);
  static ChangeTransform random_affine(int dim, Rng& rng);
  static ChangeTransform affine(Eigen::MatrixXd a, Eigen::VectorXd b);
  static ChangeTransform coupling_flow(int dim, Rng& rng, int layers = 4);
  static ChangeTransform polar();
};

// h(c_ch) and its inverse; both throw ContractViolation on a length mismatch.
Eigen::VectorXd apply_change(const ChangeTransform& transform, const Eigen::VectorXd& c_ch);
Eigen::VectorXd invert_change(const ChangeTransform& transform, const Eigen::VectorXd& e_ch);

// `process.policy` is read in environment coordinates (ranges, shifts);
// `coarsening` groups replace its groups when the environment is realized.
struct EnvironmentSpec {
  std::string name;
  CausalProcess process;
  VariablePartition partition;
  ChangeTransform transform;
  std::vector<std::vector<int>> coarsening;
  bool no_overlap = false;  // coarsened groups must avoid the changed set

  int num_variables() const { return process.graph.num_variables(); }
  int changed_dim() const;
  void validate() const;

  // Base <-> environment coordinates for a full state vector.
  Eigen::VectorXd to_environment(const Eigen::VectorXd& base_state) const;
  Eigen::VectorXd to_base(const Eigen::VectorXd& env_state) const;
  // The policy actually used for sampling (coarsening applied).
  InterventionPolicy effective_policy() const;
};

Trajectory realize_environment(const EnvironmentSpec& spec, int T, std::uint64_t seed);

struct CompositionSpec {
  std::vector<EnvironmentSpec> sources;
  EnvironmentSpec target;
  std::vector<std::vector<int>> shared_sets;  // per source, variables shared with the target
  bool full_coverage = false;

  void validate() const;
  // Target variables neither shared by a source nor changed in the target.
  std::vector<int> uncovered() const;
};

}  // namespace decaf
