#pragma once

// Ground-truth temporal causal process: a first-order Markov DBN over K
// (possibly multidimensional) variables with per-step interventions whose
// targets are recorded, observed through an invertible mixing function.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "decaf/dense_net.hpp"
#include "decaf/invertible_map.hpp"
#include "decaf/random.hpp"

namespace decaf {

// Variables are 0-based. parents[i] lists the variables at time t feeding
// C_i at time t+1, ascending; there are no instantaneous edges.
struct CausalGraph {
  std::vector<int> dims;
  std::vector<std::vector<int>> parents;

  int num_variables() const { return static_cast<int>(dims.size()); }
  int total_dim() const;
  int offset(int i) const;
  int parent_dim(int i) const;
  void validate() const;

  // Topological order 0..K-1; edge j -> i (j < i) kept with probability
  // p_edge; the self-edge i -> i is always present.
  static CausalGraph random_dag(std::vector<int> dims, double p_edge, Rng& rng);
};

struct MechanismSet {
  std::vector<DenseNet> nets;  // concatenated parent values -> mean of C_i
  std::vector<double> noise_scale;

  void validate(const CausalGraph& graph) const;

  // Two-layer swish nets. Each layer is rescaled to a fixed spectral norm so
  // every mechanism is Lipschitz with constant <= gain < 1 in its inputs.
  static MechanismSet random(const CausalGraph& graph, Rng& rng, double noise_scale = 0.1,
                             int hidden = 16, double gain = 0.9);
};

enum class InterventionKind { kHardResample, kShift };

std::string to_string(InterventionKind k);
InterventionKind intervention_kind_from_string(const std::string& s);

// Forces I_variable = 1 at `step` (>= 1). A non-empty value overrides the
// drawn value of a hard intervention.
struct ScheduledIntervention {
  int step = 1;
  int variable = 0;
  Eigen::VectorXd value;
};

struct InterventionPolicy {
  std::vector<double> probability;        // per variable
  std::vector<std::vector<int>> groups;   // disjoint; members share one target bit
  InterventionKind kind = InterventionKind::kHardResample;
  std::vector<double> low, high;          // hard-resample range, also the initial-state range
  std::vector<double> shift;              // soft-intervention mean shift
  std::vector<ScheduledIntervention> schedule;

  int num_variables() const { return static_cast<int>(probability.size()); }
  void validate(const CausalGraph& graph) const;
  // Group index of each variable, -1 when ungrouped.
  std::vector<int> group_of() const;

  static InterventionPolicy uniform(int num_variables, double probability, double low,
                                    double high);
};

struct ObservationModel {
  MapPtr mixing;
  double noise_std = 0.0;  // additive Gaussian U; zero keeps inversion exact

  int dim() const { return mixing ? mixing->dim() : 0; }
};

// Inverse of the mixing function; exact when noise_std == 0.
Eigen::VectorXd invert_observation(const ObservationModel& obs, const Eigen::VectorXd& x);

// Coordinates in which interventions act. The base process uses the identity.
class StateChart {
 public:
  virtual ~StateChart() = default;
  virtual void to_chart(Eigen::VectorXd& base_state) const = 0;
  virtual void to_base(Eigen::VectorXd& chart_state) const = 0;
};

struct CausalProcess {
  CausalGraph graph;
  MechanismSet mechanisms;
  InterventionPolicy policy;
  ObservationModel observation;
  // Chart coordinates of the first state; empty draws it from [low, high].
  Eigen::VectorXd initial_state;

  void validate() const;
};

struct Trajectory {
  Eigen::MatrixXd states;        // T x D, environment coordinates
  Eigen::MatrixXd base_states;   // T x D, underlying process coordinates
  Eigen::MatrixXd observations;  // T x D, mixing(base_states)
  Eigen::MatrixXi targets;       // T x K, 0/1; row 0 is zero
  std::vector<int> dims;
  std::uint64_t seed = 0;

  int length() const { return static_cast<int>(states.rows()); }
  int num_variables() const { return static_cast<int>(dims.size()); }
  int offset(int i) const;
  Eigen::MatrixXd variable(int i) const;  // T x M_i block of `states`
  // Rows [begin, end).
  Trajectory slice(int begin, int end) const;
};

// Noise, intervention values and targets come from separate streams derived
// from `seed`, and every variable draws on every step, so streams stay
// aligned across environments sharing a seed.
Trajectory sample_trajectory(const CausalProcess& process, int T, std::uint64_t seed,
                             const StateChart* chart = nullptr);
Trajectory sample_trajectory(const CausalGraph& graph, const MechanismSet& mech,
                             const InterventionPolicy& policy, const ObservationModel& obs, int T,
                             std::uint64_t seed);

// Empirical partial correlation of C_i^t and C_j^{t+1} given j's other
// parents, for every edge i -> j (first dims, non-intervened steps of j).
struct EdgeStrength {
  int from = 0;
  int to = 0;
  double partial_correlation = 0.0;
};
std::vector<EdgeStrength> edge_strengths(const CausalProcess& process, int samples,
                                         std::uint64_t seed);
// Edges whose |partial correlation| falls below min_abs; logged as warnings.
std::vector<std::string> faithfulness_warnings(const CausalProcess& process, int samples = 10000,
                                               std::uint64_t seed = 0, double min_abs = 0.02);

}  // namespace decaf
