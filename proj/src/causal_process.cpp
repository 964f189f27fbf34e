#include "decaf/causal_process.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "decaf/errors.hpp"

namespace decaf {

namespace {

// Stream tags for sample_trajectory.
constexpr std::uint64_t kTargetStream = 1;
constexpr std::uint64_t kNoiseStream = 2;
constexpr std::uint64_t kValueStream = 3;
constexpr std::uint64_t kObservationStream = 4;
constexpr std::uint64_t kInitialStream = 5;

void rescale_to_spectral_norm(Eigen::Map<Eigen::MatrixXd> w, double target) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(w);
  const double norm = svd.singularValues()(0);
  if (norm > 0) w *= target / norm;
}

}  // namespace

int CausalGraph::total_dim() const { return std::accumulate(dims.begin(), dims.end(), 0); }

int CausalGraph::offset(int i) const {
  return std::accumulate(dims.begin(), dims.begin() + i, 0);
}

int CausalGraph::parent_dim(int i) const {
  int d = 0;
  for (int p : parents[i]) d += dims[p];
  return d;
}

void CausalGraph::validate() const {
  const int k = num_variables();
  if (k == 0) throw ContractViolation("CausalGraph: no variables");
  if (static_cast<int>(parents.size()) != k) {
    throw ContractViolation(
        fmt::format("CausalGraph: {} parent lists for {} variables", parents.size(), k));
  }
  for (int i = 0; i < k; ++i) {
    if (dims[i] <= 0) throw ContractViolation(fmt::format("CausalGraph: variable {} has dim {}", i, dims[i]));
    if (parents[i].empty()) {
      throw ContractViolation(fmt::format("CausalGraph: variable {} has no lagged parents", i));
    }
    for (std::size_t p = 0; p < parents[i].size(); ++p) {
      const int v = parents[i][p];
      if (v < 0 || v >= k) throw ContractViolation(fmt::format("CausalGraph: bad parent {} of {}", v, i));
      if (p > 0 && parents[i][p - 1] >= v) {
        throw ContractViolation(fmt::format("CausalGraph: parents of {} not strictly ascending", i));
      }
    }
  }
}

CausalGraph CausalGraph::random_dag(std::vector<int> dims, double p_edge, Rng& rng) {
  CausalGraph g;
  const int k = static_cast<int>(dims.size());
  g.dims = std::move(dims);
  g.parents.resize(k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < i; ++j)
      if (bernoulli(rng, p_edge)) g.parents[i].push_back(j);
    g.parents[i].push_back(i);
  }
  g.validate();
  return g;
}

void MechanismSet::validate(const CausalGraph& graph) const {
  const int k = graph.num_variables();
  if (static_cast<int>(nets.size()) != k || static_cast<int>(noise_scale.size()) != k) {
    throw ContractViolation(fmt::format("MechanismSet: expected {} mechanisms", k));
  }
  for (int i = 0; i < k; ++i) {
    if (nets[i].input_dim() != graph.parent_dim(i) || nets[i].output_dim() != graph.dims[i]) {
      throw ContractViolation(fmt::format(
          "MechanismSet: mechanism {} maps {} -> {}, graph needs {} -> {}", i, nets[i].input_dim(),
          nets[i].output_dim(), graph.parent_dim(i), graph.dims[i]));
    }
    if (!(noise_scale[i] >= 0)) throw ContractViolation(fmt::format("MechanismSet: noise scale {} < 0", i));
  }
}

MechanismSet MechanismSet::random(const CausalGraph& graph, Rng& rng, double noise_scale,
                                  int hidden, double gain) {
  graph.validate();
  if (!(gain > 0 && gain < 1)) throw ContractViolation("MechanismSet::random: gain must be in (0,1)");
  // Swish has Lipschitz constant ~1.0998.
  constexpr double kSwishLipschitz = 1.0998;
  MechanismSet m;
  for (int i = 0; i < graph.num_variables(); ++i) {
    DenseNet net = DenseNet::random({graph.parent_dim(i), hidden, graph.dims[i]}, Activation::kSwish, rng);
    rescale_to_spectral_norm(net.weight(0), 1.0);
    rescale_to_spectral_norm(net.weight(1), gain / kSwishLipschitz);
    for (int c = 0; c < hidden; ++c) net.bias(0)(0, c) = uniform(rng, -1.0, 1.0);
    for (int c = 0; c < graph.dims[i]; ++c) net.bias(1)(0, c) = uniform(rng, -0.5, 0.5);
    m.nets.push_back(std::move(net));
    m.noise_scale.push_back(noise_scale);
  }
  return m;
}

std::string to_string(InterventionKind k) {
  return k == InterventionKind::kHardResample ? "hard-resample" : "shift";
}

InterventionKind intervention_kind_from_string(const std::string& s) {
  if (s == "hard-resample") return InterventionKind::kHardResample;
  if (s == "shift") return InterventionKind::kShift;
  throw ContractViolation(fmt::format("unknown intervention kind '{}'", s));
}

void InterventionPolicy::validate(const CausalGraph& graph) const {
  const int k = graph.num_variables();
  auto sized = [k](const std::vector<double>& v) { return static_cast<int>(v.size()) == k; };
  if (!sized(probability) || !sized(low) || !sized(high) || !sized(shift)) {
    throw ContractViolation(fmt::format("InterventionPolicy: per-variable vectors must have size {}", k));
  }
  for (int i = 0; i < k; ++i) {
    if (!(probability[i] >= 0 && probability[i] <= 1)) {
      throw ContractViolation(fmt::format("InterventionPolicy: probability of {} outside [0,1]", i));
    }
    if (!(low[i] <= high[i])) throw ContractViolation(fmt::format("InterventionPolicy: low > high for {}", i));
  }
  std::vector<int> seen(k, 0);
  for (const auto& g : groups) {
    if (g.empty()) throw ContractViolation("InterventionPolicy: empty group");
    for (int v : g) {
      if (v < 0 || v >= k) throw ContractViolation(fmt::format("InterventionPolicy: bad group member {}", v));
      if (seen[v]++) throw ContractViolation(fmt::format("InterventionPolicy: variable {} in two groups", v));
    }
  }
  for (const auto& s : schedule) {
    if (s.step < 1) throw ContractViolation("InterventionPolicy: scheduled step must be >= 1");
    if (s.variable < 0 || s.variable >= k) throw ContractViolation("InterventionPolicy: bad scheduled variable");
    if (s.value.size() != 0 && s.value.size() != graph.dims[s.variable]) {
      throw ContractViolation("InterventionPolicy: scheduled value has wrong dimension");
    }
  }
}

std::vector<int> InterventionPolicy::group_of() const {
  std::vector<int> out(probability.size(), -1);
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (int v : groups[g]) out[v] = static_cast<int>(g);
  return out;
}

InterventionPolicy InterventionPolicy::uniform(int num_variables, double probability, double low,
                                               double high) {
  InterventionPolicy p;
  p.probability.assign(num_variables, probability);
  p.low.assign(num_variables, low);
  p.high.assign(num_variables, high);
  p.shift.assign(num_variables, 0.0);
  return p;
}

Eigen::VectorXd invert_observation(const ObservationModel& obs, const Eigen::VectorXd& x) {
  if (!obs.mixing) throw ContractViolation("invert_observation: no mixing configured");
  return obs.mixing->inverse(x);
}

void CausalProcess::validate() const {
  graph.validate();
  mechanisms.validate(graph);
  policy.validate(graph);
  if (!observation.mixing) throw ContractViolation("CausalProcess: no mixing configured");
  if (observation.dim() != graph.total_dim()) {
    throw ContractViolation(fmt::format("CausalProcess: mixing dim {} != causal dim {}",
                                        observation.dim(), graph.total_dim()));
  }
  if (!(observation.noise_std >= 0)) throw ContractViolation("CausalProcess: negative observation noise");
  if (initial_state.size() != 0 && initial_state.size() != graph.total_dim()) {
    throw ContractViolation("CausalProcess: initial state has wrong dimension");
  }
}

int Trajectory::offset(int i) const { return std::accumulate(dims.begin(), dims.begin() + i, 0); }

Eigen::MatrixXd Trajectory::variable(int i) const {
  if (i < 0 || i >= num_variables()) throw ContractViolation(fmt::format("Trajectory: bad variable {}", i));
  return states.middleCols(offset(i), dims[i]);
}

Trajectory Trajectory::slice(int begin, int end) const {
  if (begin < 0 || end > length() || begin >= end) {
    throw ContractViolation(fmt::format("Trajectory::slice: bad range [{}, {})", begin, end));
  }
  Trajectory out;
  out.states = states.middleRows(begin, end - begin);
  out.base_states = base_states.middleRows(begin, end - begin);
  out.observations = observations.middleRows(begin, end - begin);
  out.targets = targets.middleRows(begin, end - begin);
  out.dims = dims;
  out.seed = seed;
  return out;
}

Trajectory sample_trajectory(const CausalProcess& process, int T, std::uint64_t seed,
                             const StateChart* chart) {
  if (T < 2) throw ContractViolation(fmt::format("sample_trajectory: T must be >= 2, got {}", T));
  process.validate();
  const CausalGraph& g = process.graph;
  const InterventionPolicy& pol = process.policy;
  const int k = g.num_variables();
  const int d = g.total_dim();

  std::vector<int> off(k);
  for (int i = 0; i < k; ++i) off[i] = g.offset(i);
  const std::vector<int> group = pol.group_of();

  Rng target_rng = make_rng(seed, kTargetStream);
  Rng noise_rng = make_rng(seed, kNoiseStream);
  Rng value_rng = make_rng(seed, kValueStream);
  Rng obs_rng = make_rng(seed, kObservationStream);
  Rng init_rng = make_rng(seed, kInitialStream);

  Trajectory traj;
  traj.states.resize(T, d);
  traj.base_states.resize(T, d);
  traj.observations.resize(T, d);
  traj.targets = Eigen::MatrixXi::Zero(T, k);
  traj.dims = g.dims;
  traj.seed = seed;

  auto observe = [&](int t, const Eigen::VectorXd& base) {
    Eigen::VectorXd x = process.observation.mixing->forward(base);
    if (process.observation.noise_std > 0)
      for (int c = 0; c < d; ++c) x(c) += process.observation.noise_std * std_normal(obs_rng);
    traj.observations.row(t) = x.transpose();
  };

  Eigen::VectorXd env(d);
  if (process.initial_state.size() == d) {
    env = process.initial_state;
  } else {
    for (int i = 0; i < k; ++i)
      for (int c = 0; c < g.dims[i]; ++c) env(off[i] + c) = uniform(init_rng, pol.low[i], pol.high[i]);
  }
  Eigen::VectorXd base = env;
  if (chart) chart->to_base(base);
  traj.states.row(0) = env.transpose();
  traj.base_states.row(0) = base.transpose();
  observe(0, base);

  std::vector<double> parent_buf;
  std::vector<int> bits(k);
  std::vector<int> group_bits(pol.groups.size());
  Eigen::VectorXd proposal(d), values(d);
  std::size_t next_sched = 0;
  std::vector<ScheduledIntervention> sched = pol.schedule;
  std::stable_sort(sched.begin(), sched.end(),
                   [](const auto& a, const auto& b) { return a.step < b.step; });

  for (int t = 1; t < T; ++t) {
    // Target bits: one Bernoulli per group (probability of its first member)
    // and one per ungrouped variable, in variable order.
    std::fill(group_bits.begin(), group_bits.end(), -1);
    for (int i = 0; i < k; ++i) {
      if (group[i] < 0) {
        bits[i] = bernoulli(target_rng, pol.probability[i]);
      } else {
        int& gb = group_bits[group[i]];
        if (gb < 0) gb = bernoulli(target_rng, pol.probability[pol.groups[group[i]].front()]);
        bits[i] = gb;
      }
    }
    std::vector<const ScheduledIntervention*> forced;
    while (next_sched < sched.size() && sched[next_sched].step < t) ++next_sched;
    for (std::size_t s = next_sched; s < sched.size() && sched[s].step == t; ++s) {
      forced.push_back(&sched[s]);
      const int v = sched[s].variable;
      if (group[v] < 0) {
        bits[v] = 1;
      } else {
        for (int m : pol.groups[group[v]]) bits[m] = 1;
      }
    }

    // Observational proposal in base coordinates.
    for (int i = 0; i < k; ++i) {
      parent_buf.clear();
      for (int p : g.parents[i])
        for (int c = 0; c < g.dims[p]; ++c) parent_buf.push_back(base(off[p] + c));
      Eigen::VectorXd mean = process.mechanisms.nets[i].forward(parent_buf);
      for (int c = 0; c < g.dims[i]; ++c)
        proposal(off[i] + c) = mean(c) + process.mechanisms.noise_scale[i] * std_normal(noise_rng);
    }
    for (int i = 0; i < k; ++i)
      for (int c = 0; c < g.dims[i]; ++c) values(off[i] + c) = uniform(value_rng, pol.low[i], pol.high[i]);

    env = proposal;
    if (chart) chart->to_chart(env);
    for (int i = 0; i < k; ++i) {
      if (!bits[i]) continue;
      for (int c = 0; c < g.dims[i]; ++c) {
        if (pol.kind == InterventionKind::kHardResample) {
          env(off[i] + c) = values(off[i] + c);
        } else {
          env(off[i] + c) += pol.shift[i];
        }
      }
    }
    for (const auto* f : forced) {
      if (f->value.size() != 0) env.segment(off[f->variable], g.dims[f->variable]) = f->value;
    }
    base = env;
    if (chart) chart->to_base(base);

    traj.states.row(t) = env.transpose();
    traj.base_states.row(t) = base.transpose();
    for (int i = 0; i < k; ++i) traj.targets(t, i) = bits[i];
    observe(t, base);
  }
  return traj;
}

Trajectory sample_trajectory(const CausalGraph& graph, const MechanismSet& mech,
                             const InterventionPolicy& policy, const ObservationModel& obs, int T,
                             std::uint64_t seed) {
  CausalProcess p{graph, mech, policy, obs, {}};
  return sample_trajectory(p, T, seed);
}

namespace {

Eigen::VectorXd ols_residual(const Eigen::MatrixXd& design, const Eigen::VectorXd& y) {
  Eigen::VectorXd beta = design.colPivHouseholderQr().solve(y);
  return y - design * beta;
}

double correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd ac = a.array() - a.mean();
  const Eigen::VectorXd bc = b.array() - b.mean();
  const double den = std::sqrt(ac.squaredNorm() * bc.squaredNorm());
  return den > 0 ? ac.dot(bc) / den : 0.0;
}

}  // namespace

std::vector<EdgeStrength> edge_strengths(const CausalProcess& process, int samples,
                                         std::uint64_t seed) {
  const Trajectory traj = sample_trajectory(process, samples + 1, seed);
  const CausalGraph& g = process.graph;
  std::vector<EdgeStrength> out;
  for (int j = 0; j < g.num_variables(); ++j) {
    std::vector<int> rows;
    for (int t = 0; t + 1 < traj.length(); ++t)
      if (!traj.targets(t + 1, j)) rows.push_back(t);
    const int n = static_cast<int>(rows.size());
    for (int i : g.parents[j]) {
      int width = 1;
      for (int p : g.parents[j])
        if (p != i) width += g.dims[p];
      Eigen::MatrixXd design(n, width);
      Eigen::VectorXd x(n), y(n);
      for (int r = 0; r < n; ++r) {
        const int t = rows[r];
        design(r, 0) = 1.0;
        int c = 1;
        for (int p : g.parents[j]) {
          if (p == i) continue;
          for (int m = 0; m < g.dims[p]; ++m) design(r, c++) = traj.base_states(t, g.offset(p) + m);
        }
        x(r) = traj.base_states(t, g.offset(i));
        y(r) = traj.base_states(t + 1, g.offset(j));
      }
      out.push_back({i, j, correlation(ols_residual(design, x), ols_residual(design, y))});
    }
  }
  return out;
}

std::vector<std::string> faithfulness_warnings(const CausalProcess& process, int samples,
                                               std::uint64_t seed, double min_abs) {
  std::vector<std::string> warnings;
  for (const auto& e : edge_strengths(process, samples, seed)) {
    if (std::abs(e.partial_correlation) < min_abs) {
      warnings.push_back(fmt::format("edge {} -> {} is nearly unfaithful (partial correlation {:.4f})",
                                     e.from, e.to, e.partial_correlation));
      spdlog::warn("{}", warnings.back());
    }
  }
  return warnings;
}

}  // namespace decaf
