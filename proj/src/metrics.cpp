#include "decaf/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "decaf/errors.hpp"

namespace decaf {

std::string to_string(MetricKind m) { return m == MetricKind::kR2 ? "r2" : "spearman"; }

MetricKind metric_from_string(const std::string& s) {
  if (s == "r2") return MetricKind::kR2;
  if (s == "spearman") return MetricKind::kSpearman;
  throw ContractViolation(fmt::format("unknown metric '{}'", s));
}

namespace {

void check_lengths(std::size_t a, std::size_t b, std::size_t min_len, const char* what) {
  if (a != b) throw ContractViolation(fmt::format("{}: length mismatch {} vs {}", what, a, b));
  if (a < min_len) throw ContractViolation(fmt::format("{}: need at least {} values", what, min_len));
}

bool is_constant(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; });
}

std::span<const double> col_span(const Eigen::MatrixXd& m, Eigen::Index c) {
  return {m.col(c).data(), static_cast<std::size_t>(m.rows())};
}

}  // namespace

double r_squared(std::span<const double> predicted, std::span<const double> truth) {
  check_lengths(predicted.size(), truth.size(), 2, "r_squared");
  if (is_constant(truth)) throw UndefinedStatisticError("r_squared: truth is constant");
  const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / truth.size();
  double ss_res = 0, ss_tot = 0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    ss_res += (truth[t] - predicted[t]) * (truth[t] - predicted[t]);
    ss_tot += (truth[t] - mean) * (truth[t] - mean);
  }
  return 1.0 - ss_res / ss_tot;
}

Eigen::VectorXd average_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  Eigen::VectorXd ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks(order[k]) = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  check_lengths(x.size(), y.size(), 2, "pearson");
  if (is_constant(x) || is_constant(y)) throw UndefinedStatisticError("pearson: constant input");
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), x.size()), yv(y.data(), y.size());
  const Eigen::VectorXd xc = xv.array() - xv.mean();
  const Eigen::VectorXd yc = yv.array() - yv.mean();
  const double r = xc.dot(yc) / std::sqrt(xc.squaredNorm() * yc.squaredNorm());
  return std::clamp(r, -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_lengths(x.size(), y.size(), 3, "spearman");
  if (is_constant(x) || is_constant(y)) throw UndefinedStatisticError("spearman: constant input has no ranking");
  const Eigen::VectorXd rx = average_ranks(x), ry = average_ranks(y);
  return pearson({rx.data(), static_cast<std::size_t>(rx.size())},
                 {ry.data(), static_cast<std::size_t>(ry.size())});
}

double combined_correlation(double diag, double off_diag) {
  // Harmonic mean of diag and 1 - off_diag.
  const double q = 1.0 - off_diag;
  if (diag == 0.0 || q == 0.0) return 0.0;
  return 2.0 / (1.0 / diag + 1.0 / q);
}

Eigen::MatrixXd similarity_table(const std::vector<Eigen::MatrixXd>& blocks,
                                 const std::vector<Eigen::MatrixXd>& truth, MetricKind metric) {
  if (truth.empty()) throw ContractViolation("similarity_table: no truth variables");
  const Eigen::Index n = truth.front().rows();
  for (const auto& t : truth)
    if (t.rows() != n || t.cols() == 0) throw ContractViolation("similarity_table: ragged truth");
  for (const auto& b : blocks)
    if (b.rows() != n) throw ContractViolation("similarity_table: block length differs from truth");

  // Ranks are computed once per column.
  std::vector<Eigen::VectorXd> truth_cols;
  for (const auto& t : truth) {
    if (is_constant(col_span(t, 0))) throw UndefinedStatisticError("similarity_table: constant truth variable");
    truth_cols.push_back(metric == MetricKind::kSpearman ? average_ranks(col_span(t, 0)) : Eigen::VectorXd(t.col(0)));
  }
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(blocks.size()),
                                                static_cast<Eigen::Index>(truth.size()));
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (Eigen::Index d = 0; d < blocks[b].cols(); ++d) {
      if (is_constant(col_span(blocks[b], d))) continue;
      const Eigen::VectorXd z = metric == MetricKind::kSpearman ? average_ranks(col_span(blocks[b], d))
                                                                : Eigen::VectorXd(blocks[b].col(d));
      for (std::size_t j = 0; j < truth.size(); ++j) {
        const double r = pearson({z.data(), static_cast<std::size_t>(n)},
                                 {truth_cols[j].data(), static_cast<std::size_t>(n)});
        // OLS of truth on one regressor with intercept has R2 = r^2.
        const double v = metric == MetricKind::kSpearman ? std::abs(r) : r * r;
        table(b, j) = std::max(table(b, j), v);
      }
    }
  }
  return table;
}

std::pair<CorrelationMatrix, ScoreSummary> match_table(const Eigen::MatrixXd& table,
                                                       MetricKind metric) {
  const int nb = static_cast<int>(table.rows());
  const int k = static_cast<int>(table.cols());
  if (k == 0) throw ContractViolation("match_table: no truth variables");

  std::vector<std::tuple<double, int, int>> pairs;
  for (int b = 0; b < nb; ++b)
    for (int j = 0; j < k; ++j) pairs.emplace_back(table(b, j), b, j);
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& c) {
    if (std::get<0>(a) != std::get<0>(c)) return std::get<0>(a) > std::get<0>(c);
    return std::tie(std::get<1>(a), std::get<2>(a)) < std::tie(std::get<1>(c), std::get<2>(c));
  });

  CorrelationMatrix cm;
  cm.matching.assign(k, -1);
  std::vector<char> block_used(nb, 0);
  for (const auto& [v, b, j] : pairs) {
    if (block_used[b] || cm.matching[j] >= 0) continue;
    block_used[b] = 1;
    cm.matching[j] = b;
  }

  cm.values = Eigen::MatrixXd::Zero(k, k);
  ScoreSummary s;
  s.metric = metric;
  s.per_variable.assign(k, 0.0);
  double off_sum = 0;
  int matched = 0;
  for (int j = 0; j < k; ++j) {
    if (cm.matching[j] < 0) {
      s.unmatched.push_back(j);
      continue;
    }
    cm.values.row(j) = table.row(cm.matching[j]);
    s.per_variable[j] = cm.values(j, j);
    double row_max = 0;
    for (int c = 0; c < k; ++c)
      if (c != j) row_max = std::max(row_max, std::abs(cm.values(j, c)));
    off_sum += row_max;
    ++matched;
  }
  s.diag = std::accumulate(s.per_variable.begin(), s.per_variable.end(), 0.0) / k;
  s.off_diag = matched > 0 ? off_sum / matched : 0.0;
  s.cc = combined_correlation(s.diag, s.off_diag);
  return {cm, s};
}

std::pair<CorrelationMatrix, ScoreSummary> match_and_score(
    const std::vector<Eigen::MatrixXd>& blocks, const std::vector<Eigen::MatrixXd>& truth,
    MetricKind metric) {
  return match_table(similarity_table(blocks, truth, metric), metric);
}

}  // namespace decaf
