#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace decaf {

enum class MetricKind { kR2, kSpearman };

std::string to_string(MetricKind m);
MetricKind metric_from_string(const std::string& s);

// 1 - SS_res / SS_tot. Throws UndefinedStatisticError for constant truth.
double r_squared(std::span<const double> predicted, std::span<const double> truth);

// Ranks starting at 1; ties share their average rank.
Eigen::VectorXd average_ranks(std::span<const double> x);
double pearson(std::span<const double> x, std::span<const double> y);
// Pearson correlation of average ranks. Needs T >= 3 and non-constant inputs.
double spearman(std::span<const double> x, std::span<const double> y);

// 2 d (1 - o) / (d + 1 - o); zero when the denominator vanishes.
double combined_correlation(double diag, double off_diag);

// Entry (b, j): similarity of learned block b to truth variable j. Spearman
// uses |rho| and R2 the OLS fit of the truth from one latent dim; both take
// the max over the block's dims against the truth's first dim. Constant
// latent dims score 0.
Eigen::MatrixXd similarity_table(const std::vector<Eigen::MatrixXd>& blocks,
                                 const std::vector<Eigen::MatrixXd>& truth, MetricKind metric);

struct CorrelationMatrix {
  Eigen::MatrixXd values;    // K x K: row j holds the block matched to truth j
  std::vector<int> matching;  // truth j -> block index, -1 when unmatched
};

struct ScoreSummary {
  MetricKind metric = MetricKind::kSpearman;
  double diag = 0.0;
  double off_diag = 0.0;
  double cc = 0.0;
  std::vector<double> per_variable;  // matched value per truth variable
  std::vector<int> unmatched;        // truth variables without a block
};

// Greedy matching on a precomputed table (B x K): highest value first, each
// block and truth variable used once, ties to the lower (block, truth) pair.
std::pair<CorrelationMatrix, ScoreSummary> match_table(const Eigen::MatrixXd& table,
                                                       MetricKind metric);

std::pair<CorrelationMatrix, ScoreSummary> match_and_score(
    const std::vector<Eigen::MatrixXd>& blocks, const std::vector<Eigen::MatrixXd>& truth,
    MetricKind metric);

}  // namespace decaf
