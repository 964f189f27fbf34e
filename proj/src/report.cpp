#include <fmt/format.h>
#include <fmt/ranges.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "decaf/errors.hpp"
#include "decaf/experiment.hpp"

namespace decaf {

namespace fs = std::filesystem;

namespace {

std::string number(double v) { return std::isnan(v) ? "NA" : fmt::format("{:.6f}", v); }

double parse_number(const std::string& s) {
  if (s == "NA") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw ContractViolation(fmt::format("scores csv: bad number '{}'", s));
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

// Mean and sample standard deviation in two passes.
std::pair<double, double> mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

constexpr const char* kScoresHeader = "seed,target_samples,baseline,metric,diag,off_diag,CC";

}  // namespace

bool ScoreRow::applicable() const { return !std::isnan(cc); }

IncompleteBundleError::IncompleteBundleError(std::vector<std::string> missing)
    : std::runtime_error(fmt::format("incomplete bundle, missing: {}", fmt::join(missing, ", "))),
      missing_(std::move(missing)) {}

std::string scores_csv(const std::vector<ScoreRow>& rows) {
  std::string out = std::string(kScoresHeader) + "\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{}\n", r.seed, r.target_samples, r.baseline, to_string(r.metric),
                       number(r.diag), number(r.off_diag), number(r.cc));
  }
  return out;
}

std::string per_variable_csv(const std::vector<ScoreRow>& rows) {
  std::string out = "seed,target_samples,baseline,metric,variable,diag\n";
  for (const auto& r : rows) {
    for (std::size_t v = 0; v < r.variables.size() && v < r.per_variable.size(); ++v) {
      out += fmt::format("{},{},{},{},{},{}\n", r.seed, r.target_samples, r.baseline, to_string(r.metric),
                         r.variables[v], number(r.per_variable[v]));
    }
  }
  return out;
}

std::vector<ScoreRow> parse_scores_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line) || line != kScoresHeader) throw ContractViolation("scores csv: unexpected header");
  std::vector<ScoreRow> rows;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto c = split(line);
    if (c.size() != 7) throw ContractViolation(fmt::format("scores csv: row '{}' has {} cells", line, c.size()));
    rows.push_back({std::stoull(c[0]), std::stoi(c[1]), c[2], metric_from_string(c[3]), parse_number(c[4]),
                    parse_number(c[5]), parse_number(c[6]), {}, {}});
  }
  return rows;
}

std::vector<SummaryRow> summarize(const std::vector<ScoreRow>& rows) {
  std::vector<SummaryRow> out;
  std::vector<std::vector<const ScoreRow*>> members;
  for (const auto& r : rows) {
    std::size_t g = 0;
    while (g < out.size() && !(out[g].baseline == r.baseline && out[g].metric == r.metric &&
                               out[g].target_samples == r.target_samples))
      ++g;
    if (g == out.size()) {
      SummaryRow s;
      s.baseline = r.baseline;
      s.metric = r.metric;
      s.target_samples = r.target_samples;
      out.push_back(s);
      members.emplace_back();
    }
    if (r.applicable()) members[g].push_back(&r);
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    SummaryRow& s = out[g];
    s.n = static_cast<int>(members[g].size());
    if (s.n == 0) {
      s.diag_mean = s.diag_std = s.off_diag_mean = s.off_diag_std = s.cc_mean = s.cc_std =
          std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    std::vector<double> d, o, c;
    for (const ScoreRow* r : members[g]) {
      d.push_back(r->diag);
      o.push_back(r->off_diag);
      c.push_back(r->cc);
    }
    std::tie(s.diag_mean, s.diag_std) = mean_std(d);
    std::tie(s.off_diag_mean, s.off_diag_std) = mean_std(o);
    std::tie(s.cc_mean, s.cc_std) = mean_std(c);
  }
  return out;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out =
      "baseline,metric,target_samples,n,diag_mean,diag_std,off_diag_mean,off_diag_std,CC_mean,CC_std\n";
  for (const auto& s : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", s.baseline, to_string(s.metric), s.target_samples, s.n,
                       number(s.diag_mean), number(s.diag_std), number(s.off_diag_mean), number(s.off_diag_std),
                       number(s.cc_mean), number(s.cc_std));
  }
  return out;
}

std::string plot_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "target_samples,baseline,metric,CC_mean,CC_std\n";
  std::vector<const SummaryRow*> sorted;
  for (const auto& s : rows) sorted.push_back(&s);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const SummaryRow* a, const SummaryRow* b) { return a->target_samples < b->target_samples; });
  for (const SummaryRow* s : sorted) {
    out += fmt::format("{},{},{},{},{}\n", s->target_samples, s->baseline, to_string(s->metric), number(s->cc_mean),
                       number(s->cc_std));
  }
  return out;
}

ReportFiles emit_report(const fs::path& dir) {
  std::vector<std::string> missing;
  if (!fs::is_directory(dir)) throw IncompleteBundleError({dir.string()});
  const fs::path config_path = dir / "config.json";
  const fs::path scores_path = dir / "scores.csv";
  if (!fs::exists(config_path)) missing.push_back("config.json");
  if (!fs::exists(scores_path)) missing.push_back("scores.csv");
  std::optional<ExperimentConfig> config;
  if (fs::exists(config_path)) {
    config = load_config(config_path);
    for (auto s : config->seeds) {
      const fs::path seed_scores = dir / fmt::format("seed-{}", s) / "scores.csv";
      if (!fs::exists(seed_scores)) missing.push_back(fs::relative(seed_scores, dir).string());
    }
  }
  if (!missing.empty()) throw IncompleteBundleError(missing);

  const std::vector<ScoreRow> rows = parse_scores_csv(read_file(scores_path));
  std::set<std::uint64_t> seen;
  for (const auto& r : rows) seen.insert(r.seed);
  for (auto s : config->seeds)
    if (!seen.count(s)) missing.push_back(fmt::format("scores.csv rows for seed {}", s));
  if (!missing.empty()) throw IncompleteBundleError(missing);

  const auto summary = summarize(rows);
  ReportFiles files;
  files.summary = dir / "summary.csv";
  std::ofstream(files.summary, std::ios::binary) << summary_csv(summary);
  std::set<int> budgets;
  for (const auto& r : rows) budgets.insert(r.target_samples);
  if (budgets.size() > 1) {
    files.plot = dir / "plot.csv";
    std::ofstream(*files.plot, std::ios::binary) << plot_csv(summary);
  }
  return files;
}

}  // namespace decaf
