#include "ultr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "ultr/common.hpp"
#include "ultr/text.hpp"

namespace ultr {
namespace {

// Divides by log2(r + 1) for 1-based rank r, exactly as the definition reads.

double dcg(std::span<const double> gains, std::size_t cutoff) {
  double s = 0.0;
  for (std::size_t r = 0; r < cutoff; ++r) s += gains[r] / std::log2(static_cast<double>(r) + 2.0);
  return s;
}

std::size_t cutoff_for(std::size_t n, int k) {
  if (k < 1) throw ValidationError("NDCG cutoff k must be >= 1");
  return std::min(n, static_cast<std::size_t>(k));
}

std::string metric_column(const EvalReport& r) { return r.metric + "@" + std::to_string(r.k); }

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::vector<std::size_t> ranking_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

double ndcg_at_k(std::span<const int> labels, int k) {
  const std::size_t cutoff = cutoff_for(labels.size(), k);
  std::vector<double> gains(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw ValidationError("NDCG labels must be non-negative");
    gains[i] = std::exp2(labels[i]) - 1.0;
  }
  std::vector<double> ideal = gains;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg(ideal, cutoff);
  if (idcg == 0.0) return 0.0;
  return dcg(gains, cutoff) / idcg;
}

double ndcg_with_gains(std::span<const double> gains, int k) {
  const std::size_t cutoff = cutoff_for(gains.size(), k);
  std::vector<double> ideal(gains.begin(), gains.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg(ideal, cutoff);
  if (idcg == 0.0) return 0.0;
  return dcg(gains, cutoff) / idcg;
}

std::string EvalReport::to_csv() const {
  std::string out = csv_row({"query_id", metric_column(*this)}) + "\n";
  for (std::size_t i = 0; i < per_query.size(); ++i) {
    out += csv_row({query_ids[i], format_double(per_query[i])}) + "\n";
  }
  return out;
}

nlohmann::json EvalReport::summary_json() const {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : comparisons) {
    comps.push_back({{"baseline", c.baseline},
                     {"delta", c.delta},
                     {"t", std::isfinite(c.t) ? nlohmann::json(c.t) : nlohmann::json(c.t > 0 ? "inf" : "-inf")},
                     {"p_value", c.p_value},
                     {"significant", c.significant}});
  }
  return nlohmann::json{{"metric", metric},
                        {"k", k},
                        {"num_queries", per_query.size()},
                        {"mean", mean},
                        {"comparisons", comps}};
}

EvalReport mean_ndcg(const QueryScorer& scorer, const Dataset& dataset, int k) {
  EvalReport report;
  report.metric = "ndcg";
  report.k = k;
  for (const auto& g : dataset.groups) {
    const std::vector<double> scores = scorer(g);
    if (scores.size() != g.size()) throw ValidationError("scorer returned the wrong number of scores");
    const auto order = ranking_order(scores);
    std::vector<int> labels(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) labels[r] = g.documents[order[r]].label;
    report.query_ids.push_back(g.query_id);
    report.per_query.push_back(ndcg_at_k(labels, k));
  }
  report.mean = mean_of(report.per_query);
  return report;
}

double PropensityTable::at(int position) const {
  if (position < 1) throw ValidationError("position must be >= 1");
  if (values.empty()) return 1.0;
  const auto idx = std::min(static_cast<std::size_t>(position), values.size()) - 1;
  return values[idx];
}

bool PropensityTable::any_missing() const {
  return std::any_of(missing.begin(), missing.end(), [](bool m) { return m; });
}

PropensityTable estimate_propensities(const ClickLog& log) {
  if (log.records.empty()) throw ValidationError("cannot estimate propensities from an empty click log");
  std::size_t max_pos = 0;
  for (const auto& r : log.records) max_pos = std::max(max_pos, r.logged.positions.size());
  PropensityTable t;
  t.clicks.assign(max_pos, 0);
  t.impressions.assign(max_pos, 0);
  for (const auto& r : log.records) {
    for (std::size_t i = 0; i < r.clicks.size(); ++i) {
      const auto p = static_cast<std::size_t>(r.logged.positions[i]) - 1;
      ++t.impressions[p];
      t.clicks[p] += r.clicks[i];
    }
  }
  if (t.impressions[0] == 0 || t.clicks[0] == 0) {
    throw ValidationError("position 1 has no clicks; propensities cannot be normalized");
  }
  const double top_rate = static_cast<double>(t.clicks[0]) / static_cast<double>(t.impressions[0]);
  t.values.resize(max_pos);
  t.missing.resize(max_pos);
  for (std::size_t p = 0; p < max_pos; ++p) {
    t.missing[p] = t.impressions[p] == 0;
    t.values[p] = t.missing[p] ? 1.0
                               : (static_cast<double>(t.clicks[p]) / static_cast<double>(t.impressions[p])) /
                                     top_rate;
  }
  return t;
}

EvalReport ips_ndcg_at_k(const QueryScorer& scorer, const Dataset& dataset, const ClickLog& log,
                         const PropensityTable& propensities, int k) {
  // query index -> accumulated inverse-propensity gains per document
  std::map<std::size_t, std::vector<double>> gains;
  for (const auto& r : log.records) {
    const std::size_t qi = r.logged.query_index;
    if (qi >= dataset.groups.size() || dataset.groups[qi].size() != r.clicks.size()) {
      throw ValidationError("click log does not align with the evaluation dataset");
    }
    auto& g = gains[qi];
    g.resize(r.clicks.size(), 0.0);
    for (std::size_t i = 0; i < r.clicks.size(); ++i) {
      if (r.clicks[i] != 0) {
        const double prop = propensities.at(r.logged.positions[i]);
        g[i] += prop > 0.0 ? 1.0 / prop : 0.0;
      }
    }
  }
  EvalReport report;
  report.metric = "ips_ndcg";
  report.k = k;
  for (const auto& [qi, doc_gains] : gains) {
    const QueryGroup& group = dataset.groups[qi];
    const std::vector<double> scores = scorer(group);
    const auto order = ranking_order(scores);
    std::vector<double> ranked(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) ranked[r] = doc_gains[order[r]];
    report.query_ids.push_back(group.query_id);
    report.per_query.push_back(ndcg_with_gains(ranked, k));
  }
  report.mean = mean_of(report.per_query);
  return report;
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ValidationError("incomplete beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  // The continued fraction converges fast for x < (a + 1) / (a + b + 2).
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incomplete_beta(b, a, 1.0 - x);

  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  constexpr double tiny = 1e-300;
  constexpr double tol = 1e-16;
  // Modified Lentz evaluation of the continued fraction.
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double f = d;
  for (int m = 1; m <= 1000; ++m) {
    const double m2 = 2.0 * m;
    double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    f *= d * c;
    num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    f *= delta;
    if (std::abs(delta - 1.0) < tol) break;
  }
  return std::exp(log_front) * f / a;
}

double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0.0)) throw ValidationError("t distribution needs positive degrees of freedom");
  if (std::isinf(t)) return 0.0;
  if (t == 0.0) return 1.0;
  return incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b, double alpha) {
  if (a.size() != b.size()) throw ValidationError("paired t-test: samples differ in length");
  if (a.size() < 2) throw ValidationError("paired t-test needs at least two pairs");
  const std::size_t n = a.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (a[i] - b[i]) - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  r.n = n;
  r.mean_difference = mean;
  if (sd == 0.0) {
    if (mean == 0.0) {
      r.t = 0.0;
      r.p_value = 1.0;
    } else {
      r.t = mean > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    }
  } else {
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    r.p_value = std::clamp(student_t_two_sided_p(r.t, static_cast<double>(n - 1)), 0.0, 1.0);
  }
  r.significant = r.p_value < alpha;
  return r;
}

}  // namespace ultr
