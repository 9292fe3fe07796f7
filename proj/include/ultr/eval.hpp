#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ultr/clicksim.hpp"
#include "ultr/dataset.hpp"

namespace ultr {

/// Scores the documents of one query; higher ranks first.
using QueryScorer = std::function<std::vector<double>(const QueryGroup&)>;

/// Document indices by descending score, ties broken by lower index.
std::vector<std::size_t> ranking_order(std::span<const double> scores);

/// Gain 2^y - 1, discount 1 / log2(r + 1), normalized by the ideal ordering.
/// Returns 0 when every label is 0.
double ndcg_at_k(std::span<const int> labels_in_ranked_order, int k);

/// Same discounting with caller-supplied linear gains.
double ndcg_with_gains(std::span<const double> gains_in_ranked_order, int k);

struct Comparison {
  std::string baseline;
  double delta = 0.0;  // mean(this) - mean(baseline)
  double t = 0.0;
  double p_value = 1.0;
  bool significant = false;
};

struct EvalReport {
  std::string metric;  // "ndcg" or "ips_ndcg"
  int k = 5;
  std::vector<std::string> query_ids;
  std::vector<double> per_query;
  double mean = 0.0;
  std::vector<Comparison> comparisons;

  /// query_id,<metric>@k with one row per query.
  std::string to_csv() const;
  nlohmann::json summary_json() const;
};

EvalReport mean_ndcg(const QueryScorer& scorer, const Dataset& dataset, int k);

struct PropensityTable {
  std::vector<double> values;  // index p - 1
  std::vector<std::size_t> clicks;
  std::vector<std::size_t> impressions;
  std::vector<bool> missing;  // no impressions: value defaulted to 1.0

  /// Positions past the table use its last entry.
  double at(int position) const;
  bool any_missing() const;
};

PropensityTable estimate_propensities(const ClickLog& log);

/// Per query, gain of a document = total clicks / propensity(logged position)
/// summed over the query's sessions, ranked by the scorer.
EvalReport ips_ndcg_at_k(const QueryScorer& scorer, const Dataset& dataset, const ClickLog& log,
                         const PropensityTable& propensities, int k);

struct TTestResult {
  double t = 0.0;
  double p_value = 1.0;
  bool significant = false;
  double mean_difference = 0.0;
  std::size_t n = 0;
};

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);
/// Two-sided tail probability P(|T| >= |t|) for Student's t with `dof`.
double student_t_two_sided_p(double t, double dof);

/// Two-sided paired t-test on a - b.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b, double alpha = 0.05);

}  // namespace ultr
