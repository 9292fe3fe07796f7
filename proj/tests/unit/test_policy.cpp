#include <cmath>
#include <numeric>

#include "doctest.h"
#include "ultr/dataset.hpp"
#include "ultr/policy.hpp"

using namespace ultr;

namespace {

QueryGroup group_with_labels(std::vector<int> labels) {
  QueryGroup g;
  g.query_id = "q";
  for (int y : labels) g.documents.push_back({{0.0}, y});
  return g;
}

Dataset synthetic(std::size_t queries, std::size_t docs) {
  SynthConfig cfg;
  cfg.num_queries = queries;
  cfg.docs_per_query = docs;
  cfg.dim = 8;
  return generate_synthetic(cfg);
}

double kendall_tau(const std::vector<int>& positions, const std::vector<int>& labels) {
  double concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = i + 1; j < labels.size(); ++j) {
      const double a = -(positions[i] - positions[j]);
      const double b = labels[i] - labels[j];
      if (a * b > 0) concordant += 1;
      if (a * b < 0) discordant += 1;
    }
  }
  const double n = labels.size() * (labels.size() - 1) / 2.0;
  return (concordant - discordant) / n;
}

}  // namespace

TEST_CASE("score: weighted sum of label and uniform noise") {
  Rng rng(3);
  const auto oracle = score_documents(group_with_labels({1, 4, 2}), LoggingPolicy::oracle(), rng);
  CHECK(oracle == std::vector<double>{1, 4, 2});

  Rng a(11), b(11);
  const auto random = score_documents(group_with_labels({1, 4, 2}), LoggingPolicy::random(), a);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  for (double s : random) CHECK(s == u(b));

  // w = 0.5, label 2: score = 1 + noise / 2, with the noise replayed from a twin stream.
  Rng c(4), d(4);
  const double noise = u(d);
  CHECK(score_documents(group_with_labels({2}), LoggingPolicy{0.5}, c)[0] == 0.5 * 2 + 0.5 * noise);
}

TEST_CASE("positions: descending score with stable ties") {
  CHECK(assign_positions(std::vector<double>{0.2, 0.9, 0.5}).positions == std::vector<int>{3, 1, 2});
  CHECK(assign_positions(std::vector<double>{0.5, 0.5}).positions == std::vector<int>{1, 2});
  CHECK(assign_positions(std::vector<double>{7.0}).positions == std::vector<int>{1});
  const auto q = assign_positions(std::vector<double>{0.2, 0.9, 0.5});
  CHECK(q.doc_indices == std::vector<std::size_t>{1, 2, 0});
  CHECK_THROWS(assign_positions(std::vector<double>{0.1, std::nan("")}));
}

TEST_CASE("policy: validation and presets") {
  CHECK_THROWS(LoggingPolicy{1.5}.validate());
  CHECK_THROWS(LoggingPolicy{0.5, 4.0, 0.0}.validate());
  CHECK(policy_preset("oracle").w == 1.0);
  CHECK(policy_preset("l1").w == 0.8);
  CHECK(policy_preset("l2").w == 0.6);
  CHECK(policy_preset("l3").w == 0.2);
  CHECK(policy_preset("random").w == 0.0);
  CHECK_THROWS_AS(policy_preset("best"), ConfigError);
  CHECK(policy_label(0.8) == "l1");
  CHECK(policy_label(0.5) == "w=0.5");
}

TEST_CASE("apply_policy: oracle orders by label, deterministic, permutation") {
  const Dataset d = synthetic(40, 12);
  LoggingPolicy p = LoggingPolicy::oracle();
  p.seed = 5;
  const auto logged = apply_policy(d, p);
  CHECK(logged == apply_policy(d, p));
  for (std::size_t q = 0; q < d.groups.size(); ++q) {
    const auto& g = d.groups[q];
    std::vector<int> sorted = logged[q].positions;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> want(g.size());
    std::iota(want.begin(), want.end(), 1);
    CHECK(sorted == want);
    for (std::size_t r = 1; r < g.size(); ++r) {
      const auto prev = logged[q].doc_indices[r - 1], cur = logged[q].doc_indices[r];
      CHECK(g.documents[prev].label >= g.documents[cur].label);
      if (g.documents[prev].label == g.documents[cur].label) CHECK(prev < cur);
      CHECK(logged[q].positions[cur] == static_cast<int>(r) + 1);
    }
  }
}

TEST_CASE("apply_policy: a query's positions do not depend on the other queries") {
  const Dataset d = synthetic(10, 6);
  LoggingPolicy p = LoggingPolicy::l2();
  p.seed = 8;
  const auto full = apply_policy(d, p);
  Dataset prefix = d;
  prefix.groups.resize(4);
  const auto part = apply_policy(prefix, p);
  for (std::size_t q = 0; q < 4; ++q) CHECK(part[q].positions == full[q].positions);
}

TEST_CASE("apply_policy: random logging puts the top document uniformly") {
  // 10k queries of 10 documents, one of them with the unique top grade.
  Dataset d;
  d.dim = 1;
  for (int q = 0; q < 10000; ++q) {
    QueryGroup g = group_with_labels({0, 1, 0, 2, 4, 1, 0, 3, 0, 2});
    g.query_id = std::to_string(q);
    d.groups.push_back(g);
  }
  LoggingPolicy p = LoggingPolicy::random();
  p.seed = 21;
  std::vector<double> counts(10, 0.0);
  for (const auto& q : apply_policy(d, p)) counts[q.positions[4] - 1] += 1;
  const double expected = 1000, sigma = std::sqrt(10000 * 0.1 * 0.9);
  for (double c : counts) CHECK(std::abs(c - expected) < 3 * sigma);
}

TEST_CASE("apply_policy: correlation with labels grows with w") {
  const Dataset d = synthetic(1000, 10);
  double last = -2;
  for (double w : {0.0, 0.2, 0.6, 0.8, 1.0}) {
    LoggingPolicy p{w};
    p.seed = 2;
    const auto logged = apply_policy(d, p);
    double sum = 0;
    for (std::size_t q = 0; q < d.groups.size(); ++q) {
      std::vector<int> labels;
      for (const auto& doc : d.groups[q].documents) labels.push_back(doc.label);
      sum += kendall_tau(logged[q].positions, labels);
    }
    const double mean = sum / d.groups.size();
    CHECK(mean >= last);
    last = mean;
  }
}
