#include <cmath>
#include <sstream>

#include "doctest.h"
#include "ultr/clicksim.hpp"
#include "ultr/dataset.hpp"
#include "ultr/policy.hpp"

using namespace ultr;

namespace {

Dataset synthetic(std::size_t queries, std::size_t docs) {
  SynthConfig cfg;
  cfg.num_queries = queries;
  cfg.docs_per_query = docs;
  cfg.dim = 4;
  return generate_synthetic(cfg);
}

}  // namespace

TEST_CASE("observation and relevance probabilities") {
  CHECK(observation_prob(1) == 1.0);
  CHECK(observation_prob(2) == 0.5);
  CHECK(observation_prob(10) == doctest::Approx(0.1));
  CHECK_THROWS(observation_prob(0));

  ClickModelConfig cfg;
  CHECK(relevance_prob(0, cfg) == doctest::Approx(0.1));
  CHECK(relevance_prob(4, cfg) == 1.0);
  CHECK(relevance_prob(2, cfg) == doctest::Approx(0.28));
  CHECK_THROWS(relevance_prob(5, cfg));
  CHECK_THROWS(relevance_prob(-1, cfg));

  CHECK(click_prob(4, 1, cfg) == 1.0);
  CHECK(click_prob(0, 4, cfg) == doctest::Approx(0.025));
  CHECK(click_prob(2, 2, cfg) == doctest::Approx(0.14));
}

TEST_CASE("click model config validation") {
  CHECK_THROWS(ClickModelConfig{1.0}.validate());
  CHECK_THROWS(ClickModelConfig{-0.1}.validate());
  CHECK_THROWS(ClickModelConfig{0.1, 0}.validate());
  CHECK_NOTHROW(ClickModelConfig{0.0, 1}.validate());
}

TEST_CASE("click probability factorizes and is monotone") {
  ClickModelConfig cfg;
  for (int y = 0; y <= 4; ++y) {
    for (int p = 1; p <= 20; ++p) {
      CHECK(click_prob(y, p, cfg) ==
            doctest::Approx(click_prob(y, 1, cfg) * click_prob(4, p, cfg) / click_prob(4, 1, cfg)).epsilon(1e-15));
      if (p > 1) CHECK(click_prob(y, p, cfg) <= click_prob(y, p - 1, cfg));
      if (y > 0) CHECK(click_prob(y, p, cfg) >= click_prob(y - 1, p, cfg));
    }
  }
}

TEST_CASE("sample_clicks: degenerate probabilities") {
  Dataset d = synthetic(20, 8);
  for (auto& g : d.groups) {
    for (auto& doc : g.documents) doc.label = 0;
  }
  const auto logged = apply_policy(d, LoggingPolicy::random());
  ClickModelConfig none{0.0};
  for (const auto& r : sample_clicks(logged, d, none, 3).records) {
    for (auto c : r.clicks) CHECK(c == 0);
  }
  d.groups[0].documents[0].label = 4;
  const auto oracle = apply_policy(d, LoggingPolicy::oracle());
  for (const auto& r : sample_clicks(oracle, d, ClickModelConfig{}, 5).records) {
    if (r.logged.query_index == 0) CHECK(r.clicks[0] == 1);
  }
}

TEST_CASE("sample_clicks: deterministic, sessions share prefixes, misalignment rejected") {
  const Dataset d = synthetic(15, 6);
  const auto logged = apply_policy(d, LoggingPolicy::l1());
  ClickModelConfig cfg;
  cfg.seed = 3;
  const ClickLog a = sample_clicks(logged, d, cfg, 4);
  CHECK(a == sample_clicks(logged, d, cfg, 4));
  CHECK(a.records.size() == 4 * d.groups.size());
  const ClickLog one = sample_clicks(logged, d, cfg, 1);
  for (const auto& r : one.records) {
    bool found = false;
    for (const auto& s : a.records) {
      if (s.session == 0 && s.logged.query_index == r.logged.query_index) found = s.clicks == r.clicks;
    }
    CHECK(found);
  }
  auto short_log = logged;
  short_log.pop_back();
  CHECK_THROWS(sample_clicks(short_log, d, cfg, 1));
}

TEST_CASE("sample_clicks: empirical rate at (y=2, p=2) within 3 sigma") {
  // 100k two-document queries; oracle logging puts the grade-2 document at position 2.
  Dataset d;
  d.dim = 1;
  const int n = 100000;
  for (int q = 0; q < n; ++q) {
    QueryGroup g;
    g.query_id = std::to_string(q);
    g.documents = {{{0.0}, 4}, {{0.0}, 2}};
    d.groups.push_back(g);
  }
  ClickModelConfig cfg;
  cfg.seed = 17;
  const auto log = sample_clicks(apply_policy(d, LoggingPolicy::oracle()), d, cfg, 1);
  double clicks = 0;
  for (const auto& r : log.records) clicks += r.clicks[1];
  CHECK(std::abs(clicks / n - 0.14) < 3 * std::sqrt(0.14 * 0.86 / n));
}

TEST_CASE("clicklog: JSON lines round trip") {
  const Dataset d = synthetic(5, 4);
  LoggingPolicy p = LoggingPolicy::l3();
  p.seed = 9;
  const auto log = sample_clicks(apply_policy(d, p), d, ClickModelConfig{0.2, 4, 1}, 2);
  std::stringstream io;
  write_clicklog(io, log);
  const ClickLog back = read_clicklog(io);
  CHECK(back.records == log.records);
  CHECK(back.provenance.sessions == 2);
  CHECK(back.provenance.clicks.epsilon == 0.2);
}
