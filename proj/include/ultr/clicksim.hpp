#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ultr/dataset.hpp"
#include "ultr/policy.hpp"

namespace ultr {

struct ClickModelConfig {
  double epsilon = 0.1;
  int y_max = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Examination probability under the position-based model: 1 / p.
double observation_prob(int position);
/// epsilon + (1 - epsilon) * (2^y - 1) / (2^y_max - 1)
double relevance_prob(int grade, const ClickModelConfig& cfg);
double click_prob(int grade, int position, const ClickModelConfig& cfg);

struct ClickRecord {
  LoggedQuery logged;
  std::size_t session = 0;
  std::vector<std::uint8_t> clicks;  // indexed by document

  bool operator==(const ClickRecord&) const = default;
};

struct ClickProvenance {
  std::optional<LoggingPolicy> policy;
  ClickModelConfig clicks;
  std::size_t sessions = 1;

  bool operator==(const ClickProvenance&) const;
};

struct ClickLog {
  ClickProvenance provenance;
  std::vector<ClickRecord> records;

  bool operator==(const ClickLog&) const = default;
};

/// Draws Bernoulli(click_prob) for every (session, query, document). Each
/// query owns one substream keyed by (cfg.seed, query index); sessions are
/// drawn from it in order, so session 0 does not depend on `sessions`.
ClickLog sample_clicks(std::span<const LoggedQuery> logged, const Dataset& dataset,
                       const ClickModelConfig& cfg, std::size_t sessions = 1);

/// Line-delimited JSON: a header line with provenance, then one line per record.
void write_clicklog(std::ostream& out, const ClickLog& log);
ClickLog read_clicklog(std::istream& in);
void save_clicklog(const std::string& path, const ClickLog& log);
ClickLog load_clicklog(const std::string& path);

}  // namespace ultr
