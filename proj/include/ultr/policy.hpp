#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ultr/common.hpp"
#include "ultr/dataset.hpp"

namespace ultr {

/// Ranks documents by w * label + (1 - w) * Uniform[noise_low, noise_high].
struct LoggingPolicy {
  double w = 1.0;
  double noise_low = 0.0;
  double noise_high = 4.0;
  std::uint64_t seed = 0;

  void validate() const;

  static LoggingPolicy oracle() { return {1.0}; }
  static LoggingPolicy l1() { return {0.8}; }
  static LoggingPolicy l2() { return {0.6}; }
  static LoggingPolicy l3() { return {0.2}; }
  static LoggingPolicy random() { return {0.0}; }
};

/// oracle | l1 | l2 | l3 | random. Throws ConfigError otherwise.
LoggingPolicy policy_preset(const std::string& name);
/// Preset name if `w` matches one, otherwise "w=<value>".
std::string policy_label(double w);

struct LoggedQuery {
  std::size_t query_index = 0;
  std::string query_id;
  std::vector<std::size_t> doc_indices;  // rank r (0-based) -> document index
  std::vector<int> positions;            // document index -> 1-based position

  bool operator==(const LoggedQuery&) const = default;
};

std::vector<double> score_documents(const QueryGroup& group, const LoggingPolicy& policy,
                                    Rng& noise_stream);

/// Position of doc i = 1 + #{j : s_j > s_i} + #{j < i : s_j == s_i}.
LoggedQuery assign_positions(std::span<const double> scores);

/// Scores and ranks every query with an independent noise substream keyed by
/// (policy.seed, query index).
std::vector<LoggedQuery> apply_policy(const Dataset& dataset, const LoggingPolicy& policy);

}  // namespace ultr
