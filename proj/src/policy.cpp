#include "ultr/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ultr {

void LoggingPolicy::validate() const {
  if (!(w >= 0.0 && w <= 1.0)) throw ValidationError("policy weight w must lie in [0, 1]");
  if (!(noise_low < noise_high)) throw ValidationError("policy noise_low must be < noise_high");
}

LoggingPolicy policy_preset(const std::string& name) {
  if (name == "oracle") return LoggingPolicy::oracle();
  if (name == "l1") return LoggingPolicy::l1();
  if (name == "l2") return LoggingPolicy::l2();
  if (name == "l3") return LoggingPolicy::l3();
  if (name == "random") return LoggingPolicy::random();
  throw ConfigError("unknown policy '" + name + "' (expected oracle|l1|l2|l3|random)");
}

std::string policy_label(double w) {
  if (w == 1.0) return "oracle";
  if (w == 0.8) return "l1";
  if (w == 0.6) return "l2";
  if (w == 0.2) return "l3";
  if (w == 0.0) return "random";
  std::ostringstream os;
  os << "w=" << w;
  return os.str();
}

std::vector<double> score_documents(const QueryGroup& group, const LoggingPolicy& policy,
                                    Rng& noise_stream) {
  if (group.documents.empty()) throw ValidationError("cannot score an empty query");
  std::uniform_real_distribution<double> noise(policy.noise_low, policy.noise_high);
  std::vector<double> scores;
  scores.reserve(group.size());
  for (const auto& d : group.documents) {
    // The draw happens even at w == 1 so the stream layout is policy-independent.
    const double n = noise(noise_stream);
    scores.push_back(policy.w * d.label + (1.0 - policy.w) * n);
  }
  return scores;
}

LoggedQuery assign_positions(std::span<const double> scores) {
  for (double s : scores) {
    if (std::isnan(s)) throw ValidationError("NaN logging score");
  }
  LoggedQuery q;
  q.doc_indices.resize(scores.size());
  std::iota(q.doc_indices.begin(), q.doc_indices.end(), 0);
  std::stable_sort(q.doc_indices.begin(), q.doc_indices.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  q.positions.resize(scores.size());
  for (std::size_t r = 0; r < q.doc_indices.size(); ++r) {
    q.positions[q.doc_indices[r]] = static_cast<int>(r + 1);
  }
  return q;
}

std::vector<LoggedQuery> apply_policy(const Dataset& dataset, const LoggingPolicy& policy) {
  policy.validate();
  std::vector<LoggedQuery> out;
  out.reserve(dataset.groups.size());
  for (std::size_t qi = 0; qi < dataset.groups.size(); ++qi) {
    Rng rng = make_stream(policy.seed, Stream::policy, qi);
    LoggedQuery q = assign_positions(score_documents(dataset.groups[qi], policy, rng));
    q.query_index = qi;
    q.query_id = dataset.groups[qi].query_id;
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace ultr
