#include "ultr/clicksim.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"
#include "ultr/common.hpp"

namespace ultr {

void ClickModelConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ValidationError("click epsilon must lie in [0, 1)");
  if (y_max < 1) throw ValidationError("click y_max must be >= 1");
}

double observation_prob(int position) {
  if (position < 1) throw ValidationError("position must be >= 1, got " + std::to_string(position));
  return 1.0 / static_cast<double>(position);
}

double relevance_prob(int grade, const ClickModelConfig& cfg) {
  if (grade < 0 || grade > cfg.y_max) {
    throw ValidationError("grade " + std::to_string(grade) + " outside [0, " +
                          std::to_string(cfg.y_max) + "]");
  }
  const double gain = std::exp2(grade) - 1.0;
  const double max_gain = std::exp2(cfg.y_max) - 1.0;
  return cfg.epsilon + (1.0 - cfg.epsilon) * gain / max_gain;
}

double click_prob(int grade, int position, const ClickModelConfig& cfg) {
  return observation_prob(position) * relevance_prob(grade, cfg);
}

bool ClickProvenance::operator==(const ClickProvenance& o) const {
  const auto same_policy = [](const LoggingPolicy& a, const LoggingPolicy& b) {
    return a.w == b.w && a.noise_low == b.noise_low && a.noise_high == b.noise_high &&
           a.seed == b.seed;
  };
  if (policy.has_value() != o.policy.has_value()) return false;
  if (policy && !same_policy(*policy, *o.policy)) return false;
  return clicks.epsilon == o.clicks.epsilon && clicks.y_max == o.clicks.y_max &&
         clicks.seed == o.clicks.seed && sessions == o.sessions;
}

ClickLog sample_clicks(std::span<const LoggedQuery> logged, const Dataset& dataset,
                       const ClickModelConfig& cfg, std::size_t sessions) {
  cfg.validate();
  if (sessions == 0) throw ValidationError("sessions must be positive");
  if (logged.size() != dataset.groups.size()) {
    throw ValidationError("click simulation: " + std::to_string(logged.size()) +
                          " logged queries for " + std::to_string(dataset.groups.size()) + " groups");
  }
  ClickLog log;
  log.provenance.clicks = cfg;
  log.provenance.sessions = sessions;
  log.records.resize(logged.size() * sessions);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t qi = 0; qi < logged.size(); ++qi) {
    const LoggedQuery& lq = logged[qi];
    const QueryGroup& group = dataset.groups[qi];
    if (lq.positions.size() != group.size()) {
      throw ValidationError("click simulation: query " + group.query_id + " has " +
                            std::to_string(group.size()) + " documents but " +
                            std::to_string(lq.positions.size()) + " positions");
    }
    std::vector<double> probs(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      probs[i] = click_prob(group.documents[i].label, lq.positions[i], cfg);
    }
    Rng rng = make_stream(cfg.seed, Stream::clicks, qi);
    for (std::size_t s = 0; s < sessions; ++s) {
      ClickRecord& rec = log.records[s * logged.size() + qi];
      rec.logged = lq;
      rec.session = s;
      rec.clicks.resize(group.size());
      for (std::size_t i = 0; i < group.size(); ++i) rec.clicks[i] = unit(rng) < probs[i] ? 1 : 0;
    }
  }
  return log;
}

namespace {

constexpr int kClickLogVersion = 1;

}  // namespace

void write_clicklog(std::ostream& out, const ClickLog& log) {
  nlohmann::json header{{"type", "header"},
                        {"version", kClickLogVersion},
                        {"epsilon", log.provenance.clicks.epsilon},
                        {"y_max", log.provenance.clicks.y_max},
                        {"click_seed", log.provenance.clicks.seed},
                        {"sessions", log.provenance.sessions}};
  if (log.provenance.policy) {
    const auto& p = *log.provenance.policy;
    header["policy"] = {{"w", p.w}, {"noise_low", p.noise_low}, {"noise_high", p.noise_high},
                        {"seed", p.seed}, {"name", policy_label(p.w)}};
  }
  out << header.dump() << '\n';
  for (const auto& r : log.records) {
    nlohmann::json line{{"query_index", r.logged.query_index},
                        {"query_id", r.logged.query_id},
                        {"session", r.session},
                        {"positions", r.logged.positions},
                        {"clicks", r.clicks}};
    out << line.dump() << '\n';
  }
}

ClickLog read_clicklog(std::istream& in) {
  ClickLog log;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    }
    try {
      if (!have_header) {
        if (j.value("type", "") != "header") throw ParseError(line_no, "missing click log header");
        if (j.at("version").get<int>() != kClickLogVersion) {
          throw ParseError(line_no, "unsupported click log version");
        }
        log.provenance.clicks.epsilon = j.at("epsilon").get<double>();
        log.provenance.clicks.y_max = j.at("y_max").get<int>();
        log.provenance.clicks.seed = j.at("click_seed").get<std::uint64_t>();
        log.provenance.sessions = j.at("sessions").get<std::size_t>();
        if (j.contains("policy")) {
          const auto& p = j.at("policy");
          log.provenance.policy = LoggingPolicy{p.at("w").get<double>(), p.at("noise_low").get<double>(),
                                                p.at("noise_high").get<double>(),
                                                p.at("seed").get<std::uint64_t>()};
        }
        have_header = true;
        continue;
      }
      ClickRecord r;
      r.logged.query_index = j.at("query_index").get<std::size_t>();
      r.logged.query_id = j.at("query_id").get<std::string>();
      r.session = j.at("session").get<std::size_t>();
      r.logged.positions = j.at("positions").get<std::vector<int>>();
      r.clicks = j.at("clicks").get<std::vector<std::uint8_t>>();
      const std::size_t n = r.logged.positions.size();
      if (r.clicks.size() != n) throw ParseError(line_no, "clicks and positions differ in length");
      r.logged.doc_indices.assign(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        const int p = r.logged.positions[i];
        if (p < 1 || static_cast<std::size_t>(p) > n || r.logged.doc_indices[p - 1] != n) {
          throw ParseError(line_no, "positions are not a permutation of 1..n");
        }
        r.logged.doc_indices[p - 1] = i;
        if (r.clicks[i] > 1) throw ParseError(line_no, "clicks must be 0 or 1");
      }
      log.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("malformed click log record: ") + e.what());
    }
  }
  if (!have_header) throw ParseError(line_no, "empty click log");
  return log;
}

void save_clicklog(const std::string& path, const ClickLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write click log: " + path);
  write_clicklog(out, log);
}

ClickLog load_clicklog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open click log: " + path);
  return read_clicklog(in);
}

}  // namespace ultr
