#include "ultr/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string_view>
#include <unordered_map>

#include "ultr/common.hpp"
#include "ultr/text.hpp"

namespace ultr {
namespace {

constexpr std::size_t kCalibrationSamples = 200000;

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> tokenize(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view text, T& value) {
  if (text.empty()) return false;
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars rejects a leading '+'.
    if (text.front() == '+') text.remove_prefix(1);
  }
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc() && ptr == end;
}

std::vector<double> standard_normal_vector(Rng& rng, std::size_t n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

}  // namespace

std::size_t Dataset::num_documents() const noexcept {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.documents.size();
  return n;
}

void Dataset::validate() const {
  if (y_max < 1) throw ValidationError("y_max must be >= 1");
  for (const auto& g : groups) {
    if (g.documents.empty()) throw ValidationError("query " + g.query_id + " has no documents");
    for (const auto& d : g.documents) {
      if (d.features.size() != dim) {
        throw ValidationError("query " + g.query_id + ": feature length " +
                              std::to_string(d.features.size()) + " != dim " + std::to_string(dim));
      }
      if (d.label < 0 || d.label > y_max) {
        throw ValidationError("query " + g.query_id + ": label " + std::to_string(d.label) +
                              " outside [0, " + std::to_string(y_max) + "]");
      }
      for (double x : d.features) {
        if (!std::isfinite(x)) throw ValidationError("query " + g.query_id + ": non-finite feature");
      }
    }
  }
}

Dataset parse_libsvm_ranking(std::istream& in, int y_max) {
  Dataset ds;
  ds.y_max = y_max;
  std::unordered_map<std::string, std::size_t> group_of;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    const auto tokens = tokenize(line);
    if (tokens.size() < 2) throw ParseError(line_no, "expected '<grade> qid:<id> ...'");

    int grade = 0;
    if (!parse_number(tokens[0], grade)) {
      throw ParseError(line_no, "invalid grade '" + std::string(tokens[0]) + "'");
    }
    if (grade < 0 || grade > y_max) {
      throw ValidationError("line " + std::to_string(line_no) + ": grade " + std::to_string(grade) +
                            " outside [0, " + std::to_string(y_max) + "]");
    }
    if (tokens[1].substr(0, 4) != "qid:" || tokens[1].size() == 4) {
      throw ParseError(line_no, "expected qid:<id>, got '" + std::string(tokens[1]) + "'");
    }
    const std::string qid(tokens[1].substr(4));

    Document doc;
    doc.label = grade;
    for (std::size_t t = 2; t < tokens.size(); ++t) {
      const auto colon = tokens[t].find(':');
      if (colon == std::string_view::npos) {
        throw ParseError(line_no, "expected <index>:<value>, got '" + std::string(tokens[t]) + "'");
      }
      std::size_t index = 0;
      double value = 0.0;
      if (!parse_number(tokens[t].substr(0, colon), index) || index == 0) {
        throw ParseError(line_no, "invalid feature index in '" + std::string(tokens[t]) + "'");
      }
      if (!parse_number(tokens[t].substr(colon + 1), value) || !std::isfinite(value)) {
        throw ParseError(line_no, "invalid feature value in '" + std::string(tokens[t]) + "'");
      }
      if (doc.features.size() < index) doc.features.resize(index, 0.0);
      doc.features[index - 1] = value;
    }
    ds.dim = std::max(ds.dim, doc.features.size());

    auto [it, inserted] = group_of.try_emplace(qid, ds.groups.size());
    if (inserted) ds.groups.push_back(QueryGroup{qid, {}});
    ds.groups[it->second].documents.push_back(std::move(doc));
  }
  for (auto& g : ds.groups) {
    for (auto& d : g.documents) d.features.resize(ds.dim, 0.0);
  }
  return ds;
}

Dataset parse_libsvm_ranking_string(const std::string& text, int y_max) {
  std::istringstream in(text);
  return parse_libsvm_ranking(in, y_max);
}

Dataset load_libsvm_ranking(const std::string& path, int y_max) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file: " + path);
  return parse_libsvm_ranking(in, y_max);
}

void write_libsvm_ranking(std::ostream& out, const Dataset& dataset) {
  for (const auto& g : dataset.groups) {
    for (const auto& d : g.documents) {
      out << d.label << " qid:" << g.query_id;
      for (std::size_t j = 0; j < d.features.size(); ++j) {
        out << ' ' << (j + 1) << ':' << format_double(d.features[j]);
      }
      out << '\n';
    }
  }
}

void save_libsvm_ranking(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset file: " + path);
  write_libsvm_ranking(out, dataset);
}

void SynthConfig::validate() const {
  if (num_queries == 0) throw ValidationError("num_queries must be positive");
  if (docs_per_query == 0) throw ValidationError("docs_per_query must be positive");
  if (dim == 0) throw ValidationError("dim must be positive");
  for (std::size_t i = 0; i < grade_quantiles.size(); ++i) {
    const double q = grade_quantiles[i];
    if (!(q > 0.0 && q < 1.0)) throw ValidationError("grade quantiles must lie in (0, 1)");
    if (i > 0 && !(q > grade_quantiles[i - 1])) {
      throw ValidationError("grade quantiles must be strictly increasing");
    }
  }
}

Teacher::Teacher(const SynthConfig& cfg) : dim_(cfg.dim) {
  cfg.validate();
  Rng rng = make_stream(cfg.teacher_seed, Stream::teacher);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double in_scale = 2.0 / std::sqrt(static_cast<double>(dim_));
  w1_.resize(kTeacherHidden * dim_);
  for (double& w : w1_) w = normal(rng) * in_scale;
  b1_.resize(kTeacherHidden);
  for (double& b : b1_) b = normal(rng) * 0.5;
  w2_.resize(kTeacherHidden);
  for (double& w : w2_) w = normal(rng);

  // Thresholds are empirical quantiles of a fixed-size calibration draw, so
  // they do not depend on how many documents a dataset asks for.
  Rng calib = make_stream(cfg.teacher_seed, Stream::calibration);
  std::vector<double> scores(kCalibrationSamples);
  for (double& s : scores) s = score(standard_normal_vector(calib, dim_));
  std::sort(scores.begin(), scores.end());
  for (std::size_t i = 0; i < thresholds_.size(); ++i) {
    const auto idx = static_cast<std::size_t>(cfg.grade_quantiles[i] * kCalibrationSamples);
    thresholds_[i] = scores[std::min(idx, scores.size() - 1)];
  }
}

double Teacher::score(const std::vector<double>& features) const {
  if (features.size() != dim_) throw ValidationError("teacher: feature length mismatch");
  double out = 0.0;
  for (std::size_t h = 0; h < kTeacherHidden; ++h) {
    double pre = b1_[h];
    const double* row = w1_.data() + h * dim_;
    for (std::size_t j = 0; j < dim_; ++j) pre += row[j] * features[j];
    out += w2_[h] * std::tanh(pre);
  }
  return out;
}

int Teacher::grade(double score) const {
  int g = 0;
  for (double t : thresholds_) {
    if (score >= t) ++g;
  }
  return g;
}

Dataset generate_synthetic(const SynthConfig& cfg) {
  const Teacher teacher(cfg);
  Dataset ds;
  ds.dim = cfg.dim;
  ds.y_max = 4;
  ds.groups.reserve(cfg.num_queries);
  Rng rng = make_stream(cfg.teacher_seed, Stream::features);
  for (std::size_t q = 0; q < cfg.num_queries; ++q) {
    QueryGroup g;
    g.query_id = std::to_string(q + 1);
    g.documents.reserve(cfg.docs_per_query);
    for (std::size_t i = 0; i < cfg.docs_per_query; ++i) {
      Document d;
      d.features = standard_normal_vector(rng, cfg.dim);
      d.label = teacher.label(d.features);
      g.documents.push_back(std::move(d));
    }
    ds.groups.push_back(std::move(g));
  }
  return ds;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ValidationError("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");

  std::array<std::size_t, 3> sizes{};
  std::size_t assigned = 0;
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    sizes[i] = static_cast<std::size_t>(std::floor(ratios[i] * static_cast<double>(n) + 1e-9));
    assigned += sizes[i];
    if (ratios[i] > 0.0) ++nonzero;
  }
  if (n < nonzero) {
    throw ValidationError("cannot split " + std::to_string(n) + " groups into " +
                          std::to_string(nonzero) + " non-empty partitions");
  }
  std::size_t remainder = n - assigned;
  while (remainder > 0) {
    for (std::size_t i = 0; i < 3 && remainder > 0; ++i) {
      if (ratios[i] > 0.0) {
        ++sizes[i];
        --remainder;
      }
    }
  }
  return sizes;
}

SplitResult split(const Dataset& dataset, const std::array<double, 3>& ratios, std::uint64_t seed) {
  const auto sizes = split_sizes(dataset.groups.size(), ratios);
  std::vector<std::size_t> order(dataset.groups.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_stream(seed, Stream::split);
  std::shuffle(order.begin(), order.end(), rng);

  SplitResult out;
  Dataset* parts[3] = {&out.train, &out.valid, &out.test};
  std::size_t cursor = 0;
  for (std::size_t p = 0; p < 3; ++p) {
    parts[p]->dim = dataset.dim;
    parts[p]->y_max = dataset.y_max;
    parts[p]->groups.reserve(sizes[p]);
    for (std::size_t i = 0; i < sizes[p]; ++i) parts[p]->groups.push_back(dataset.groups[order[cursor++]]);
  }
  return out;
}

FeatureTransform FeatureTransform::identity(std::size_t dim) {
  return FeatureTransform{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

FeatureTransform FeatureTransform::fit(const Dataset& train) {
  const std::size_t n = train.num_documents();
  if (n == 0) throw ValidationError("cannot fit a feature transform on an empty dataset");
  FeatureTransform t{std::vector<double>(train.dim, 0.0), std::vector<double>(train.dim, 0.0)};
  for (const auto& g : train.groups) {
    for (const auto& d : g.documents) {
      for (std::size_t j = 0; j < train.dim; ++j) t.mean[j] += d.features[j];
    }
  }
  for (double& m : t.mean) m /= static_cast<double>(n);
  std::vector<double> var(train.dim, 0.0);
  for (const auto& g : train.groups) {
    for (const auto& d : g.documents) {
      for (std::size_t j = 0; j < train.dim; ++j) {
        const double c = d.features[j] - t.mean[j];
        var[j] += c * c;
      }
    }
  }
  for (std::size_t j = 0; j < train.dim; ++j) {
    const double sd = std::sqrt(var[j] / static_cast<double>(n));
    t.scale[j] = sd < 1e-12 ? 0.0 : 1.0 / sd;
  }
  return t;
}

Dataset FeatureTransform::apply(const Dataset& dataset) const {
  if (dataset.dim != mean.size()) throw ValidationError("feature transform dimension mismatch");
  Dataset out = dataset;
  for (auto& g : out.groups) {
    for (auto& d : g.documents) {
      for (std::size_t j = 0; j < out.dim; ++j) d.features[j] = (d.features[j] - mean[j]) * scale[j];
    }
  }
  return out;
}

NormalizedSplits normalize_features(const Dataset& train, const std::vector<Dataset>& others) {
  NormalizedSplits out{FeatureTransform::fit(train), {}};
  out.datasets.push_back(out.transform.apply(train));
  for (const auto& d : others) out.datasets.push_back(out.transform.apply(d));
  return out;
}

nlohmann::json dataset_summary(const Dataset& dataset) {
  std::vector<std::size_t> histogram(static_cast<std::size_t>(dataset.y_max) + 1, 0);
  std::size_t min_docs = dataset.groups.empty() ? 0 : dataset.groups.front().size();
  std::size_t max_docs = 0;
  for (const auto& g : dataset.groups) {
    min_docs = std::min(min_docs, g.size());
    max_docs = std::max(max_docs, g.size());
    for (const auto& d : g.documents) ++histogram[static_cast<std::size_t>(d.label)];
  }
  return nlohmann::json{{"num_queries", dataset.groups.size()},
                        {"num_documents", dataset.num_documents()},
                        {"dim", dataset.dim},
                        {"y_max", dataset.y_max},
                        {"label_histogram", histogram},
                        {"min_docs_per_query", min_docs},
                        {"max_docs_per_query", max_docs}};
}

}  // namespace ultr
