#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace ultr {

struct Document {
  std::vector<double> features;
  int label = 0;

  bool operator==(const Document&) const = default;
};

/// Candidate documents of one query, in file or generation order.
struct QueryGroup {
  std::string query_id;
  std::vector<Document> documents;

  std::size_t size() const noexcept { return documents.size(); }
  bool operator==(const QueryGroup&) const = default;
};

struct Dataset {
  std::vector<QueryGroup> groups;
  std::size_t dim = 0;
  int y_max = 4;

  std::size_t num_documents() const noexcept;
  /// Throws ValidationError if any invariant is broken.
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

struct SynthConfig {
  std::size_t num_queries = 1000;
  std::size_t docs_per_query = 20;
  std::size_t dim = 32;
  std::uint64_t teacher_seed = 1;
  std::array<double, 4> grade_quantiles{0.5, 0.75, 0.9, 0.97};

  void validate() const;
};

inline constexpr std::size_t kTeacherHidden = 16;

/// Fixed one-hidden-layer scorer whose quantile buckets define synthetic
/// grades. A pure function of (dim, teacher_seed, grade_quantiles).
class Teacher {
 public:
  explicit Teacher(const SynthConfig& cfg);

  double score(const std::vector<double>& features) const;
  int grade(double score) const;
  int label(const std::vector<double>& features) const { return grade(score(features)); }
  const std::array<double, 4>& thresholds() const noexcept { return thresholds_; }

 private:
  std::size_t dim_;
  std::vector<double> w1_;  // kTeacherHidden x dim, row-major
  std::vector<double> b1_;
  std::vector<double> w2_;
  std::array<double, 4> thresholds_{};
};

/// Parses `<grade> qid:<id> <idx>:<val> ...` lines. Blank lines and `#`
/// comments are skipped; CRLF endings are accepted.
Dataset parse_libsvm_ranking(std::istream& in, int y_max = 4);
Dataset parse_libsvm_ranking_string(const std::string& text, int y_max = 4);
Dataset load_libsvm_ranking(const std::string& path, int y_max = 4);

/// Writes every feature explicitly, using round-trip exact number formatting.
void write_libsvm_ranking(std::ostream& out, const Dataset& dataset);
void save_libsvm_ranking(const std::string& path, const Dataset& dataset);

Dataset generate_synthetic(const SynthConfig& cfg);

struct SplitResult {
  Dataset train;
  Dataset valid;
  Dataset test;
};

/// Partition sizes: floor(ratio * n), remainders handed out one at a time
/// to train, valid, test (in that order, skipping zero-ratio partitions).
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios);
SplitResult split(const Dataset& dataset, const std::array<double, 3>& ratios, std::uint64_t seed);

/// Per-feature z-score transform fitted on one dataset.
struct FeatureTransform {
  std::vector<double> mean;
  std::vector<double> scale;  // multiply after centering; 0 for constant columns

  static FeatureTransform identity(std::size_t dim);
  static FeatureTransform fit(const Dataset& train);
  Dataset apply(const Dataset& dataset) const;
};

struct NormalizedSplits {
  FeatureTransform transform;
  std::vector<Dataset> datasets;
};

/// Fits on `train` and applies the transform to `train` followed by `others`.
NormalizedSplits normalize_features(const Dataset& train, const std::vector<Dataset>& others = {});

nlohmann::json dataset_summary(const Dataset& dataset);

}  // namespace ultr
