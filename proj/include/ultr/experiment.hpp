#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ultr/clicksim.hpp"
#include "ultr/dataset.hpp"
#include "ultr/eval.hpp"
#include "ultr/models.hpp"
#include "ultr/policy.hpp"

namespace ultr {

inline constexpr const char* kVersion = "0.1.0";

/// Either a synthetic generator or LibSVM files. A single `file` is split by
/// `split`; explicit train/valid/test files are used as given.
struct DatasetSource {
  std::optional<SynthConfig> synthetic;
  std::string file;
  std::string train_file, valid_file, test_file;
  std::array<double, 3> split{0.6, 0.2, 0.2};
  bool normalize = true;
  int y_max = 4;
  /// Fixed teacher seed for synthetic data; unset means the repetition's data seed.
  std::optional<std::uint64_t> teacher_seed;
};

struct NamedPolicy {
  std::string name;
  double w = 1.0;
};

struct NamedModel {
  std::string name;
  ModelSpec spec;
};

/// One repetition. Each consumer draws from its own seed, so e.g. changing
/// `clicks` leaves positions untouched and changing `init` leaves clicks untouched.
struct SeedSet {
  std::uint64_t id = 0;  // used for directory and column names
  std::uint64_t data = 0, split = 0, policy = 0, clicks = 0, init = 0, shuffle = 0, dropout = 0;

  static SeedSet uniform(std::uint64_t s) { return {s, s, s, s, s, s, s, s}; }
  bool operator==(const SeedSet&) const = default;
};

struct EvalSettings {
  std::vector<int> ks{5};
  double alpha = 0.05;
  std::string baseline;  // model name; empty disables significance columns
};

struct ExperimentConfig {
  DatasetSource dataset;
  std::vector<NamedPolicy> policies;
  double epsilon = 0.1;
  std::size_t sessions = 5;
  std::size_t test_sessions = 5;  // click sessions simulated on the test split for IPS-NDCG
  std::vector<NamedModel> models;
  TrainConfig train;
  EvalSettings eval;
  std::vector<SeedSet> seeds;
  std::size_t workers = 1;

  void validate() const;
  nlohmann::json to_json() const;
  /// Throws ConfigError on unknown keys, wrong types or invalid values.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
};

enum class SweepParameter { eta, tau, policy_w };
SweepParameter parse_sweep_parameter(const std::string& name);
const char* sweep_parameter_name(SweepParameter p);

struct SweepConfig {
  ExperimentConfig base;
  SweepParameter parameter = SweepParameter::eta;
  std::vector<double> grid;

  void validate() const;
  nlohmann::json to_json() const;
  static SweepConfig from_json(const nlohmann::json& j);
  static SweepConfig load(const std::string& path);
};

/// Held-out data and logs for one (repetition, policy).
struct PreparedData {
  Dataset train, valid, test;
  FeatureTransform transform;
};

PreparedData prepare_data(const DatasetSource& source, const SeedSet& seeds);
ClickLog simulate_log(const Dataset& dataset, const NamedPolicy& policy, double epsilon,
                      std::size_t sessions, std::uint64_t policy_seed, std::uint64_t click_seed);

/// Metrics of one trained model on one (repetition, policy).
struct CellResult {
  std::string policy, model;
  std::uint64_t seed = 0;
  std::vector<EvalReport> ndcg;      // one per k
  std::vector<EvalReport> ips_ndcg;  // one per k
  int best_epoch = 0;
};

struct AggregateRow {
  std::string policy, model, metric;
  int k = 0;
  double mean = 0.0, stdev = 0.0;
  std::vector<double> per_seed;
  std::optional<TTestResult> vs_baseline;
};

struct ExperimentResult {
  std::vector<CellResult> cells;  // seed-major, then policy, then model
  std::vector<AggregateRow> rows;

  const AggregateRow& row(const std::string& policy, const std::string& model, const std::string& metric,
                          int k) const;
};

/// Trains and evaluates every (seed, policy, model) and writes the run
/// directory. With an empty `out_dir` nothing is written.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

struct SweepPoint {
  double value = 0.0;
  ExperimentResult result;
};

/// One run_experiment per grid value over the models the parameter applies to.
std::vector<SweepPoint> run_sweep(const SweepConfig& cfg, const std::string& out_dir);

/// Merges the aggregate tables of run directories into report.csv and
/// report_matrix.csv under `out_dir`.
void report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

std::string aggregate_csv(const std::vector<AggregateRow>& rows, double alpha);

}  // namespace ultr
