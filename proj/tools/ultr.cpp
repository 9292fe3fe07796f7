// Command-line front end: simulate, train, evaluate, run, sweep, report, gradcheck.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ultr/experiment.hpp"
#include "ultr/gradcheck_suite.hpp"
#include "ultr/simd/kernels.hpp"
#include "ultr/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string policy;
  std::optional<double> policy_w;
  std::optional<std::size_t> sessions;
  std::optional<std::size_t> workers;
  std::string simd;
};

ultr::ExperimentConfig load_config(const Globals& g) {
  if (g.config.empty()) throw ultr::ConfigError("--config is required");
  ultr::ExperimentConfig cfg = ultr::ExperimentConfig::load(g.config);
  if (g.seed) cfg.seeds = {ultr::SeedSet::uniform(*g.seed)};
  if (!g.policy.empty()) cfg.policies = {{g.policy, ultr::policy_preset(g.policy).w}};
  if (g.policy_w) cfg.policies = {{ultr::policy_label(*g.policy_w), *g.policy_w}};
  if (g.sessions) cfg.sessions = *g.sessions;
  if (g.workers) cfg.workers = *g.workers;
  cfg.validate();
  return cfg;
}

void require_out(const Globals& g) {
  if (g.out.empty()) throw ultr::ConfigError("--out is required");
}

void write_json(const fs::path& p, const json& j) { ultr::write_text_file(p.string(), j.dump(2) + "\n"); }

// simulate: one repetition's splits and click logs as files.
void cmd_simulate(const Globals& g) {
  const auto cfg = load_config(g);
  require_out(g);
  const ultr::SeedSet& s = cfg.seeds.front();
  const ultr::NamedPolicy& p = cfg.policies.front();
  const fs::path out(g.out);
  fs::create_directories(out);

  const auto data = ultr::prepare_data(cfg.dataset, s);
  ultr::save_libsvm_ranking((out / "train.txt").string(), data.train);
  ultr::save_libsvm_ranking((out / "valid.txt").string(), data.valid);
  ultr::save_libsvm_ranking((out / "test.txt").string(), data.test);
  const auto train_log = ultr::simulate_log(data.train, p, cfg.epsilon, cfg.sessions, s.policy, s.clicks);
  const auto test_log = ultr::simulate_log(data.test, p, cfg.epsilon, cfg.test_sessions,
                                           ultr::mix_seed(s.policy, ultr::fnv1a("test")),
                                           ultr::mix_seed(s.clicks, ultr::fnv1a("test")));
  ultr::save_clicklog((out / "train_clicks.jsonl").string(), train_log);
  ultr::save_clicklog((out / "test_clicks.jsonl").string(), test_log);
  write_json(out / "transform.json", json{{"mean", data.transform.mean}, {"scale", data.transform.scale}});
  write_json(out / "dataset.json", json{{"train", ultr::dataset_summary(data.train)},
                                        {"valid", ultr::dataset_summary(data.valid)},
                                        {"test", ultr::dataset_summary(data.test)},
                                        {"policy", {{"name", p.name}, {"w", p.w}}},
                                        {"seed", s.id}});
  std::printf("simulated %zu/%zu/%zu queries under policy %s (w=%s) into %s\n", data.train.groups.size(),
              data.valid.groups.size(), data.test.groups.size(), p.name.c_str(), ultr::format_double(p.w).c_str(),
              g.out.c_str());
}

const ultr::NamedModel& pick_model(const ultr::ExperimentConfig& cfg, const std::string& name) {
  if (name.empty()) return cfg.models.front();
  for (const auto& m : cfg.models) {
    if (m.name == name) return m;
  }
  throw ultr::ConfigError("no model named '" + name + "' in the config");
}

// train: one model on the output of `simulate`.
void cmd_train(const Globals& g, const std::string& data_dir, const std::string& model_name) {
  const auto cfg = load_config(g);
  require_out(g);
  const auto& m = pick_model(cfg, model_name);
  const ultr::SeedSet& s = cfg.seeds.front();
  const fs::path dir(data_dir);
  const auto train = ultr::load_libsvm_ranking((dir / "train.txt").string(), cfg.dataset.y_max);
  const auto valid = ultr::load_libsvm_ranking((dir / "valid.txt").string(), cfg.dataset.y_max);
  const auto log = ultr::load_clicklog((dir / "train_clicks.jsonl").string());

  ultr::TrainConfig tc = cfg.train;
  tc.shuffle_seed = s.shuffle;
  auto trained = ultr::train(ultr::build(m.spec, train.dim, s.init, s.dropout), log, train, tc, &valid);
  const fs::path out(g.out);
  fs::create_directories(out);
  json ckpt = trained.model.checkpoint();
  ckpt["meta"]["name"] = m.name;
  ckpt["meta"]["best_epoch"] = trained.best_epoch;
  write_json(out / "checkpoint.json", ckpt);
  ultr::write_text_file((out / "history.csv").string(), trained.history_csv());
  std::printf("trained %s: best epoch %d, validation NDCG@%d %.4f\n", m.name.c_str(), trained.best_epoch, tc.eval_k,
              trained.best_val_ndcg);
}

ultr::ClickModel load_model(const std::string& path) {
  const json doc = json::parse(ultr::read_text_file(path));
  const auto& meta = doc.at("meta");
  ultr::ClickModel model(ultr::ModelSpec::from_json(meta.at("spec")), meta.at("input_dim").get<std::size_t>(), 0);
  model.load(doc);
  return model;
}

// evaluate: NDCG@k on test labels and IPS-NDCG@k on test clicks.
void cmd_evaluate(const Globals& g, const std::string& data_dir, const std::string& checkpoint,
                  const std::string& baseline, std::vector<int> ks, double alpha) {
  require_out(g);
  if (ks.empty()) ks = {5};
  const fs::path dir(data_dir);
  const auto test = ultr::load_libsvm_ranking((dir / "test.txt").string());
  const auto train_log = ultr::load_clicklog((dir / "train_clicks.jsonl").string());
  const auto test_log = ultr::load_clicklog((dir / "test_clicks.jsonl").string());
  const auto props = ultr::estimate_propensities(train_log);
  if (props.any_missing()) std::fprintf(stderr, "warning: some positions have no impressions; propensity 1.0 used\n");

  auto model = load_model(checkpoint);
  std::optional<ultr::ClickModel> base;
  if (!baseline.empty()) base = load_model(baseline);

  const fs::path out(g.out);
  fs::create_directories(out);
  json summary = json::array();
  for (int k : ks) {
    auto ndcg = ultr::mean_ndcg(model.scorer(), test, k);
    auto ips = ultr::ips_ndcg_at_k(model.scorer(), test, test_log, props, k);
    if (base) {
      const auto b_ndcg = ultr::mean_ndcg(base->scorer(), test, k);
      const auto b_ips = ultr::ips_ndcg_at_k(base->scorer(), test, test_log, props, k);
      for (auto [rep, ref] : {std::pair{&ndcg, &b_ndcg}, std::pair{&ips, &b_ips}}) {
        const auto t = ultr::paired_t_test(rep->per_query, ref->per_query, alpha);
        rep->comparisons.push_back({"baseline", t.mean_difference, t.t, t.p_value, t.significant});
      }
    }
    for (const auto* rep : {&ndcg, &ips}) {
      ultr::write_text_file((out / (rep->metric + "_at_" + std::to_string(k) + ".csv")).string(), rep->to_csv());
      summary.push_back(rep->summary_json());
      std::printf("%s@%d = %.4f\n", rep->metric.c_str(), k, rep->mean);
    }
  }
  write_json(out / "summary.json", json{{"checkpoint", checkpoint}, {"metrics", summary}});
}

void cmd_run(const Globals& g) {
  const auto cfg = load_config(g);
  require_out(g);
  const auto result = ultr::run_experiment(cfg, g.out);
  std::fputs(ultr::aggregate_csv(result.rows, cfg.eval.alpha).c_str(), stdout);
}

void cmd_sweep(const Globals& g) {
  if (g.config.empty()) throw ultr::ConfigError("--config is required");
  require_out(g);
  auto cfg = ultr::SweepConfig::load(g.config);
  if (g.seed) cfg.base.seeds = {ultr::SeedSet::uniform(*g.seed)};
  if (g.workers) cfg.base.workers = *g.workers;
  cfg.validate();
  const auto points = ultr::run_sweep(cfg, g.out);
  for (const auto& pt : points) {
    for (const auto& r : pt.result.rows) {
      if (r.metric != "ndcg") continue;
      std::printf("%s=%s %s/%s ndcg@%d %.4f +- %.4f\n", ultr::sweep_parameter_name(cfg.parameter),
                  ultr::format_double(pt.value).c_str(), r.policy.c_str(), r.model.c_str(), r.k, r.mean, r.stdev);
    }
  }
}

int cmd_gradcheck(std::size_t trials, std::uint64_t seed) {
  bool ok = true;
  for (const auto& c : ultr::run_gradcheck_suite(trials, seed)) {
    ok = ok && c.passed();
    std::printf("%-40s %s max_rel_err=%.3g tol=%.0e checked=%zu skipped=%zu\n", c.name.c_str(),
                c.passed() ? "PASS" : "FAIL", c.max_rel_error, c.tolerance, c.checked, c.skipped);
  }
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unbiased learning-to-rank simulation and two-tower training"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment (or sweep) config, JSON");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--seed", g.seed, "Run a single repetition with this seed");
  app.add_option("--policy", g.policy, "Logging policy preset: oracle|l1|l2|l3|random");
  app.add_option("--policy-w", g.policy_w, "Logging policy relevance weight in [0, 1]")->excludes("--policy");
  app.add_option("--sessions", g.sessions, "Click sessions per query");
  app.add_option("--workers", g.workers, "Parallel training jobs");
  app.add_option("--simd", g.simd, "Kernel set: scalar|avx2 (default: best available)");

  auto* simulate = app.add_subcommand("simulate", "Generate or load data, apply the policy and sample clicks");
  auto* train = app.add_subcommand("train", "Train one model on a simulated data directory");
  std::string data_dir, model_name;
  train->add_option("--data", data_dir, "Directory written by simulate")->required();
  train->add_option("--model", model_name, "Model name from the config (default: first)");

  auto* evaluate = app.add_subcommand("evaluate", "NDCG@k and IPS-NDCG@k of a checkpoint");
  std::string checkpoint, baseline;
  std::vector<int> ks;
  double alpha = 0.05;
  evaluate->add_option("--data", data_dir, "Directory written by simulate")->required();
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint.json")->required();
  evaluate->add_option("--baseline", baseline, "Baseline checkpoint for a paired t-test");
  evaluate->add_option("-k,--k", ks, "Cutoffs (repeatable)");
  evaluate->add_option("--alpha", alpha, "Significance level");

  auto* run = app.add_subcommand("run", "Full experiment: every seed, policy and model");
  auto* sweep = app.add_subcommand("sweep", "Grid over eta, tau or policy_w");
  auto* rep = app.add_subcommand("report", "Merge run directories into one comparison table");
  std::vector<std::string> runs;
  rep->add_option("runs", runs, "Run directories")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every layer and model variant");
  std::size_t trials = 100;
  std::uint64_t gc_seed = 0;
  gradcheck->add_option("--trials", trials, "Random shapes and seeds per case");
  gradcheck->add_option("--check-seed", gc_seed, "Base seed for the random cases");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (!g.simd.empty()) ultr::simd::set_active(ultr::simd::parse_isa(g.simd));
    if (*simulate) cmd_simulate(g);
    if (*train) cmd_train(g, data_dir, model_name);
    if (*evaluate) cmd_evaluate(g, data_dir, checkpoint, baseline, ks, alpha);
    if (*run) cmd_run(g);
    if (*sweep) cmd_sweep(g);
    if (*rep) {
      require_out(g);
      ultr::report(runs, g.out);
      std::printf("wrote %s/report.csv, report_matrix.csv, report.md\n", g.out.c_str());
    }
    if (*gradcheck) return cmd_gradcheck(trials, gc_seed);
  } catch (const ultr::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
