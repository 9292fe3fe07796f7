#include "ultr/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ultr/text.hpp"

namespace ultr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- config reading

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* child(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const json* v = child(key);
    if (v == nullptr) throw ConfigError(where(key) + ": required key is missing");
    return *v;
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (const json* v = child(key)) out = convert<T>(*v, where(key));
  }

  template <class T>
  T get(const std::string& key) {
    return convert<T>(require(key), where(key));
  }

  std::string where(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    std::vector<std::string> unknown;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) unknown.push_back(k);
    }
    if (unknown.empty()) return;
    std::string msg = path_ + ": unknown key";
    if (unknown.size() > 1) msg += "s";
    for (std::size_t i = 0; i < unknown.size(); ++i) msg += (i == 0 ? " '" : ", '") + unknown[i] + "'";
    throw ConfigError(msg);
  }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw ConfigError(where + ": expected a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
      return v.get<T>();
    } else {
      if (!v.is_array()) throw ConfigError(where + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class T, std::size_t N>
std::array<T, N> to_array(const std::vector<T>& v, const std::string& where) {
  if (v.size() != N) throw ConfigError(where + ": expected " + std::to_string(N) + " values");
  std::array<T, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

DatasetSource read_dataset(const json& j) {
  ObjectReader r(j, "dataset");
  DatasetSource s;
  if (const json* syn = r.child("synthetic")) {
    ObjectReader sr(*syn, "dataset.synthetic");
    SynthConfig sc;
    sr.read("num_queries", sc.num_queries);
    sr.read("docs_per_query", sc.docs_per_query);
    sr.read("dim", sc.dim);
    if (const json* q = sr.child("grade_quantiles")) {
      sc.grade_quantiles = to_array<double, 4>(
          ObjectReader::convert<std::vector<double>>(*q, "dataset.synthetic.grade_quantiles"),
          "dataset.synthetic.grade_quantiles");
    }
    if (sr.has("teacher_seed")) s.teacher_seed = sr.get<std::uint64_t>("teacher_seed");
    sr.finish();
    s.synthetic = sc;
  }
  r.read("file", s.file);
  r.read("train_file", s.train_file);
  r.read("valid_file", s.valid_file);
  r.read("test_file", s.test_file);
  if (const json* sp = r.child("split")) {
    s.split = to_array<double, 3>(ObjectReader::convert<std::vector<double>>(*sp, "dataset.split"),
                                  "dataset.split");
  }
  r.read("normalize", s.normalize);
  r.read("y_max", s.y_max);
  r.finish();
  return s;
}

json dataset_to_json(const DatasetSource& s) {
  json j;
  if (s.synthetic) {
    json syn{{"num_queries", s.synthetic->num_queries},
             {"docs_per_query", s.synthetic->docs_per_query},
             {"dim", s.synthetic->dim},
             {"grade_quantiles", s.synthetic->grade_quantiles}};
    if (s.teacher_seed) syn["teacher_seed"] = *s.teacher_seed;
    j["synthetic"] = syn;
  }
  if (!s.file.empty()) j["file"] = s.file;
  if (!s.train_file.empty()) j["train_file"] = s.train_file;
  if (!s.valid_file.empty()) j["valid_file"] = s.valid_file;
  if (!s.test_file.empty()) j["test_file"] = s.test_file;
  j["split"] = s.split;
  j["normalize"] = s.normalize;
  j["y_max"] = s.y_max;
  return j;
}

NamedPolicy read_policy(const json& j, const std::string& where) {
  if (j.is_string()) {
    const std::string name = j.get<std::string>();
    return {name, policy_preset(name).w};
  }
  ObjectReader r(j, where);
  NamedPolicy p;
  p.w = r.get<double>("w");
  p.name = policy_label(p.w);
  r.read("name", p.name);
  r.finish();
  return p;
}

NamedModel read_model(const json& j, const std::string& where) {
  ObjectReader r(j, where);
  NamedModel m;
  m.spec.variant = parse_variant(r.get<std::string>("variant"));
  m.name = variant_name(m.spec.variant);
  r.read("name", m.name);
  r.read("relevance_widths", m.spec.relevance_widths);
  r.read("position_embedding_dim", m.spec.position_embedding_dim);
  r.read("observation_widths", m.spec.observation_widths);
  r.read("max_position", m.spec.max_position);
  r.read("eta", m.spec.eta);
  r.read("tau", m.spec.tau);
  if (r.has("adv_label")) m.spec.adv_label = parse_adv_label(r.get<std::string>("adv_label"));
  r.finish();
  return m;
}

TrainConfig read_train(const json& j) {
  ObjectReader r(j, "train");
  TrainConfig t;
  r.read("epochs", t.epochs);
  r.read("batch_size", t.batch_size);
  r.read("patience", t.patience);
  r.read("eval_k", t.eval_k);
  if (const json* o = r.child("optimizer")) {
    ObjectReader orr(*o, "train.optimizer");
    if (orr.has("kind")) t.optimizer.kind = nn::parse_optimizer_kind(orr.get<std::string>("kind"));
    orr.read("learning_rate", t.optimizer.learning_rate);
    orr.read("beta1", t.optimizer.beta1);
    orr.read("beta2", t.optimizer.beta2);
    orr.read("epsilon", t.optimizer.epsilon);
    orr.finish();
  }
  r.finish();
  return t;
}

json train_to_json(const TrainConfig& t) {
  return json{{"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"patience", t.patience},
              {"eval_k", t.eval_k},
              {"optimizer",
               {{"kind", nn::optimizer_kind_name(t.optimizer.kind)},
                {"learning_rate", t.optimizer.learning_rate},
                {"beta1", t.optimizer.beta1},
                {"beta2", t.optimizer.beta2},
                {"epsilon", t.optimizer.epsilon}}}};
}

SeedSet read_seed(const json& j, const std::string& where) {
  if (j.is_number()) return SeedSet::uniform(ObjectReader::convert<std::uint64_t>(j, where));
  ObjectReader r(j, where);
  SeedSet s = SeedSet::uniform(r.get<std::uint64_t>("id"));
  r.read("data", s.data);
  r.read("split", s.split);
  r.read("policy", s.policy);
  r.read("clicks", s.clicks);
  r.read("init", s.init);
  r.read("shuffle", s.shuffle);
  r.read("dropout", s.dropout);
  r.finish();
  return s;
}

json seed_to_json(const SeedSet& s) {
  if (s == SeedSet::uniform(s.id)) return s.id;
  return json{{"id", s.id},         {"data", s.data},   {"split", s.split},     {"policy", s.policy},
              {"clicks", s.clicks}, {"init", s.init},   {"shuffle", s.shuffle}, {"dropout", s.dropout}};
}

// Wraps validation failures of nested components as configuration errors.
template <class F>
void as_config_error(const std::string& where, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

// ---------------------------------------------------------------- output helpers

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex;
  ss.width(16);
  ss.fill('0');
  ss << v;
  return ss.str();
}

// Directory-safe rendering of a name.
std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    out += ok ? c : '_';
  }
  return out.empty() ? "_" : out;
}

void write_json(const fs::path& path, const json& j) { write_text_file(path.string(), j.dump(2) + "\n"); }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stdev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string metric_file(const std::string& metric, int k) { return metric + "_at_" + std::to_string(k) + ".csv"; }

const std::vector<std::string> kAggregateHeader{"policy", "model",   "metric",  "k",           "mean",
                                                "stdev",  "n_seeds", "delta",   "p_value",     "significant"};

// Runs `count` jobs on at most `workers` threads; the first exception wins.
template <class F>
void parallel_for(std::size_t count, std::size_t workers, F&& job) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count && !failed; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

// ---------------------------------------------------------------- ExperimentConfig

void ExperimentConfig::validate() const {
  const auto& d = dataset;
  const int sources = (d.synthetic ? 1 : 0) + (d.file.empty() ? 0 : 1) +
                      (d.train_file.empty() && d.valid_file.empty() && d.test_file.empty() ? 0 : 1);
  if (sources != 1) {
    throw ConfigError("dataset: give exactly one of 'synthetic', 'file' or 'train_file'/'valid_file'/'test_file'");
  }
  if (!(d.train_file.empty() && d.valid_file.empty() && d.test_file.empty()) &&
      (d.train_file.empty() || d.valid_file.empty() || d.test_file.empty())) {
    throw ConfigError("dataset: 'train_file', 'valid_file' and 'test_file' must be given together");
  }
  if (d.synthetic) as_config_error("dataset.synthetic", [&] { d.synthetic->validate(); });
  if (d.y_max < 1) throw ConfigError("dataset.y_max must be >= 1");
  if (!d.file.empty() || d.synthetic) {
    double sum = 0.0;
    for (double r : d.split) {
      if (!(r >= 0.0)) throw ConfigError("dataset.split ratios must be non-negative");
      sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("dataset.split ratios must sum to 1");
    if (d.split[0] == 0.0 || d.split[1] == 0.0 || d.split[2] == 0.0) {
      throw ConfigError("dataset.split: experiments need non-empty train, valid and test partitions");
    }
    if (d.synthetic && d.synthetic->num_queries < 3) throw ConfigError("dataset.synthetic.num_queries must be >= 3");
  }

  if (policies.empty()) throw ConfigError("policies: at least one logging policy is required");
  std::set<std::string> names;
  for (const auto& p : policies) {
    as_config_error("policies." + p.name, [&] { LoggingPolicy{p.w}.validate(); });
    if (!names.insert(p.name).second) throw ConfigError("policies: duplicate name '" + p.name + "'");
  }
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("clicks.epsilon must lie in [0, 1)");
  if (sessions < 1) throw ConfigError("clicks.sessions must be >= 1");
  if (test_sessions < 1) throw ConfigError("clicks.test_sessions must be >= 1");

  if (models.empty()) throw ConfigError("models: at least one model spec is required");
  names.clear();
  for (const auto& m : models) {
    as_config_error("models." + m.name, [&] { m.spec.validate(); });
    if (!names.insert(m.name).second) throw ConfigError("models: duplicate name '" + m.name + "'");
  }
  as_config_error("train", [&] { train.validate(); });

  if (eval.ks.empty()) throw ConfigError("eval.ks must list at least one cutoff");
  for (int k : eval.ks) {
    if (k < 1) throw ConfigError("eval.ks values must be >= 1");
  }
  if (!(eval.alpha > 0.0 && eval.alpha < 1.0)) throw ConfigError("eval.alpha must lie in (0, 1)");
  if (!eval.baseline.empty() && !names.count(eval.baseline)) {
    throw ConfigError("eval.baseline '" + eval.baseline + "' is not one of the model names");
  }
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  std::set<std::uint64_t> ids;
  for (const auto& s : seeds) {
    if (!ids.insert(s.id).second) throw ConfigError("seeds: duplicate id " + std::to_string(s.id));
  }
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

json ExperimentConfig::to_json() const {
  json ps = json::array();
  for (const auto& p : policies) ps.push_back({{"name", p.name}, {"w", p.w}});
  json ms = json::array();
  for (const auto& m : models) {
    json j = m.spec.to_json();
    j["name"] = m.name;
    ms.push_back(j);
  }
  json ss = json::array();
  for (const auto& s : seeds) ss.push_back(seed_to_json(s));
  return json{{"dataset", dataset_to_json(dataset)},
              {"policies", ps},
              {"clicks", {{"epsilon", epsilon}, {"sessions", sessions}, {"test_sessions", test_sessions}}},
              {"models", ms},
              {"train", train_to_json(train)},
              {"eval", {{"ks", eval.ks}, {"alpha", eval.alpha}, {"baseline", eval.baseline}}},
              {"seeds", ss},
              {"workers", workers}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig cfg;
  as_config_error("config", [&] {
    ObjectReader r(j, "config");
    cfg.dataset = read_dataset(r.require("dataset"));

    const json& ps = r.require("policies");
    if (!ps.is_array()) throw ConfigError("config.policies: expected an array");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      cfg.policies.push_back(read_policy(ps[i], "policies[" + std::to_string(i) + "]"));
    }

    if (const json* c = r.child("clicks")) {
      ObjectReader cr(*c, "clicks");
      cr.read("epsilon", cfg.epsilon);
      cr.read("sessions", cfg.sessions);
      cr.read("test_sessions", cfg.test_sessions);
      cr.finish();
    }

    const json& ms = r.require("models");
    if (!ms.is_array()) throw ConfigError("config.models: expected an array");
    for (std::size_t i = 0; i < ms.size(); ++i) {
      cfg.models.push_back(read_model(ms[i], "models[" + std::to_string(i) + "]"));
    }

    if (const json* t = r.child("train")) cfg.train = read_train(*t);

    if (const json* e = r.child("eval")) {
      ObjectReader er(*e, "eval");
      er.read("ks", cfg.eval.ks);
      er.read("alpha", cfg.eval.alpha);
      er.read("baseline", cfg.eval.baseline);
      er.finish();
    }

    const json& ss = r.require("seeds");
    if (!ss.is_array()) throw ConfigError("config.seeds: expected an array");
    for (std::size_t i = 0; i < ss.size(); ++i) {
      cfg.seeds.push_back(read_seed(ss[i], "seeds[" + std::to_string(i) + "]"));
    }
    r.read("workers", cfg.workers);
    r.finish();
  });
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------- SweepConfig

SweepParameter parse_sweep_parameter(const std::string& name) {
  if (name == "eta") return SweepParameter::eta;
  if (name == "tau") return SweepParameter::tau;
  if (name == "policy_w") return SweepParameter::policy_w;
  throw ConfigError("unknown sweep parameter '" + name + "' (expected eta|tau|policy_w)");
}

const char* sweep_parameter_name(SweepParameter p) {
  switch (p) {
    case SweepParameter::eta:
      return "eta";
    case SweepParameter::tau:
      return "tau";
    case SweepParameter::policy_w:
      return "policy_w";
  }
  return "unknown";
}

namespace {

bool applies(SweepParameter p, const ModelSpec& spec) {
  switch (p) {
    case SweepParameter::eta:
      return spec.has_gradrev();
    case SweepParameter::tau:
      return spec.has_dropout();
    case SweepParameter::policy_w:
      return true;
  }
  return false;
}

ExperimentConfig sweep_point_config(const SweepConfig& sweep, double value) {
  ExperimentConfig cfg = sweep.base;
  std::vector<NamedModel> kept;
  for (NamedModel m : cfg.models) {
    if (!applies(sweep.parameter, m.spec)) continue;
    if (sweep.parameter == SweepParameter::eta) m.spec.eta = value;
    if (sweep.parameter == SweepParameter::tau) m.spec.tau = value;
    kept.push_back(std::move(m));
  }
  cfg.models = std::move(kept);
  if (sweep.parameter == SweepParameter::policy_w) cfg.policies = {{"policy_w", value}};
  const bool baseline_kept = std::any_of(cfg.models.begin(), cfg.models.end(),
                                         [&](const NamedModel& m) { return m.name == cfg.eval.baseline; });
  if (!baseline_kept) cfg.eval.baseline.clear();
  return cfg;
}

}  // namespace

void SweepConfig::validate() const {
  base.validate();
  if (grid.empty()) throw ConfigError("sweep.grid must contain at least one value");
  if (std::none_of(base.models.begin(), base.models.end(),
                   [&](const NamedModel& m) { return applies(parameter, m.spec); })) {
    throw ConfigError(std::string("sweep parameter '") + sweep_parameter_name(parameter) +
                      "' applies to none of the model specs");
  }
  for (double v : grid) {
    const bool ok = parameter == SweepParameter::eta   ? (std::isfinite(v) && v >= 0.0)
                    : parameter == SweepParameter::tau ? (v >= 0.0 && v < 1.0)
                                                       : (v >= 0.0 && v <= 1.0);
    if (!ok) {
      throw ConfigError("sweep.grid value " + format_double(v) + " is outside the domain of " +
                        sweep_parameter_name(parameter));
    }
  }
  for (double v : grid) sweep_point_config(*this, v).validate();
}

json SweepConfig::to_json() const {
  return json{{"base", base.to_json()}, {"parameter", sweep_parameter_name(parameter)}, {"grid", grid}};
}

SweepConfig SweepConfig::from_json(const json& j) {
  SweepConfig cfg;
  as_config_error("sweep", [&] {
    ObjectReader r(j, "sweep");
    cfg.base = ExperimentConfig::from_json(r.require("base"));
    cfg.parameter = parse_sweep_parameter(r.get<std::string>("parameter"));
    cfg.grid = r.get<std::vector<double>>("grid");
    r.finish();
  });
  cfg.validate();
  return cfg;
}

SweepConfig SweepConfig::load(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------- data preparation

PreparedData prepare_data(const DatasetSource& source, const SeedSet& seeds) {
  Dataset train, valid, test;
  if (!source.train_file.empty()) {
    train = load_libsvm_ranking(source.train_file, source.y_max);
    valid = load_libsvm_ranking(source.valid_file, source.y_max);
    test = load_libsvm_ranking(source.test_file, source.y_max);
    const std::size_t dim = std::max({train.dim, valid.dim, test.dim});
    for (Dataset* d : {&train, &valid, &test}) {
      for (auto& g : d->groups) {
        for (auto& doc : g.documents) doc.features.resize(dim, 0.0);
      }
      d->dim = dim;
    }
  } else {
    Dataset all;
    if (source.synthetic) {
      SynthConfig sc = *source.synthetic;
      sc.teacher_seed = source.teacher_seed.value_or(seeds.data);
      all = generate_synthetic(sc);
    } else {
      all = load_libsvm_ranking(source.file, source.y_max);
    }
    SplitResult parts = split(all, source.split, seeds.split);
    train = std::move(parts.train);
    valid = std::move(parts.valid);
    test = std::move(parts.test);
  }
  if (train.groups.empty()) throw ValidationError("training split is empty");

  PreparedData out;
  if (source.normalize) {
    NormalizedSplits n = normalize_features(train, {valid, test});
    out.transform = std::move(n.transform);
    out.train = std::move(n.datasets[0]);
    out.valid = std::move(n.datasets[1]);
    out.test = std::move(n.datasets[2]);
  } else {
    out.transform = FeatureTransform::identity(train.dim);
    out.train = std::move(train);
    out.valid = std::move(valid);
    out.test = std::move(test);
  }
  return out;
}

ClickLog simulate_log(const Dataset& dataset, const NamedPolicy& policy, double epsilon, std::size_t sessions,
                      std::uint64_t policy_seed, std::uint64_t click_seed) {
  LoggingPolicy lp{policy.w};
  lp.seed = policy_seed;
  const auto logged = apply_policy(dataset, lp);
  ClickModelConfig cc{epsilon, dataset.y_max, click_seed};
  ClickLog log = sample_clicks(logged, dataset, cc, sessions);
  log.provenance.policy = lp;
  return log;
}

// ---------------------------------------------------------------- run_experiment

const AggregateRow& ExperimentResult::row(const std::string& policy, const std::string& model,
                                          const std::string& metric, int k) const {
  for (const auto& r : rows) {
    if (r.policy == policy && r.model == model && r.metric == metric && r.k == k) return r;
  }
  throw Error("no aggregate row for " + policy + "/" + model + "/" + metric + "@" + std::to_string(k));
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows, double alpha) {
  std::string out = csv_row(kAggregateHeader) + "\n";
  for (const auto& r : rows) {
    std::vector<std::string> f{r.policy,
                               r.model,
                               r.metric,
                               std::to_string(r.k),
                               format_double(r.mean),
                               format_double(r.stdev),
                               std::to_string(r.per_seed.size())};
    if (r.vs_baseline) {
      f.push_back(format_double(r.vs_baseline->mean_difference));
      f.push_back(format_double(r.vs_baseline->p_value));
      f.push_back(r.vs_baseline->p_value < alpha ? "1" : "0");
    } else {
      f.insert(f.end(), {"", "", ""});
    }
    out += csv_row(f) + "\n";
  }
  return out;
}

namespace {

// Data and click logs shared by every model of one (seed, policy).
struct PolicyContext {
  const PreparedData* data = nullptr;
  ClickLog train_log;
  ClickBatch rows;
  ClickLog test_log;
  PropensityTable propensities;
};

CellResult run_cell(const ExperimentConfig& cfg, const SeedSet& seeds, const NamedPolicy& policy,
                    const NamedModel& named, const PolicyContext& ctx, const fs::path& dir) {
  const PreparedData& data = *ctx.data;
  TrainConfig tc = cfg.train;
  tc.shuffle_seed = seeds.shuffle;
  TrainedModel trained =
      train(build(named.spec, data.train.dim, seeds.init, seeds.dropout), ctx.rows, tc, &data.valid);

  CellResult cell;
  cell.policy = policy.name;
  cell.model = named.name;
  cell.seed = seeds.id;
  cell.best_epoch = trained.best_epoch;
  const QueryScorer scorer = trained.model.scorer();
  for (int k : cfg.eval.ks) {
    cell.ndcg.push_back(mean_ndcg(scorer, data.test, k));
    cell.ips_ndcg.push_back(ips_ndcg_at_k(scorer, data.test, ctx.test_log, ctx.propensities, k));
  }

  if (!dir.empty()) {
    fs::create_directories(dir);
    json ckpt = trained.model.checkpoint();
    ckpt["meta"]["name"] = named.name;
    ckpt["meta"]["policy"] = policy.name;
    ckpt["meta"]["seed"] = seeds.id;
    ckpt["meta"]["best_epoch"] = trained.best_epoch;
    write_json(dir / "checkpoint.json", ckpt);
    write_text_file((dir / "history.csv").string(), trained.history_csv());
    json metrics = json::array();
    for (std::size_t i = 0; i < cfg.eval.ks.size(); ++i) {
      for (const EvalReport* rep : {&cell.ndcg[i], &cell.ips_ndcg[i]}) {
        write_text_file((dir / metric_file(rep->metric, rep->k)).string(), rep->to_csv());
        metrics.push_back(rep->summary_json());
      }
    }
    write_json(dir / "summary.json", json{{"policy", policy.name},
                                          {"model", named.name},
                                          {"seed", seeds.id},
                                          {"best_epoch", trained.best_epoch},
                                          {"best_val_ndcg", trained.best_val_ndcg},
                                          {"epochs_run", trained.history.size()},
                                          {"metrics", metrics}});
  }
  return cell;
}

std::vector<double> pooled(const std::vector<const CellResult*>& cells, bool ips, std::size_t k_index) {
  std::vector<double> out;
  for (const CellResult* c : cells) {
    const EvalReport& r = ips ? c->ips_ndcg[k_index] : c->ndcg[k_index];
    out.insert(out.end(), r.per_query.begin(), r.per_query.end());
  }
  return out;
}

std::vector<AggregateRow> aggregate(const ExperimentConfig& cfg, const std::vector<CellResult>& cells) {
  // (policy, model) -> cells in seed order
  std::map<std::pair<std::string, std::string>, std::vector<const CellResult*>> by_key;
  for (const auto& c : cells) by_key[{c.policy, c.model}].push_back(&c);

  std::vector<AggregateRow> rows;
  for (const auto& p : cfg.policies) {
    for (const auto& m : cfg.models) {
      const auto& mine = by_key.at({p.name, m.name});
      for (bool ips : {false, true}) {
        for (std::size_t ki = 0; ki < cfg.eval.ks.size(); ++ki) {
          AggregateRow row;
          row.policy = p.name;
          row.model = m.name;
          row.metric = ips ? "ips_ndcg" : "ndcg";
          row.k = cfg.eval.ks[ki];
          for (const CellResult* c : mine) row.per_seed.push_back((ips ? c->ips_ndcg[ki] : c->ndcg[ki]).mean);
          row.mean = mean_of(row.per_seed);
          row.stdev = stdev_of(row.per_seed);
          if (!cfg.eval.baseline.empty() && m.name != cfg.eval.baseline) {
            const auto a = pooled(mine, ips, ki);
            const auto b = pooled(by_key.at({p.name, cfg.eval.baseline}), ips, ki);
            if (a.size() >= 2) row.vs_baseline = paired_t_test(a, b, cfg.eval.alpha);
          }
          rows.push_back(std::move(row));
        }
      }
    }
  }
  return rows;
}

json aggregate_json(const ExperimentConfig& cfg, const std::vector<AggregateRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json j{{"policy", r.policy}, {"model", r.model}, {"metric", r.metric}, {"k", r.k},
           {"mean", r.mean},     {"stdev", r.stdev}, {"per_seed", json::object()}};
    for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
      j["per_seed"][std::to_string(cfg.seeds[i].id)] = r.per_seed[i];
    }
    if (r.vs_baseline) {
      const auto& t = *r.vs_baseline;
      j["vs_baseline"] = {{"baseline", cfg.eval.baseline},
                          {"delta", t.mean_difference},
                          {"t", std::isfinite(t.t) ? json(t.t) : json(t.t > 0 ? "inf" : "-inf")},
                          {"p_value", t.p_value},
                          {"significant", t.significant},
                          {"n", t.n}};
    }
    out.push_back(j);
  }
  return json{{"alpha", cfg.eval.alpha}, {"baseline", cfg.eval.baseline}, {"rows", out}};
}

std::string ndcg_matrix_csv(const ExperimentConfig& cfg, const std::vector<AggregateRow>& rows) {
  const int k = cfg.eval.ks.front();
  std::vector<std::string> header{"policy"};
  for (const auto& m : cfg.models) header.push_back(m.name);
  std::string out = csv_row(header) + "\n";
  for (const auto& p : cfg.policies) {
    std::vector<std::string> f{p.name};
    for (const auto& m : cfg.models) {
      for (const auto& r : rows) {
        if (r.policy == p.name && r.model == m.name && r.metric == "ndcg" && r.k == k) f.push_back(format_double(r.mean));
      }
    }
    out += csv_row(f) + "\n";
  }
  return out;
}

std::string per_seed_csv(const ExperimentConfig& cfg, const std::vector<AggregateRow>& rows) {
  std::string out = csv_row({"policy", "model", "metric", "k", "seed", "value"}) + "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
      out += csv_row({r.policy, r.model, r.metric, std::to_string(r.k), std::to_string(cfg.seeds[i].id),
                      format_double(r.per_seed[i])}) +
             "\n";
    }
  }
  return out;
}

json manifest(const std::string& kind, const json& config) {
  const std::string canonical = config.dump();
  return json{{"tool", "ultr"},
              {"version", kVersion},
              {"kind", kind},
              {"config_hash", "fnv1a64:" + hex64(fnv1a(canonical))},
              {"config", config}};
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const fs::path root(out_dir);

  // Data for every seed, then click logs for every (seed, policy).
  std::vector<PreparedData> data(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.workers,
               [&](std::size_t i) { data[i] = prepare_data(cfg.dataset, cfg.seeds[i]); });

  const std::size_t np = cfg.policies.size();
  std::vector<PolicyContext> contexts(cfg.seeds.size() * np);
  parallel_for(contexts.size(), cfg.workers, [&](std::size_t i) {
    const SeedSet& s = cfg.seeds[i / np];
    const NamedPolicy& p = cfg.policies[i % np];
    PolicyContext& ctx = contexts[i];
    ctx.data = &data[i / np];
    ctx.train_log = simulate_log(ctx.data->train, p, cfg.epsilon, cfg.sessions, s.policy, s.clicks);
    ctx.rows = make_click_batch(ctx.data->train, ctx.train_log);
    // Held-out clicks use their own substreams of the same seeds.
    ctx.test_log = simulate_log(ctx.data->test, p, cfg.epsilon, cfg.test_sessions, mix_seed(s.policy, fnv1a("test")),
                                mix_seed(s.clicks, fnv1a("test")));
    ctx.propensities = estimate_propensities(ctx.train_log);
  });

  const std::size_t nm = cfg.models.size();
  std::vector<CellResult> cells(contexts.size() * nm);
  parallel_for(cells.size(), cfg.workers, [&](std::size_t i) {
    const std::size_t ci = i / nm;
    const SeedSet& s = cfg.seeds[ci / np];
    const NamedPolicy& p = cfg.policies[ci % np];
    const NamedModel& m = cfg.models[i % nm];
    const fs::path dir =
        out_dir.empty() ? fs::path() : root / ("seed_" + std::to_string(s.id)) / slug(p.name) / slug(m.name);
    cells[i] = run_cell(cfg, s, p, m, contexts[ci], dir);
  });

  ExperimentResult result;
  result.cells = std::move(cells);
  result.rows = aggregate(cfg, result.cells);

  if (!out_dir.empty()) {
    fs::create_directories(root);
    write_text_file((root / "aggregate.csv").string(), aggregate_csv(result.rows, cfg.eval.alpha));
    write_json(root / "aggregate.json", aggregate_json(cfg, result.rows));
    write_text_file((root / "per_seed.csv").string(), per_seed_csv(cfg, result.rows));
    write_text_file((root / "ndcg_matrix.csv").string(), ndcg_matrix_csv(cfg, result.rows));
    write_json(root / "manifest.json", manifest("experiment", cfg.to_json()));
  }
  return result;
}

// ---------------------------------------------------------------- run_sweep

std::vector<SweepPoint> run_sweep(const SweepConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const fs::path root(out_dir);
  const std::string pname = sweep_parameter_name(cfg.parameter);

  std::vector<SweepPoint> points;
  for (double v : cfg.grid) {
    const ExperimentConfig point = sweep_point_config(cfg, v);
    const std::string sub = out_dir.empty() ? "" : (root / (pname + "_" + format_double(v))).string();
    points.push_back({v, run_experiment(point, sub)});
  }
  if (out_dir.empty()) return points;

  const ExperimentConfig first = sweep_point_config(cfg, cfg.grid.front());
  std::string table = csv_row({"parameter", "value", "policy", "model", "metric", "k", "mean", "stdev"}) + "\n";
  for (const auto& pt : points) {
    for (const auto& r : pt.result.rows) {
      table += csv_row({pname, format_double(pt.value), r.policy, r.model, r.metric, std::to_string(r.k),
                        format_double(r.mean), format_double(r.stdev)}) +
               "\n";
    }
  }
  write_text_file((root / "sweep.csv").string(), table);

  // One plot-ready curve per (policy, model, metric, k): value, mean, stdev, one column per seed.
  std::vector<std::string> header{pname, "mean", "stdev"};
  for (const auto& s : first.seeds) header.push_back("seed_" + std::to_string(s.id));
  json curves = json::array();
  for (std::size_t ri = 0; ri < points.front().result.rows.size(); ++ri) {
    const AggregateRow& proto = points.front().result.rows[ri];
    std::string csv = csv_row(header) + "\n";
    for (const auto& pt : points) {
      const AggregateRow& r = pt.result.rows[ri];
      std::vector<std::string> f{format_double(pt.value), format_double(r.mean), format_double(r.stdev)};
      for (double x : r.per_seed) f.push_back(format_double(x));
      csv += csv_row(f) + "\n";
    }
    const std::string name = "curve_" + slug(proto.policy) + "_" + slug(proto.model) + "_" + proto.metric + "_at_" +
                             std::to_string(proto.k) + ".csv";
    write_text_file((root / name).string(), csv);
    curves.push_back({{"file", name}, {"policy", proto.policy}, {"model", proto.model},
                      {"metric", proto.metric}, {"k", proto.k}});
  }
  json m = manifest("sweep", cfg.to_json());
  m["curves"] = curves;
  write_json(root / "manifest.json", m);
  return points;
}

// ---------------------------------------------------------------- report

void report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (run_dirs.empty()) throw ValidationError("report needs at least one run directory");

  struct Row {
    std::string run;
    std::vector<std::string> fields;  // kAggregateHeader order
    double mean = 0.0;
    double alpha = 0.05;
  };
  std::vector<Row> rows;
  std::set<std::string> keys;
  for (const auto& dir : run_dirs) {
    const fs::path root(dir);
    const json man = json::parse(read_text_file((root / "manifest.json").string()));
    if (!man.contains("kind") || man.at("kind") != "experiment") {
      throw ValidationError(dir + ": not an experiment run directory");
    }
    const double alpha = man.at("config").at("eval").at("alpha").get<double>();
    std::istringstream in(read_text_file((root / "aggregate.csv").string()));
    std::string line;
    std::getline(in, line);
    if (parse_csv_row(line) != kAggregateHeader) {
      throw ValidationError(dir + "/aggregate.csv: unexpected columns (schema mismatch)");
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto f = parse_csv_row(line);
      if (f.size() != kAggregateHeader.size()) {
        throw ValidationError(dir + "/aggregate.csv line " + std::to_string(lineno) + ": wrong field count");
      }
      const std::string key = f[0] + "\x1f" + f[1] + "\x1f" + f[2] + "\x1f" + f[3];
      if (!keys.insert(key).second) {
        throw ValidationError("duplicate row " + f[0] + "/" + f[1] + "/" + f[2] + "@" + f[3] + " in " + dir);
      }
      Row r{dir, f, 0.0, alpha};
      try {
        r.mean = std::stod(f[4]);
      } catch (const std::exception&) {
        throw ValidationError(dir + "/aggregate.csv line " + std::to_string(lineno) + ": bad mean");
      }
      rows.push_back(std::move(r));
    }
  }

  // Best flag: highest mean within each (policy, metric, k); first wins ties.
  std::map<std::string, std::size_t> best;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& f = rows[i].fields;
    const std::string group = f[0] + "\x1f" + f[2] + "\x1f" + f[3];
    const auto it = best.find(group);
    if (it == best.end() || rows[i].mean > rows[it->second].mean) best[group] = i;
  }
  std::set<std::size_t> best_rows;
  for (const auto& [g, i] : best) best_rows.insert(i);

  const auto stars = [](const Row& r) -> std::string {
    if (r.fields[8].empty()) return "";
    const double p = std::stod(r.fields[8]);
    return p < r.alpha ? "*" : "";
  };

  std::vector<std::string> header{"run"};
  header.insert(header.end(), kAggregateHeader.begin(), kAggregateHeader.end());
  header.insert(header.end(), {"stars", "best"});
  std::string csv = csv_row(header) + "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<std::string> f{rows[i].run};
    f.insert(f.end(), rows[i].fields.begin(), rows[i].fields.end());
    f.push_back(stars(rows[i]));
    f.push_back(best_rows.count(i) ? "1" : "0");
    csv += csv_row(f) + "\n";
  }

  // Table-style matrix of NDCG at the smallest cutoff present.
  int k = 0;
  for (const auto& r : rows) {
    if (r.fields[2] == "ndcg") {
      const int rk = std::stoi(r.fields[3]);
      if (k == 0 || rk < k) k = rk;
    }
  }
  std::vector<std::string> policies, models;
  for (const auto& r : rows) {
    if (r.fields[2] != "ndcg" || std::stoi(r.fields[3]) != k) continue;
    if (std::find(policies.begin(), policies.end(), r.fields[0]) == policies.end()) policies.push_back(r.fields[0]);
    if (std::find(models.begin(), models.end(), r.fields[1]) == models.end()) models.push_back(r.fields[1]);
  }
  std::vector<std::string> mh{"policy"};
  mh.insert(mh.end(), models.begin(), models.end());
  mh.push_back("best");
  std::string matrix = csv_row(mh) + "\n";
  std::string md = "| policy |";
  for (const auto& m : models) md += " " + m + " |";
  md += "\n|---|";
  for (std::size_t i = 0; i < models.size(); ++i) md += "---|";
  md += "\n";
  for (const auto& p : policies) {
    std::vector<std::string> f{p};
    std::string best_model;
    md += "| " + p + " |";
    for (const auto& m : models) {
      std::string cell;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& rf = rows[i].fields;
        if (rf[0] == p && rf[1] == m && rf[2] == "ndcg" && std::stoi(rf[3]) == k) {
          cell = format_fixed(rows[i].mean, 4) + stars(rows[i]);
          if (best_rows.count(i)) best_model = m;
        }
      }
      f.push_back(cell);
      md += " " + (best_model == m && !cell.empty() ? "**" + cell + "**" : cell) + " |";
    }
    f.push_back(best_model);
    matrix += csv_row(f) + "\n";
    md += "\n";
  }

  const fs::path root(out_dir);
  fs::create_directories(root);
  write_text_file((root / "report.csv").string(), csv);
  write_text_file((root / "report_matrix.csv").string(), matrix);
  write_text_file((root / "report.md").string(),
                  "NDCG@" + std::to_string(k) + " (* significant vs baseline, bold = best per policy)\n\n" + md);
}

}  // namespace ultr
