#include <algorithm>
#include <cmath>
#include <map>

#include "doctest.h"
#include "ultr/clicksim.hpp"
#include "ultr/dataset.hpp"
#include "ultr/models.hpp"
#include "ultr/nn/loss.hpp"
#include "ultr/policy.hpp"

using namespace ultr;

namespace {

struct Toy {
  Dataset train, valid;
  ClickLog log;
};

Toy toy(std::size_t queries = 40, double w = 1.0, std::uint64_t seed = 1) {
  SynthConfig cfg;
  cfg.num_queries = queries;
  cfg.docs_per_query = 10;
  cfg.dim = 6;
  cfg.teacher_seed = seed;
  const auto s = split(generate_synthetic(cfg), {0.75, 0.25, 0.0}, seed);
  Toy t{s.train, s.valid, {}};
  LoggingPolicy p{w};
  p.seed = seed;
  ClickModelConfig c;
  c.seed = seed;
  t.log = sample_clicks(apply_policy(t.train, p), t.train, c, 5);
  return t;
}

ModelSpec small(Variant v) {
  ModelSpec s;
  s.variant = v;
  s.relevance_widths = {8, 1};
  s.observation_widths = {4, 1};
  s.position_embedding_dim = 3;
  s.max_position = 12;
  return s;
}

std::map<std::string, nn::Matrix> param_map(ClickModel& m) {
  std::map<std::string, nn::Matrix> out;
  for (const auto& p : m.params()) out[p.name] = *p.value;
  for (const auto& b : m.buffers()) out[b.name] = *b.value;
  return out;
}

void zero_all(ClickModel& m) {
  for (const auto& p : m.params()) p.value->fill(0.0);
}

TrainConfig quick(int epochs = 5) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 32;
  tc.shuffle_seed = 3;
  tc.patience = 0;
  return tc;
}

}  // namespace

TEST_CASE("spec: names, validation, json round trip") {
  for (auto v : {Variant::biased, Variant::pal, Variant::gradrev, Variant::drop, Variant::drop_gradrev}) {
    CHECK(parse_variant(variant_name(v)) == v);
  }
  for (auto a : {AdvLabel::utility, AdvLabel::click, AdvLabel::prediction}) CHECK(parse_adv_label(adv_label_name(a)) == a);
  CHECK_THROWS_AS(parse_variant("dla"), ConfigError);

  ModelSpec s = small(Variant::drop_gradrev);
  s.eta = 0.4;
  s.tau = 0.3;
  s.adv_label = AdvLabel::prediction;
  const ModelSpec back = ModelSpec::from_json(s.to_json());
  CHECK(back.to_json() == s.to_json());

  s.tau = 1.0;
  CHECK_THROWS(s.validate());
  s.tau = 0.0;
  s.max_position = 0;
  CHECK_THROWS(s.validate());
  s.max_position = 5;
  s.relevance_widths = {8, 2};
  CHECK_THROWS(s.validate());
}

TEST_CASE("build: biased has no observation tower, same seed same parameters, position clamp") {
  ClickModel biased = build(small(Variant::biased), 6, 1);
  CHECK(biased.shared_observation_params().empty());
  CHECK(biased.observation_head_params().empty());
  CHECK(biased.adversarial_head_params().empty());

  ClickModel a = build(small(Variant::gradrev), 6, 9), b = build(small(Variant::gradrev), 6, 9);
  CHECK(param_map(a) == param_map(b));
  CHECK_FALSE(a.adversarial_head_params().empty());

  ClickModel pal = build(small(Variant::pal), 6, 1);
  CHECK(pal.position_index(1) == 0);
  CHECK(pal.position_index(12) == 11);
  CHECK(pal.position_index(120) == 11);
  CHECK_THROWS(pal.position_index(0));
}

TEST_CASE("forward_click: additive logits, dropout only in train mode") {
  ClickModel pal = build(small(Variant::pal), 6, 1);
  zero_all(pal);
  const nn::Matrix x(3, 6, 0.3);
  const std::vector<int> pos{1, 5, 40};
  for (double c : pal.forward_click(x, pos, nn::Mode::eval)) CHECK(c == 0.5);

  // f = 2 from the relevance output bias, g = -2 from the observation head bias.
  auto rel = pal.relevance_params();
  auto head = pal.observation_head_params();
  rel.back().value->fill(2.0);
  head.back().value->fill(-2.0);
  for (double c : pal.forward_click(x, pos, nn::Mode::eval)) CHECK(c == 0.5);
  CHECK_THROWS(pal.forward_click(x, std::vector<int>{1}, nn::Mode::eval));

  ClickModel drop = build(small(Variant::drop), 6, 1);
  ClickModel pal2 = build(small(Variant::pal), 6, 1);
  const nn::Matrix y(4, 6, -0.2);
  const std::vector<int> p4{1, 2, 3, 4};
  CHECK(drop.forward_click(y, p4, nn::Mode::eval) == pal2.forward_click(y, p4, nn::Mode::eval));
  CHECK(drop.forward_click(y, p4, nn::Mode::train) == pal2.forward_click(y, p4, nn::Mode::train));

  ClickModel biased = build(small(Variant::biased), 6, 1);
  CHECK_NOTHROW(biased.forward_click(y, {}, nn::Mode::eval));
}

TEST_CASE("adversarial targets") {
  const Toy t = toy(8);
  const ClickBatch batch = make_click_batch(t.train, t.log);
  ClickModel m = build(small(Variant::gradrev), 6, 2);
  const auto utility = m.adversarial_target(batch, AdvLabel::utility);
  const auto click = m.adversarial_target(batch, AdvLabel::click);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(utility[i] == batch.labels[i] / 4.0);
    CHECK(click[i] == batch.clicks[i]);
  }
  const auto before = m.adversarial_target(batch, AdvLabel::prediction);
  for (const auto& p : m.shared_observation_params()) {
    for (double& v : p.value->values()) v += 0.3;
  }
  CHECK(m.adversarial_target(batch, AdvLabel::prediction) == before);
  for (double v : before) CHECK((v > 0.0 && v < 1.0));
}

TEST_CASE("click batch: session-averaged click rates") {
  const Toy t = toy(8);
  const ClickBatch batch = make_click_batch(t.train, t.log);
  CHECK(batch.size() == t.train.num_documents());
  std::vector<double> sums(batch.size(), 0.0);
  std::size_t offset = 0;
  std::vector<std::size_t> start;
  for (const auto& g : t.train.groups) {
    start.push_back(offset);
    offset += g.size();
  }
  for (const auto& r : t.log.records) {
    for (std::size_t d = 0; d < r.clicks.size(); ++d) sums[start[r.logged.query_index] + d] += r.clicks[d];
  }
  for (std::size_t i = 0; i < batch.size(); ++i) CHECK(batch.clicks[i] == doctest::Approx(sums[i] / 5));
}

TEST_CASE("serving path ignores the observation tower") {
  const Toy t = toy(8);
  ClickModel m = build(small(Variant::pal), 6, 4);
  const nn::Matrix x = group_features(t.train.groups[0]);
  const auto before = m.predict_relevance(x);
  for (const auto& p : m.shared_observation_params()) p.value->fill(5.0);
  for (const auto& p : m.observation_head_params()) p.value->fill(-1.0);
  CHECK(m.predict_relevance(x) == before);
  CHECK(m.predict_relevance(x) == before);

  // Biased and PAL share relevance parameters by name.
  ClickModel biased = build(small(Variant::biased), 6, 4);
  CHECK(biased.predict_relevance(x) == before);

  // Per-document scoring: a permuted candidate list permutes the scores.
  QueryGroup rev = t.train.groups[0];
  std::reverse(rev.documents.begin(), rev.documents.end());
  auto scores = m.predict_relevance(group_features(rev));
  std::reverse(scores.begin(), scores.end());
  CHECK(scores == before);
}

TEST_CASE("train: zero learning rate leaves parameters unchanged") {
  const Toy t = toy();
  TrainConfig tc = quick(3);
  tc.optimizer.learning_rate = 0.0;
  ClickModel init = build(small(Variant::gradrev), 6, 5);
  const auto before = param_map(init);
  auto trained = train(build(small(Variant::gradrev), 6, 5), t.log, t.train, tc);
  auto after = param_map(trained.model);
  for (const auto& [name, value] : before) {
    if (name.find("running") != std::string::npos) continue;
    CHECK_MESSAGE(after.at(name) == value, name);
  }
}

TEST_CASE("train: loss falls on a small log, and errors are reported") {
  const Toy t = toy(20);
  TrainConfig tc = quick(50);
  tc.optimizer.learning_rate = 1e-2;
  const auto trained = train(build(small(Variant::pal), 6, 1), t.log, t.train, tc);
  CHECK(trained.history.back().train_loss < 0.9 * trained.history.front().train_loss);
  CHECK(trained.history.size() == 50);
  CHECK(trained.history_csv().rfind("epoch,train_loss,val_ndcg5\n", 0) == 0);

  ClickLog empty;
  CHECK_THROWS(train(build(small(Variant::pal), 6, 1), empty, t.train, tc));
  tc.optimizer.kind = nn::OptimizerKind::sgd;
  tc.optimizer.learning_rate = 1e300;
  CHECK_THROWS_AS(train(build(small(Variant::pal), 6, 1), t.log, t.train, tc), Error);
}

TEST_CASE("train: early stopping keeps the best validation epoch") {
  const Toy t = toy(40);
  TrainConfig tc = quick(30);
  tc.patience = 3;
  tc.optimizer.learning_rate = 1e-2;
  const auto trained = train(build(small(Variant::pal), 6, 1), t.log, t.train, tc, &t.valid);
  double best = -1;
  for (const auto& h : trained.history) best = std::max(best, h.val_ndcg);
  CHECK(trained.best_val_ndcg == best);
  CHECK(trained.history.size() <= static_cast<std::size_t>(trained.best_epoch + tc.patience));
  ClickModel copy = trained.model;
  CHECK(mean_ndcg(copy.scorer(), t.valid, 5).mean == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("equivalences: drop(0) and drop_gradrev(0, 0) train exactly like pal") {
  const Toy t = toy();
  const TrainConfig tc = quick(5);
  auto pal = train(build(small(Variant::pal), 6, 7, 8), t.log, t.train, tc, &t.valid);
  auto drop = train(build(small(Variant::drop), 6, 7, 8), t.log, t.train, tc, &t.valid);
  auto both = train(build(small(Variant::drop_gradrev), 6, 7, 8), t.log, t.train, tc, &t.valid);
  const auto ref = param_map(pal.model);
  CHECK(param_map(drop.model) == ref);
  auto combined = param_map(both.model);
  for (const auto& [name, value] : ref) CHECK_MESSAGE(combined.at(name) == value, name);
  CHECK(drop.history_csv() == pal.history_csv());
}

TEST_CASE("equivalence: gradrev with eta 0 leaves the observation trajectory of pal") {
  const Toy t = toy();
  const TrainConfig tc = quick(5);
  auto pal = train(build(small(Variant::pal), 6, 7), t.log, t.train, tc);
  auto gr = train(build(small(Variant::gradrev), 6, 7), t.log, t.train, tc);
  const auto ref = param_map(pal.model);
  const auto got = param_map(gr.model);
  for (const auto& [name, value] : ref) CHECK_MESSAGE(got.at(name) == value, name);
  bool head_moved = false;
  ClickModel fresh = build(small(Variant::gradrev), 6, 7);
  const auto init = param_map(fresh);
  for (const auto& p : gr.model.adversarial_head_params()) head_moved = head_moved || !(*p.value == init.at(p.name));
  CHECK(head_moved);
}

TEST_CASE("gradrev: small steps descend the objective each parameter group follows") {
  const Toy t = toy(8);
  const ClickBatch batch = make_click_batch(t.train, t.log);
  const auto step = [](const std::vector<nn::Param>& params) {
    for (const auto& p : params) {
      for (std::size_t i = 0; i < p.value->size(); ++i) p.value->values()[i] -= 1e-4 * p.grad->values()[i];
    }
  };
  for (auto label : {AdvLabel::utility, AdvLabel::click}) {
    for (double eta : {0.0, 0.5, 1.0}) {
      ModelSpec s = small(Variant::gradrev);
      s.eta = eta;
      s.adv_label = label;
      CAPTURE(eta);
      const std::vector<double> targets = [&] {
        ClickModel m = build(s, 6, 3);
        return m.adversarial_target(batch, label);
      }();

      // Everything except the shared observation layers follows L_click + L_rev.
      ClickModel m = build(s, 6, 3);
      m.freeze_batchnorm_stats(true);
      const double before = m.evaluate_loss(batch, nn::Mode::train, &targets).total();
      m.compute_gradients(batch, &targets);
      auto rest = m.relevance_params();
      for (const auto& group : {m.observation_head_params(), m.adversarial_head_params()}) {
        rest.insert(rest.end(), group.begin(), group.end());
      }
      step(eta == 0.0 ? m.params() : rest);
      CHECK(m.evaluate_loss(batch, nn::Mode::train, &targets).total() < before);

      // The shared layers follow L_click - eta * L_rev.
      ClickModel n = build(s, 6, 3);
      n.freeze_batchnorm_stats(true);
      const auto l0 = n.evaluate_loss(batch, nn::Mode::train, &targets);
      n.compute_gradients(batch, &targets);
      step(n.shared_observation_params());
      const auto l1 = n.evaluate_loss(batch, nn::Mode::train, &targets);
      CHECK(l1.click - eta * l1.adversarial < l0.click - eta * l0.adversarial);
    }
  }
}

TEST_CASE("grad_check_model: every variant and adversarial label") {
  const Toy t = toy(4);
  ClickBatch batch = make_click_batch(t.train, t.log);
  std::vector<std::size_t> rows(24);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  batch = batch.subset(rows);
  for (auto v : {Variant::biased, Variant::pal, Variant::gradrev, Variant::drop, Variant::drop_gradrev}) {
    for (auto label : {AdvLabel::utility, AdvLabel::click, AdvLabel::prediction}) {
      ModelSpec s = small(v);
      s.eta = s.has_gradrev() ? 0.7 : 0.0;
      s.tau = s.has_dropout() ? 0.3 : 0.0;
      s.adv_label = label;
      ClickModel m = build(s, 6, 11, 12);
      const auto r = grad_check_model(m, batch);
      INFO(variant_name(v) << "/" << adv_label_name(label) << " worst " << r.worst);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("checkpoint: model round trip") {
  ModelSpec s = small(Variant::drop_gradrev);
  s.eta = 0.2;
  s.tau = 0.1;
  ClickModel a = build(s, 6, 1);
  ClickModel b = build(s, 6, 2);
  b.load(a.checkpoint());
  CHECK(param_map(a) == param_map(b));
  ClickModel other = build(small(Variant::pal), 6, 1);
  CHECK_THROWS(other.load(build(small(Variant::biased), 6, 1).checkpoint()));
}
