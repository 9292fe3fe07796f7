#include "ultr/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ultr/nn/checkpoint.hpp"
#include "ultr/nn/loss.hpp"
#include "ultr/text.hpp"

namespace ultr {

using nn::Matrix;
using nn::Mode;

Variant parse_variant(const std::string& name) {
  if (name == "biased") return Variant::biased;
  if (name == "pal") return Variant::pal;
  if (name == "gradrev") return Variant::gradrev;
  if (name == "drop") return Variant::drop;
  if (name == "drop_gradrev") return Variant::drop_gradrev;
  throw ConfigError("unknown model variant '" + name + "' (expected biased|pal|gradrev|drop|drop_gradrev)");
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::biased:
      return "biased";
    case Variant::pal:
      return "pal";
    case Variant::gradrev:
      return "gradrev";
    case Variant::drop:
      return "drop";
    case Variant::drop_gradrev:
      return "drop_gradrev";
  }
  return "unknown";
}

AdvLabel parse_adv_label(const std::string& name) {
  if (name == "utility") return AdvLabel::utility;
  if (name == "click") return AdvLabel::click;
  if (name == "prediction") return AdvLabel::prediction;
  throw ConfigError("unknown adversarial label '" + name + "' (expected utility|click|prediction)");
}

const char* adv_label_name(AdvLabel a) {
  switch (a) {
    case AdvLabel::utility:
      return "utility";
    case AdvLabel::click:
      return "click";
    case AdvLabel::prediction:
      return "prediction";
  }
  return "unknown";
}

// ---------------------------------------------------------------- ModelSpec

void ModelSpec::validate() const {
  const auto check_widths = [](const std::vector<std::size_t>& w, const char* tower) {
    if (w.empty()) throw ValidationError(std::string(tower) + " tower needs at least one width");
    if (std::any_of(w.begin(), w.end(), [](std::size_t x) { return x == 0; })) {
      throw ValidationError(std::string(tower) + " tower widths must be positive");
    }
    if (w.back() != 1) throw ValidationError(std::string(tower) + " tower must end in a single output");
  };
  check_widths(relevance_widths, "relevance");
  if (has_observation()) {
    check_widths(observation_widths, "observation");
    if (position_embedding_dim == 0) throw ValidationError("position embedding dim must be positive");
    if (max_position < 1) throw ValidationError("max_position must be >= 1");
  }
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ValidationError("eta must be finite and >= 0");
  if (!(tau >= 0.0 && tau < 1.0)) throw ValidationError("tau must lie in [0, 1)");
}

nlohmann::json ModelSpec::to_json() const {
  return nlohmann::json{{"variant", variant_name(variant)},
                        {"relevance_widths", relevance_widths},
                        {"position_embedding_dim", position_embedding_dim},
                        {"observation_widths", observation_widths},
                        {"max_position", max_position},
                        {"eta", eta},
                        {"tau", tau},
                        {"adv_label", adv_label_name(adv_label)}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.variant = parse_variant(j.at("variant").get<std::string>());
  s.relevance_widths = j.at("relevance_widths").get<std::vector<std::size_t>>();
  s.position_embedding_dim = j.at("position_embedding_dim").get<std::size_t>();
  s.observation_widths = j.at("observation_widths").get<std::vector<std::size_t>>();
  s.max_position = j.at("max_position").get<int>();
  s.eta = j.at("eta").get<double>();
  s.tau = j.at("tau").get<double>();
  s.adv_label = parse_adv_label(j.at("adv_label").get<std::string>());
  s.validate();
  return s;
}

// ---------------------------------------------------------------- ClickBatch

ClickBatch ClickBatch::subset(std::span<const std::size_t> rows) const {
  ClickBatch out;
  out.y_max = y_max;
  out.features = Matrix(rows.size(), features.cols());
  out.positions.reserve(rows.size());
  out.clicks.reserve(rows.size());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = features.row(rows[i]);
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    if (!positions.empty()) out.positions.push_back(positions[rows[i]]);
    out.clicks.push_back(clicks[rows[i]]);
    if (!labels.empty()) out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

ClickBatch make_click_batch(const Dataset& dataset, const ClickLog& log) {
  if (log.records.empty()) throw ValidationError("training needs a non-empty click log");
  std::vector<std::size_t> offset(dataset.groups.size() + 1, 0);
  for (std::size_t q = 0; q < dataset.groups.size(); ++q) offset[q + 1] = offset[q] + dataset.groups[q].size();
  const std::size_t n = offset.back();

  std::vector<int> positions(n, 0);
  std::vector<double> clicks(n, 0.0);
  std::vector<double> impressions(n, 0.0);
  for (const auto& r : log.records) {
    const std::size_t q = r.logged.query_index;
    if (q >= dataset.groups.size() || dataset.groups[q].size() != r.clicks.size()) {
      throw ValidationError("click log does not align with the training dataset");
    }
    for (std::size_t i = 0; i < r.clicks.size(); ++i) {
      const std::size_t row = offset[q] + i;
      if (impressions[row] > 0.0 && positions[row] != r.logged.positions[i]) {
        throw ValidationError("click log has inconsistent positions across sessions for query " +
                              r.logged.query_id);
      }
      positions[row] = r.logged.positions[i];
      clicks[row] += r.clicks[i];
      impressions[row] += 1.0;
    }
  }

  ClickBatch batch;
  batch.y_max = dataset.y_max;
  std::vector<std::size_t> kept;
  for (std::size_t row = 0; row < n; ++row) {
    if (impressions[row] > 0.0) kept.push_back(row);
  }
  batch.features = Matrix(kept.size(), dataset.dim);
  std::size_t out_row = 0;
  for (std::size_t q = 0; q < dataset.groups.size(); ++q) {
    for (std::size_t i = 0; i < dataset.groups[q].size(); ++i) {
      const std::size_t row = offset[q] + i;
      if (impressions[row] == 0.0) continue;
      const auto& f = dataset.groups[q].documents[i].features;
      std::copy(f.begin(), f.end(), batch.features.row(out_row).begin());
      batch.positions.push_back(positions[row]);
      batch.clicks.push_back(clicks[row] / impressions[row]);
      batch.labels.push_back(dataset.groups[q].documents[i].label);
      ++out_row;
    }
  }
  return batch;
}

// ---------------------------------------------------------------- ClickModel

ClickModel::ClickModel(ModelSpec spec, std::size_t input_dim, std::uint64_t init_seed,
                       std::uint64_t dropout_seed)
    : spec_(std::move(spec)), input_dim_(input_dim) {
  spec_.validate();
  if (input_dim_ == 0) throw ValidationError("model input dimension must be positive");
  relevance_ = nn::make_mlp(input_dim_, spec_.relevance_widths);
  relevance_.initialize(init_seed, "relevance");
  if (!spec_.has_observation()) return;

  embedding_.emplace(static_cast<std::size_t>(spec_.max_position), spec_.position_embedding_dim);
  Rng emb_rng = make_stream(init_seed, Stream::init, fnv1a("observation.embedding"));
  embedding_->initialize(emb_rng);

  const std::span<const std::size_t> widths(spec_.observation_widths);
  const auto hidden = widths.first(widths.size() - 1);
  observation_shared_ = nn::make_hidden_stack(spec_.position_embedding_dim, hidden);
  observation_shared_.initialize(init_seed, "observation.shared");
  const std::size_t shared_width = hidden.empty() ? spec_.position_embedding_dim : hidden.back();
  observation_head_.add<nn::Dense>(shared_width, 1);
  observation_head_.initialize(init_seed, "observation.head");

  if (spec_.has_dropout()) dropout_.emplace(spec_.tau, mix_seed(dropout_seed, static_cast<std::uint64_t>(Stream::dropout)));
  if (spec_.has_gradrev()) {
    gradrev_.emplace(spec_.eta);
    adversarial_head_.add<nn::Dense>(shared_width, 1);
    adversarial_head_.initialize(init_seed, "adversarial.head");
  }
}

ClickModel build(const ModelSpec& spec, std::size_t input_dim, std::uint64_t init_seed,
                 std::uint64_t dropout_seed) {
  return ClickModel(spec, input_dim, init_seed, dropout_seed);
}

int ClickModel::position_index(int position) const {
  if (position < 1) throw ValidationError("positions are 1-based, got " + std::to_string(position));
  return std::min(position, spec_.max_position) - 1;
}

ClickModel::Outputs ClickModel::forward_all(const Matrix& features, std::span<const int> positions,
                                            Mode mode) {
  if (features.cols() != input_dim_) {
    throw ValidationError("model expects " + std::to_string(input_dim_) + " features, got " +
                          std::to_string(features.cols()));
  }
  Outputs out;
  out.relevance = relevance_.forward(features, mode);
  if (!spec_.has_observation()) return out;
  if (positions.size() != features.rows()) {
    throw ValidationError(std::string(variant_name(spec_.variant)) + " model needs one position per row");
  }
  std::vector<int> ids(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) ids[i] = position_index(positions[i]);
  const Matrix shared = observation_shared_.forward(embedding_->forward(ids), mode);
  out.observation = observation_head_.forward(shared, mode);
  if (dropout_) out.observation = dropout_->forward(out.observation, mode);
  if (gradrev_) out.adversarial = adversarial_head_.forward(gradrev_->forward(shared, mode), mode);
  return out;
}

std::vector<double> ClickModel::forward_click(const Matrix& features, std::span<const int> positions,
                                              Mode mode) {
  const Outputs out = forward_all(features, positions, mode);
  std::vector<double> probs(features.rows());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    double logit = out.relevance(i, 0);
    if (spec_.has_observation()) logit += out.observation(i, 0);
    probs[i] = nn::sigmoid(logit);
  }
  return probs;
}

std::vector<double> ClickModel::predict_relevance(const Matrix& features) {
  const Matrix f = relevance_.forward(features, Mode::eval);
  return std::vector<double>(f.values().begin(), f.values().end());
}

QueryScorer ClickModel::scorer() {
  return [this](const QueryGroup& g) { return predict_relevance(group_features(g)); };
}

std::vector<double> ClickModel::targets_from(const ClickBatch& batch, const Outputs& out,
                                             AdvLabel choice) const {
  std::vector<double> t(batch.size());
  switch (choice) {
    case AdvLabel::utility:
      if (batch.labels.size() != batch.size()) {
        throw ValidationError("utility adversarial label needs relevance labels");
      }
      for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<double>(batch.labels[i]) / static_cast<double>(batch.y_max);
      }
      break;
    case AdvLabel::click:
      t = batch.clicks;
      break;
    case AdvLabel::prediction:
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = nn::sigmoid(out.relevance(i, 0));
      break;
  }
  return t;
}

std::vector<double> ClickModel::adversarial_target(const ClickBatch& batch, AdvLabel choice) {
  Outputs out;
  if (choice == AdvLabel::prediction) {
    relevance_.freeze_batchnorm_stats(true);
    out.relevance = relevance_.forward(batch.features, Mode::train);
    relevance_.freeze_batchnorm_stats(false);
  }
  return targets_from(batch, out, choice);
}

LossBreakdown ClickModel::evaluate_loss(const ClickBatch& batch, Mode mode,
                                        const std::vector<double>* fixed_targets) {
  const Outputs out = forward_all(batch.features, batch.positions, mode);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  LossBreakdown loss;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double logit = out.relevance(i, 0);
    if (spec_.has_observation()) logit += out.observation(i, 0);
    loss.click += nn::sigmoid_ce(logit, batch.clicks[i]).loss * inv_n;
  }
  if (gradrev_) {
    const std::vector<double> targets =
        fixed_targets ? *fixed_targets : targets_from(batch, out, spec_.adv_label);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      loss.adversarial += nn::squared_loss(out.adversarial(i, 0), targets[i]).loss * inv_n;
    }
  }
  return loss;
}

LossBreakdown ClickModel::compute_gradients(const ClickBatch& batch,
                                            const std::vector<double>* fixed_targets) {
  if (batch.size() == 0) throw ValidationError("empty training batch");
  nn::zero_grads(params());
  const Outputs out = forward_all(batch.features, batch.positions, Mode::train);
  const std::size_t n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  LossBreakdown loss;
  Matrix d_logit(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double logit = out.relevance(i, 0);
    if (spec_.has_observation()) logit += out.observation(i, 0);
    const nn::LossValue lv = nn::sigmoid_ce(logit, batch.clicks[i]);
    loss.click += lv.loss * inv_n;
    d_logit(i, 0) = lv.grad * inv_n;
  }
  relevance_.backward(d_logit);
  if (!spec_.has_observation()) return loss;

  Matrix d_obs = dropout_ ? dropout_->backward(d_logit) : d_logit;
  Matrix d_shared = observation_head_.backward(d_obs);

  if (gradrev_) {
    const std::vector<double> targets =
        fixed_targets ? *fixed_targets : targets_from(batch, out, spec_.adv_label);
    Matrix d_adv(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const nn::LossValue lv = nn::squared_loss(out.adversarial(i, 0), targets[i]);
      loss.adversarial += lv.loss * inv_n;
      d_adv(i, 0) = lv.grad * inv_n;
    }
    d_shared += gradrev_->backward(adversarial_head_.backward(d_adv));
  }
  embedding_->backward(observation_shared_.backward(d_shared));
  return loss;
}

std::vector<nn::Param> ClickModel::relevance_params() { return relevance_.params("relevance"); }

std::vector<nn::Param> ClickModel::shared_observation_params() {
  std::vector<nn::Param> out;
  if (!embedding_) return out;
  for (auto p : embedding_->params()) {
    p.name = "observation.embedding." + p.name;
    out.push_back(p);
  }
  for (const auto& p : observation_shared_.params("observation.shared")) out.push_back(p);
  return out;
}

std::vector<nn::Param> ClickModel::observation_head_params() {
  return observation_head_.params("observation.head");
}

std::vector<nn::Param> ClickModel::adversarial_head_params() {
  return adversarial_head_.params("adversarial.head");
}

std::vector<nn::Param> ClickModel::params() {
  std::vector<nn::Param> out = relevance_params();
  for (const auto& group : {shared_observation_params(), observation_head_params(), adversarial_head_params()}) {
    out.insert(out.end(), group.begin(), group.end());
  }
  return out;
}

std::vector<nn::Buffer> ClickModel::buffers() {
  std::vector<nn::Buffer> out = relevance_.buffers("relevance");
  const auto shared = observation_shared_.buffers("observation.shared");
  out.insert(out.end(), shared.begin(), shared.end());
  return out;
}

std::uint64_t ClickModel::activation_signature() const {
  std::uint64_t h = relevance_.activation_signature();
  h = mix_seed(h, observation_shared_.activation_signature());
  if (dropout_) h = mix_seed(h, dropout_->activation_signature());
  return h;
}

void ClickModel::freeze_dropout_mask(bool frozen) {
  if (dropout_) dropout_->freeze_mask(frozen);
}

void ClickModel::freeze_batchnorm_stats(bool frozen) {
  relevance_.freeze_batchnorm_stats(frozen);
  observation_shared_.freeze_batchnorm_stats(frozen);
}

nlohmann::json ClickModel::checkpoint() {
  const auto p = params();
  const auto b = buffers();
  return nn::checkpoint_to_json(p, b, {{"spec", spec_.to_json()}, {"input_dim", input_dim_}});
}

void ClickModel::load(const nlohmann::json& doc) {
  const auto p = params();
  const auto b = buffers();
  nn::load_checkpoint(doc, p, b);
}

nn::GradCheckResult grad_check_model(ClickModel& model, const ClickBatch& batch, double step) {
  model.freeze_batchnorm_stats(true);
  model.compute_gradients(batch);  // draws the dropout mask that is then held fixed
  model.freeze_dropout_mask(true);

  std::vector<double> targets;
  if (model.spec().has_gradrev()) targets = model.adversarial_target(batch, model.spec().adv_label);
  const std::vector<double>* fixed = model.spec().has_gradrev() ? &targets : nullptr;
  const double eta = model.spec().eta;

  std::vector<nn::CheckGroup> groups;
  std::vector<nn::Param> main = model.relevance_params();
  for (const auto& group : {model.shared_observation_params(), model.observation_head_params()}) {
    main.insert(main.end(), group.begin(), group.end());
  }
  groups.push_back({main, [&] {
                      const LossBreakdown l = model.evaluate_loss(batch, Mode::train, fixed);
                      return l.click - eta * l.adversarial;
                    }});
  if (model.spec().has_gradrev()) {
    groups.push_back({model.adversarial_head_params(), [&] {
                        return model.evaluate_loss(batch, Mode::train, fixed).total();
                      }});
  }
  const auto result = nn::grad_check(
      groups, [&] { model.compute_gradients(batch, fixed); },
      [&] { return model.activation_signature(); }, step);
  model.freeze_dropout_mask(false);
  model.freeze_batchnorm_stats(false);
  return result;
}

nn::Matrix group_features(const QueryGroup& group) {
  const std::size_t dim = group.documents.empty() ? 0 : group.documents.front().features.size();
  Matrix m(group.size(), dim);
  for (std::size_t i = 0; i < group.size(); ++i) {
    const auto& f = group.documents[i].features;
    std::copy(f.begin(), f.end(), m.row(i).begin());
  }
  return m;
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be positive");
  if (batch_size < 2) throw ValidationError("batch size must be at least 2 (batch normalization)");
  if (patience < 0) throw ValidationError("patience must be >= 0");
  if (eval_k < 1) throw ValidationError("eval k must be >= 1");
  optimizer.validate();
}

std::string TrainedModel::history_csv() const {
  std::string out = "epoch,train_loss,val_ndcg5\n";
  for (const auto& h : history) {
    out += csv_row({std::to_string(h.epoch), format_double(h.train_loss), format_double(h.val_ndcg)}) + "\n";
  }
  return out;
}

TrainedModel train(ClickModel model, const ClickLog& log, const Dataset& train_set,
                   const TrainConfig& cfg, const Dataset* valid) {
  return train(std::move(model), make_click_batch(train_set, log), cfg, valid);
}

TrainedModel train(ClickModel model, const ClickBatch& rows, const TrainConfig& cfg,
                   const Dataset* valid) {
  cfg.validate();
  if (rows.size() < 2) throw ValidationError("training needs at least two clicked-log rows");
  nn::Optimizer optimizer(cfg.optimizer);

  TrainedModel result{model, {}, 0, -1.0};
  std::vector<std::size_t> order(rows.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_stream(cfg.shuffle_seed, Stream::shuffle, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t start = 0;
    while (start < order.size()) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      // A trailing batch of one row cannot be batch-normalized; fold it in.
      if (order.size() - end == 1) end = order.size();
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const ClickBatch batch = rows.subset(idx);
      const LossBreakdown loss = model.compute_gradients(batch);
      if (!std::isfinite(loss.total())) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", rows " << start << "-" << end
            << " (click " << loss.click << ", adversarial " << loss.adversarial << ")";
        throw Error(msg.str());
      }
      optimizer.step(model.params());
      loss_sum += loss.total() * static_cast<double>(idx.size());
      start = end;
    }

    EpochRecord rec{epoch, loss_sum / static_cast<double>(rows.size()), 0.0};
    if (valid != nullptr) rec.val_ndcg = mean_ndcg(model.scorer(), *valid, cfg.eval_k).mean;
    result.history.push_back(rec);

    if (valid == nullptr) {
      result.model = model;
      result.best_epoch = epoch;
      continue;
    }
    if (rec.val_ndcg > result.best_val_ndcg) {
      result.model = model;
      result.best_epoch = epoch;
      result.best_val_ndcg = rec.val_ndcg;
    } else if (cfg.patience > 0 && epoch - result.best_epoch >= cfg.patience) {
      break;
    }
  }
  if (valid == nullptr && !result.history.empty()) result.best_val_ndcg = 0.0;
  return result;
}

}  // namespace ultr
