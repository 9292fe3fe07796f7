#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ultr/clicksim.hpp"
#include "ultr/dataset.hpp"
#include "ultr/eval.hpp"
#include "ultr/nn/gradcheck.hpp"
#include "ultr/nn/layers.hpp"
#include "ultr/nn/optimizer.hpp"

namespace ultr {

enum class Variant { biased, pal, gradrev, drop, drop_gradrev };
enum class AdvLabel { utility, click, prediction };

Variant parse_variant(const std::string& name);
const char* variant_name(Variant v);
AdvLabel parse_adv_label(const std::string& name);
const char* adv_label_name(AdvLabel a);

struct ModelSpec {
  Variant variant = Variant::pal;
  std::vector<std::size_t> relevance_widths{64, 32, 1};
  std::size_t position_embedding_dim = 8;
  std::vector<std::size_t> observation_widths{16, 1};
  int max_position = 50;
  double eta = 0.0;  // gradient-reversal scale (gradrev variants)
  double tau = 0.0;  // observation dropout rate (drop variants)
  AdvLabel adv_label = AdvLabel::click;

  bool has_observation() const noexcept { return variant != Variant::biased; }
  bool has_gradrev() const noexcept {
    return variant == Variant::gradrev || variant == Variant::drop_gradrev;
  }
  bool has_dropout() const noexcept { return variant == Variant::drop || variant == Variant::drop_gradrev; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

/// Training rows: one per (query, document), with clicks averaged over sessions.
struct ClickBatch {
  nn::Matrix features;         // rows x dim
  std::vector<int> positions;  // 1-based logged positions
  std::vector<double> clicks;  // session-averaged click rate in [0, 1]
  std::vector<int> labels;     // true grades, used only by the utility adversarial label
  int y_max = 4;

  std::size_t size() const noexcept { return features.rows(); }
  ClickBatch subset(std::span<const std::size_t> rows) const;
};

/// Aggregates every session of the click log onto the dataset's documents.
ClickBatch make_click_batch(const Dataset& dataset, const ClickLog& log);

struct LossBreakdown {
  double click = 0.0;        // mean sigmoid cross-entropy
  double adversarial = 0.0;  // mean squared adversarial loss (gradrev variants)
  double total() const noexcept { return click + adversarial; }
};

/// Two-tower additive click model. The relevance tower scores features; the
/// observation tower maps a clamped position through an embedding and a
/// dense stack. Gradient-reversal variants attach an adversarial head to the
/// shared observation representation; dropout variants drop the observation
/// logit during training.
class ClickModel {
 public:
  ClickModel(ModelSpec spec, std::size_t input_dim, std::uint64_t init_seed,
             std::uint64_t dropout_seed = 0);

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t input_dim() const noexcept { return input_dim_; }

  /// Embedding row used for a 1-based position.
  int position_index(int position) const;

  /// Click probabilities. Two-tower variants require one position per row.
  std::vector<double> forward_click(const nn::Matrix& features, std::span<const int> positions,
                                    nn::Mode mode);

  /// Relevance tower in eval mode; never touches positions or the observation tower.
  std::vector<double> predict_relevance(const nn::Matrix& features);
  QueryScorer scorer();

  /// Per-row adversarial regression targets. The prediction target is the
  /// sigmoid of the relevance logits from a train-mode pass and carries no
  /// gradient.
  std::vector<double> adversarial_target(const ClickBatch& batch, AdvLabel choice);

  /// Forward pass in train mode plus backward. Gradients are zeroed first and
  /// left in the parameter accumulators. `fixed_targets` overrides the
  /// adversarial targets (used for gradient checking).
  LossBreakdown compute_gradients(const ClickBatch& batch,
                                  const std::vector<double>* fixed_targets = nullptr);

  /// Loss of a forward pass without touching gradients.
  LossBreakdown evaluate_loss(const ClickBatch& batch, nn::Mode mode,
                              const std::vector<double>* fixed_targets = nullptr);

  std::vector<nn::Param> params();
  std::vector<nn::Buffer> buffers();
  /// Parameters of the relevance tower only.
  std::vector<nn::Param> relevance_params();
  /// Embedding and shared observation layers (upstream of the reversal).
  std::vector<nn::Param> shared_observation_params();
  /// Observation head producing g.
  std::vector<nn::Param> observation_head_params();
  /// Dense head behind the reversal layer.
  std::vector<nn::Param> adversarial_head_params();

  std::uint64_t activation_signature() const;
  void freeze_dropout_mask(bool frozen);
  void freeze_batchnorm_stats(bool frozen);

  nlohmann::json checkpoint();
  void load(const nlohmann::json& checkpoint);

 private:
  struct Outputs {
    nn::Matrix relevance;    // rows x 1
    nn::Matrix observation;  // rows x 1 (after dropout)
    nn::Matrix adversarial;  // rows x 1
  };
  Outputs forward_all(const nn::Matrix& features, std::span<const int> positions, nn::Mode mode);
  std::vector<double> targets_from(const ClickBatch& batch, const Outputs& out, AdvLabel choice) const;

  ModelSpec spec_;
  std::size_t input_dim_;
  nn::Sequential relevance_;
  std::optional<nn::Embedding> embedding_;
  nn::Sequential observation_shared_;
  nn::Sequential observation_head_;
  std::optional<nn::Dropout> dropout_;
  std::optional<nn::GradRev> gradrev_;
  nn::Sequential adversarial_head_;
};

/// Builds a fresh model with parameters drawn from `init_seed`.
ClickModel build(const ModelSpec& spec, std::size_t input_dim, std::uint64_t init_seed,
                 std::uint64_t dropout_seed = 0);

struct TrainConfig {
  int epochs = 100;
  std::size_t batch_size = 256;
  nn::OptimizerConfig optimizer{};
  std::uint64_t shuffle_seed = 0;
  int patience = 10;  // epochs without validation improvement; 0 disables
  int eval_k = 5;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_ndcg = 0.0;
};

struct TrainedModel {
  ClickModel model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_ndcg = 0.0;

  /// epoch,train_loss,val_ndcg5
  std::string history_csv() const;
};

/// Minibatch training over shuffled rows. With a validation set, the returned
/// model is the epoch with the best validation NDCG@k of the relevance tower
/// and training stops after `patience` epochs without improvement.
TrainedModel train(ClickModel model, const ClickLog& log, const Dataset& train_set,
                   const TrainConfig& cfg, const Dataset* valid = nullptr);
TrainedModel train(ClickModel model, const ClickBatch& rows, const TrainConfig& cfg,
                   const Dataset* valid = nullptr);

/// Gradient check of a whole model on one batch in train mode, with the
/// dropout mask, batch-norm running statistics and adversarial targets held
/// fixed. Reversal variants check the shared observation layers against
/// L_click - eta * L_rev and the adversarial head against L_click + L_rev.
nn::GradCheckResult grad_check_model(ClickModel& model, const ClickBatch& batch,
                                     double step = nn::kGradCheckStep);

/// Every query's documents as one feature matrix.
nn::Matrix group_features(const QueryGroup& group);

}  // namespace ultr
