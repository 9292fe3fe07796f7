#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ultr/common.hpp"
#include "ultr/nn/matrix.hpp"

namespace ultr::nn {

enum class Mode { train, eval };

enum class LayerKind { dense, batchnorm, relu, embedding, dropout, gradrev };

const char* layer_kind_name(LayerKind kind);

/// A learnable tensor and its gradient accumulator.
struct Param {
  std::string name;
  Matrix* value;
  Matrix* grad;
};

/// Non-learnable state that belongs in checkpoints (batch-norm running stats).
struct Buffer {
  std::string name;
  Matrix* value;
};

/// A layer that maps a batch matrix to a batch matrix. forward() caches what
/// backward() needs; backward() accumulates parameter gradients and returns
/// the gradient with respect to the layer input.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual Matrix forward(const Matrix& x, Mode mode) = 0;
  virtual Matrix backward(const Matrix& upstream) = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  virtual std::vector<Param> params() { return {}; }
  virtual std::vector<Buffer> buffers() { return {}; }
  /// Re-draws learnable parameters from `rng`.
  virtual void initialize(Rng& /*rng*/) {}
  /// Hash of any piecewise-linear switching state from the last forward pass.
  virtual std::uint64_t activation_signature() const { return 0; }
};

/// y = x W + b with W of shape in x out.
class Dense final : public Layer {
 public:
  Dense(std::size_t in, std::size_t out);

  LayerKind kind() const override { return LayerKind::dense; }
  Matrix forward(const Matrix& x, Mode mode) override;
  Matrix backward(const Matrix& upstream) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
  std::vector<Param> params() override;
  /// He fan-in scaling: W ~ N(0, 2 / in), b = 0.
  void initialize(Rng& rng) override;

  std::size_t in() const noexcept { return weight_.rows(); }
  std::size_t out() const noexcept { return weight_.cols(); }
  Matrix& weight() noexcept { return weight_; }
  Matrix& bias() noexcept { return bias_; }

 private:
  Matrix weight_;
  Matrix bias_;
  Matrix weight_grad_;
  Matrix bias_grad_;
  Matrix input_;
};

/// Per-feature batch normalization with learnable scale and shift.
class BatchNorm final : public Layer {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.99;

  explicit BatchNorm(std::size_t width);

  LayerKind kind() const override { return LayerKind::batchnorm; }
  /// Train mode needs at least two rows and updates the running statistics.
  Matrix forward(const Matrix& x, Mode mode) override;
  Matrix backward(const Matrix& upstream) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }
  std::vector<Param> params() override;
  std::vector<Buffer> buffers() override;
  void initialize(Rng& rng) override;

  /// When set, train-mode forward passes leave the running statistics alone.
  void freeze_running_stats(bool frozen) noexcept { stats_frozen_ = frozen; }
  const Matrix& running_mean() const noexcept { return running_mean_; }
  const Matrix& running_var() const noexcept { return running_var_; }
  Matrix& gamma() noexcept { return gamma_; }
  Matrix& beta() noexcept { return beta_; }

 private:
  std::size_t width_;
  Matrix gamma_;
  Matrix beta_;
  Matrix gamma_grad_;
  Matrix beta_grad_;
  Matrix running_mean_;
  Matrix running_var_;
  bool stats_frozen_ = false;
  // backward cache
  Mode mode_ = Mode::eval;
  Matrix x_hat_;
  std::vector<double> inv_std_;
};

class Relu final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::relu; }
  Matrix forward(const Matrix& x, Mode mode) override;
  Matrix backward(const Matrix& upstream) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
  std::uint64_t activation_signature() const override;

 private:
  std::vector<std::uint8_t> active_;
  std::size_t cols_ = 0;
};

/// Inverted dropout: zero with probability tau, scale survivors by
/// 1 / (1 - tau) in train mode; identity in eval mode.
class Dropout final : public Layer {
 public:
  Dropout(double tau, std::uint64_t seed);

  LayerKind kind() const override { return LayerKind::dropout; }
  Matrix forward(const Matrix& x, Mode mode) override;
  Matrix backward(const Matrix& upstream) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dropout>(*this); }
  std::uint64_t activation_signature() const override;

  /// While frozen, train-mode forward reuses the previous mask (shape must match).
  void freeze_mask(bool frozen) noexcept { mask_frozen_ = frozen; }
  double tau() const noexcept { return tau_; }
  const std::vector<double>& mask() const noexcept { return mask_; }

 private:
  double tau_;
  Rng rng_;
  bool mask_frozen_ = false;
  Mode mode_ = Mode::eval;
  std::vector<double> mask_;  // 0 or 1 / (1 - tau)
};

/// Identity forward; backward multiplies the upstream gradient by -eta.
class GradRev final : public Layer {
 public:
  explicit GradRev(double eta);

  LayerKind kind() const override { return LayerKind::gradrev; }
  Matrix forward(const Matrix& x, Mode mode) override;
  Matrix backward(const Matrix& upstream) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GradRev>(*this); }

  double eta() const noexcept { return eta_; }

 private:
  double eta_;
};

/// Lookup table mapping integer ids (0-based) to rows.
class Embedding {
 public:
  static constexpr double kInitRange = 0.05;

  Embedding(std::size_t rows, std::size_t dim);

  Matrix forward(std::span<const int> ids);
  void backward(const Matrix& upstream);
  std::vector<Param> params();
  /// Uniform in [-kInitRange, kInitRange].
  void initialize(Rng& rng);

  std::size_t rows() const noexcept { return table_.rows(); }
  std::size_t dim() const noexcept { return table_.cols(); }
  Matrix& table() noexcept { return table_; }

 private:
  Matrix table_;
  Matrix table_grad_;
  std::vector<int> ids_;
};

/// Ordered stack of layers with value semantics.
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Matrix forward(const Matrix& x, Mode mode);
  Matrix backward(const Matrix& upstream);

  /// Parameter names are `<prefix>.<layer index>.<param>`.
  std::vector<Param> params(const std::string& prefix);
  std::vector<Buffer> buffers(const std::string& prefix);
  /// Each layer draws from its own stream keyed by (seed, prefix, index).
  void initialize(std::uint64_t seed, const std::string& prefix);
  std::uint64_t activation_signature() const;
  void freeze_batchnorm_stats(bool frozen);

  std::size_t size() const noexcept { return layers_.size(); }
  bool empty() const noexcept { return layers_.empty(); }
  Layer& operator[](std::size_t i) { return *layers_[i]; }
  const Layer& operator[](std::size_t i) const { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// dense -> batchnorm -> relu for each width.
Sequential make_hidden_stack(std::size_t in, std::span<const std::size_t> widths);

/// dense -> batchnorm -> relu for every hidden width, then a final dense
/// layer to widths.back() with no normalization or activation.
Sequential make_mlp(std::size_t in, std::span<const std::size_t> widths);

void zero_grads(std::span<const Param> params);

}  // namespace ultr::nn
