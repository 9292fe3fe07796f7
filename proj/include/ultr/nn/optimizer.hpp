#pragma once

#include <map>
#include <span>
#include <string>

#include "ultr/nn/layers.hpp"
#include "ultr/nn/matrix.hpp"

namespace ultr::nn {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

OptimizerKind parse_optimizer_kind(const std::string& name);
const char* optimizer_kind_name(OptimizerKind kind);

/// Plain SGD or bias-corrected Adam. Moment buffers are keyed by parameter
/// name and created on first use with the parameter's shape.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  void step(std::span<const Param> params);

  const OptimizerConfig& config() const noexcept { return cfg_; }
  long steps() const noexcept { return t_; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  OptimizerConfig cfg_;
  long t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace ultr::nn
