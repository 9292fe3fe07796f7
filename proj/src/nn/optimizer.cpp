#include "ultr/nn/optimizer.hpp"

#include <cmath>

#include "ultr/simd/kernels.hpp"

namespace ultr::nn {

void OptimizerConfig::validate() const {
  // A zero learning rate is accepted so that frozen-training checks can run.
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning rate must be finite and non-negative");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ValidationError("adam epsilon must be positive");
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd|adam)");
}

const char* optimizer_kind_name(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Optimizer::step(std::span<const Param> params) {
  for (const auto& p : params) {
    if (!p.value->same_shape(*p.grad)) {
      throw ValidationError("optimizer: gradient shape mismatch for " + p.name);
    }
  }
  ++t_;
  const auto& k = simd::active();
  if (cfg_.kind == OptimizerKind::sgd) {
    for (const auto& p : params) k.axpy(-cfg_.learning_rate, p.grad->data(), p.value->data(), p.value->size());
    return;
  }
  const simd::AdamCoefficients c{cfg_.learning_rate,
                                 cfg_.beta1,
                                 cfg_.beta2,
                                 cfg_.epsilon,
                                 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)),
                                 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_))};
  for (const auto& p : params) {
    auto [it, inserted] = moments_.try_emplace(p.name);
    Moments& mo = it->second;
    if (inserted) {
      mo.m = Matrix(p.value->rows(), p.value->cols());
      mo.v = Matrix(p.value->rows(), p.value->cols());
    } else if (!mo.m.same_shape(*p.value)) {
      throw ValidationError("optimizer: parameter " + p.name + " changed shape");
    }
    k.adam(p.value->data(), p.grad->data(), mo.m.data(), mo.v.data(), p.value->size(), c);
  }
}

}  // namespace ultr::nn
