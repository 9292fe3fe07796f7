#include "ultr/nn/loss.hpp"

#include <algorithm>
#include <cmath>

namespace ultr::nn {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

LossValue sigmoid_ce(double logit, double target) {
  const double loss = std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
  return {loss, sigmoid(logit) - target};
}

LossValue squared_loss(double pred, double target) {
  const double diff = target - pred;
  return {diff * diff, -2.0 * diff};
}

}  // namespace ultr::nn
