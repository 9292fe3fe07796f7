#pragma once

namespace ultr::nn {

struct LossValue {
  double loss;
  double grad;  // d loss / d input
};

double sigmoid(double z);

/// Binary cross-entropy on a logit, in the overflow-free form
/// max(z, 0) - z * c + log1p(exp(-|z|)). Soft targets c in [0, 1] are allowed.
LossValue sigmoid_ce(double logit, double target);

/// (target - pred)^2 with gradient taken with respect to pred.
LossValue squared_loss(double pred, double target);

}  // namespace ultr::nn
