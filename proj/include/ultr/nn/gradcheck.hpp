#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ultr/nn/layers.hpp"
#include "ultr/nn/matrix.hpp"

namespace ultr::nn {

inline constexpr double kGradCheckStep = 1e-5;

/// Parameters whose analytic gradient should equal the derivative of `loss`.
/// Several groups let one check cover objectives such as gradient reversal,
/// where different parameters follow different scalar objectives.
struct CheckGroup {
  std::vector<Param> params;
  std::function<double()> loss;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;      // "<param>[index]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // elements whose perturbation crossed a ReLU kink
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central differences with `step`, compared element-wise with the analytic
/// gradients written by `compute_analytic` into each Param::grad. The
/// relative-error denominator is floored at the RMS analytic gradient of the
/// element's group (at least 1e-6), so elements far below the group's
/// gradient scale are judged against that scale rather than against
/// finite-difference rounding noise. When
/// `signature` is supplied, elements whose +/- perturbations change it are
/// skipped instead of compared.
GradCheckResult grad_check(std::vector<CheckGroup> groups,
                           const std::function<void()>& compute_analytic,
                           const std::function<std::uint64_t()>& signature = {},
                           double step = kGradCheckStep);

/// Scalar objective of a network output, with its gradient.
struct OutputLoss {
  std::function<double(const Matrix&)> value;
  std::function<Matrix(const Matrix&)> grad;
};

/// sum_ij w_ij * y_ij + 0.5 * sum_ij y_ij^2 with fixed random weights w.
/// The quadratic term keeps batch-normalized outputs from having a trivially
/// zero gradient.
OutputLoss random_projection_loss(std::size_t rows, std::size_t cols, std::uint64_t seed);

/// Checks every parameter of `net` and the input gradient against central
/// differences of `loss(net.forward(input, mode))`.
GradCheckResult grad_check_network(Sequential& net, const Matrix& input, const OutputLoss& loss,
                                   Mode mode, double step = kGradCheckStep);

}  // namespace ultr::nn
