#include "ultr/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ultr::nn {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(std::vector<CheckGroup> groups,
                           const std::function<void()>& compute_analytic,
                           const std::function<std::uint64_t()>& signature, double step) {
  for (auto& g : groups) zero_grads(g.params);
  compute_analytic();
  const std::uint64_t base_sig = signature ? signature() : 0;

  GradCheckResult result;
  for (auto& group : groups) {
    double sum_sq = 0.0;
    std::size_t count = 0;
    for (const auto& p : group.params) {
      for (double g : p.grad->values()) sum_sq += g * g;
      count += p.grad->size();
    }
    const double floor = std::max(1e-6, count > 0 ? std::sqrt(sum_sq / static_cast<double>(count)) : 0.0);
    for (const auto& p : group.params) {
      auto values = p.value->values();
      const auto grads = p.grad->values();
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double original = values[i];
        values[i] = original + step;
        const double plus = group.loss();
        const bool plus_kink = signature && signature() != base_sig;
        values[i] = original - step;
        const double minus = group.loss();
        const bool minus_kink = signature && signature() != base_sig;
        values[i] = original;
        if (plus_kink || minus_kink) {
          ++result.skipped;
          continue;
        }
        const double numeric = (plus - minus) / (2.0 * step);
        const double err = relative_error(grads[i], numeric, floor);
        ++result.checked;
        if (err >= result.max_rel_error) {
          result.max_rel_error = err;
          result.worst = p.name + "[" + std::to_string(i) + "]";
          result.worst_analytic = grads[i];
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

OutputLoss random_projection_loss(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix w(rows, cols);
  for (double& v : w.values()) v = normal(rng);
  OutputLoss loss;
  loss.value = [w](const Matrix& y) {
    // Compensated summation keeps rounding in the loss below what the
    // finite differences can resolve.
    double s = 0.0, c = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double v = y.values()[i];
      for (const double term : {w.values()[i] * v, 0.5 * v * v}) {
        const double t = s + term;
        c += std::abs(s) >= std::abs(term) ? (s - t) + term : (term - t) + s;
        s = t;
      }
    }
    return s + c;
  };
  loss.grad = [w](const Matrix& y) {
    Matrix g(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.size(); ++i) g.values()[i] = w.values()[i] + y.values()[i];
    return g;
  };
  return loss;
}

GradCheckResult grad_check_network(Sequential& net, const Matrix& input, const OutputLoss& loss,
                                   Mode mode, double step) {
  net.freeze_batchnorm_stats(true);
  Matrix x = input;
  Matrix x_grad(x.rows(), x.cols());
  std::vector<Param> params = net.params("net");
  params.push_back(Param{"input", &x, &x_grad});

  const auto objective = [&] { return loss.value(net.forward(x, mode)); };
  const auto analytic = [&] {
    const Matrix y = net.forward(x, mode);
    x_grad = net.backward(loss.grad(y));
  };
  const auto sig = [&] { return net.activation_signature(); };
  GradCheckResult r = grad_check({CheckGroup{params, objective}}, analytic, sig, step);
  net.freeze_batchnorm_stats(false);
  return r;
}

}  // namespace ultr::nn
