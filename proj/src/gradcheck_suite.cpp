#include "ultr/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "ultr/common.hpp"
#include "ultr/models.hpp"
#include "ultr/nn/gradcheck.hpp"
#include "ultr/nn/layers.hpp"
#include "ultr/nn/loss.hpp"

namespace ultr {
namespace {

using nn::Matrix;
using nn::Mode;
using nn::Sequential;

std::size_t uniform_size(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = normal(rng);
  return m;
}

void merge(GradCheckCase& c, const nn::GradCheckResult& r) {
  ++c.trials;
  c.checked += r.checked;
  c.skipped += r.skipped;
  if (r.max_rel_error >= c.max_rel_error) {
    c.max_rel_error = r.max_rel_error;
    c.worst = r.worst;
    c.worst_analytic = r.worst_analytic;
    c.worst_numeric = r.worst_numeric;
  }
}

// Randomizes batch-norm affine parameters so the check does not only see gamma = 1, beta = 0.
void perturb_batchnorm(Sequential& net, Rng& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5), b(-0.5, 0.5);
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (net[i].kind() != nn::LayerKind::batchnorm) continue;
    auto& bn = dynamic_cast<nn::BatchNorm&>(net[i]);
    for (double& g : bn.gamma().values()) g = u(rng);
    for (double& v : bn.beta().values()) v = b(rng);
  }
}

nn::GradCheckResult check_net(Sequential& net, Rng& rng, std::size_t batch, std::size_t in, std::size_t out,
                              Mode mode) {
  const Matrix x = random_matrix(rng, batch, in);
  const auto loss = nn::random_projection_loss(batch, out, rng());
  return nn::grad_check_network(net, x, loss, mode);
}

// dense -> gradrev -> dense: layers before the reversal follow -eta * L,
// layers after it follow L.
nn::GradCheckResult check_gradrev(Rng& rng) {
  const std::size_t batch = uniform_size(rng, 2, 64), in = uniform_size(rng, 1, 32),
                    hidden = uniform_size(rng, 1, 32), out = uniform_size(rng, 1, 8);
  const double eta = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
  nn::Dense first(in, hidden), second(hidden, out);
  nn::GradRev rev(eta);
  first.initialize(rng);
  second.initialize(rng);
  Matrix x = random_matrix(rng, batch, in);
  Matrix x_grad(batch, in);
  const auto loss = nn::random_projection_loss(batch, out, rng());
  const auto objective = [&] { return loss.value(second.forward(rev.forward(first.forward(x, Mode::train), Mode::train), Mode::train)); };
  std::vector<nn::Param> upstream = first.params();
  upstream.push_back({"input", &x, &x_grad});
  return nn::grad_check(
      {{upstream, [&] { return -eta * objective(); }}, {second.params(), objective}},
      [&] {
        const Matrix y = second.forward(rev.forward(first.forward(x, Mode::train), Mode::train), Mode::train);
        x_grad = first.backward(rev.backward(second.backward(loss.grad(y))));
      });
}

nn::GradCheckResult check_scalar_loss(Rng& rng, bool cross_entropy) {
  const std::size_t n = uniform_size(rng, 2, 64);
  Matrix logits = random_matrix(rng, n, 1);
  for (double& v : logits.values()) v *= 3.0;
  Matrix grad(n, 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> targets(n);
  for (double& t : targets) t = cross_entropy ? unit(rng) : 4.0 * unit(rng) - 2.0;
  const auto value = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += cross_entropy ? nn::sigmoid_ce(logits.values()[i], targets[i]).loss
                         : nn::squared_loss(logits.values()[i], targets[i]).loss;
    }
    return s;
  };
  return nn::grad_check({{{{"logit", &logits, &grad}}, value}}, [&] {
    for (std::size_t i = 0; i < n; ++i) {
      grad.values()[i] = cross_entropy ? nn::sigmoid_ce(logits.values()[i], targets[i]).grad
                                       : nn::squared_loss(logits.values()[i], targets[i]).grad;
    }
  });
}

ClickBatch random_click_batch(Rng& rng, std::size_t rows, std::size_t dim, int max_position) {
  ClickBatch b;
  b.features = random_matrix(rng, rows, dim);
  std::uniform_int_distribution<int> pos(1, max_position + 3), grade(0, 4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < rows; ++i) {
    b.positions.push_back(pos(rng));
    b.clicks.push_back(unit(rng) < 0.5 ? unit(rng) : std::round(unit(rng)));
    b.labels.push_back(grade(rng));
  }
  return b;
}

nn::GradCheckResult check_model(Rng& rng, Variant variant, AdvLabel label) {
  ModelSpec spec;
  spec.variant = variant;
  spec.relevance_widths = {uniform_size(rng, 1, 12), uniform_size(rng, 1, 8), 1};
  spec.position_embedding_dim = uniform_size(rng, 1, 6);
  spec.observation_widths = {uniform_size(rng, 1, 8), 1};
  spec.max_position = static_cast<int>(uniform_size(rng, 1, 12));
  spec.eta = std::uniform_real_distribution<double>(0.0, 1.5)(rng);
  spec.tau = std::uniform_real_distribution<double>(0.0, 0.8)(rng);
  spec.adv_label = label;
  const std::size_t dim = uniform_size(rng, 1, 10);
  ClickModel model = build(spec, dim, rng(), rng());
  const ClickBatch batch = random_click_batch(rng, uniform_size(rng, 2, 32), dim, spec.max_position);
  return grad_check_model(model, batch);
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::size_t trials, std::uint64_t seed) {
  std::vector<GradCheckCase> cases;
  const auto run = [&](const std::string& name, double tol, bool expect_failure,
                       const std::function<nn::GradCheckResult(Rng&)>& trial) {
    GradCheckCase c;
    c.name = name;
    c.tolerance = tol;
    c.expect_failure = expect_failure;
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng = make_stream(seed, Stream::init, mix_seed(fnv1a(name), t));
      merge(c, trial(rng));
    }
    cases.push_back(std::move(c));
  };

  run("dense (linear)", 1e-8, false, [](Rng& rng) {
    const std::size_t batch = uniform_size(rng, 2, 64), in = uniform_size(rng, 1, 32),
                      mid = uniform_size(rng, 1, 32), out = uniform_size(rng, 1, 32);
    Sequential net;
    net.add<nn::Dense>(in, mid);
    net.add<nn::Dense>(mid, out);
    net.initialize(rng(), "linear");
    return check_net(net, rng, batch, in, out, Mode::train);
  });
  run("dense+relu", 1e-4, false, [](Rng& rng) {
    const std::size_t batch = uniform_size(rng, 2, 64), in = uniform_size(rng, 1, 32),
                      mid = uniform_size(rng, 1, 32), out = uniform_size(rng, 1, 32);
    Sequential net;
    net.add<nn::Dense>(in, mid);
    net.add<nn::Relu>();
    net.add<nn::Dense>(mid, out);
    net.initialize(rng(), "relu");
    return check_net(net, rng, batch, in, out, Mode::train);
  });
  run("batchnorm (train)", 1e-4, false, [](Rng& rng) {
    const std::size_t batch = uniform_size(rng, 2, 64), in = uniform_size(rng, 1, 32),
                      mid = uniform_size(rng, 1, 32), out = uniform_size(rng, 1, 8);
    Sequential net;
    net.add<nn::Dense>(in, mid);
    net.add<nn::BatchNorm>(mid);
    net.add<nn::Dense>(mid, out);
    net.initialize(rng(), "bn");
    perturb_batchnorm(net, rng);
    return check_net(net, rng, batch, in, out, Mode::train);
  });
  run("batchnorm (eval)", 1e-4, false, [](Rng& rng) {
    const std::size_t batch = uniform_size(rng, 2, 64), in = uniform_size(rng, 1, 32),
                      mid = uniform_size(rng, 1, 32), out = uniform_size(rng, 1, 8);
    Sequential net;
    net.add<nn::Dense>(in, mid);
    net.add<nn::BatchNorm>(mid);
    net.add<nn::Dense>(mid, out);
    net.initialize(rng(), "bn");
    perturb_batchnorm(net, rng);
    net.forward(random_matrix(rng, batch, in), Mode::train);  // move running stats off their defaults
    return check_net(net, rng, batch, in, out, Mode::eval);
  });
  run("dropout (frozen mask)", 1e-4, false, [](Rng& rng) {
    const std::size_t batch = uniform_size(rng, 2, 64), in = uniform_size(rng, 1, 32),
                      mid = uniform_size(rng, 1, 32), out = uniform_size(rng, 1, 8);
    const double tau = std::uniform_real_distribution<double>(0.0, 0.9)(rng);
    Sequential net;
    net.add<nn::Dense>(in, mid);
    auto& drop = net.add<nn::Dropout>(tau, rng());
    net.add<nn::Dense>(mid, out);
    net.initialize(rng(), "dropout");
    const Matrix x = random_matrix(rng, batch, in);
    net.forward(x, Mode::train);
    drop.freeze_mask(true);
    const auto loss = nn::random_projection_loss(batch, out, rng());
    return nn::grad_check_network(net, x, loss, Mode::train);
  });
  run("gradrev", 1e-4, false, check_gradrev);
  run("mlp (dense/batchnorm/relu)", 1e-4, false, [](Rng& rng) {
    const std::size_t batch = uniform_size(rng, 2, 32), in = uniform_size(rng, 1, 16);
    const std::vector<std::size_t> widths{uniform_size(rng, 1, 16), uniform_size(rng, 1, 16), 1};
    Sequential net = nn::make_mlp(in, widths);
    net.initialize(rng(), "mlp");
    perturb_batchnorm(net, rng);
    return check_net(net, rng, batch, in, 1, Mode::train);
  });
  run("sigmoid_ce", 1e-6, false, [](Rng& rng) { return check_scalar_loss(rng, true); });
  run("squared_loss", 1e-6, false, [](Rng& rng) { return check_scalar_loss(rng, false); });

  run("model biased", 1e-4, false, [](Rng& rng) { return check_model(rng, Variant::biased, AdvLabel::click); });
  run("model pal", 1e-4, false, [](Rng& rng) { return check_model(rng, Variant::pal, AdvLabel::click); });
  run("model gradrev/utility", 1e-4, false,
      [](Rng& rng) { return check_model(rng, Variant::gradrev, AdvLabel::utility); });
  run("model gradrev/click", 1e-4, false, [](Rng& rng) { return check_model(rng, Variant::gradrev, AdvLabel::click); });
  run("model gradrev/prediction", 1e-4, false,
      [](Rng& rng) { return check_model(rng, Variant::gradrev, AdvLabel::prediction); });
  run("model drop", 1e-4, false, [](Rng& rng) { return check_model(rng, Variant::drop, AdvLabel::click); });
  run("model drop_gradrev", 1e-4, false,
      [](Rng& rng) { return check_model(rng, Variant::drop_gradrev, AdvLabel::click); });

  // One analytic gradient element is pushed off by 5%; the checker must notice.
  run("negative control (corrupted gradient)", 1e-2, true, [](Rng& rng) {
    const std::size_t batch = uniform_size(rng, 2, 64), in = uniform_size(rng, 1, 32), out = uniform_size(rng, 1, 8);
    nn::Dense layer(in, out);
    layer.initialize(rng);
    const Matrix x = random_matrix(rng, batch, in);
    const auto loss = nn::random_projection_loss(batch, out, rng());
    auto params = layer.params();
    const std::size_t victim = uniform_size(rng, 0, params[0].value->size() - 1);
    return nn::grad_check({{params, [&] { return loss.value(layer.forward(x, Mode::train)); }}}, [&] {
      const Matrix y = layer.forward(x, Mode::train);
      layer.backward(loss.grad(y));
      double& g = params[0].grad->values()[victim];
      g += 0.05 * std::max(std::abs(g), 1.0);
    });
  });
  return cases;
}

}  // namespace ultr
