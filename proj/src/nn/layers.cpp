#include "ultr/nn/layers.hpp"

#include <cmath>

#include "ultr/simd/kernels.hpp"

namespace ultr::nn {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense:
      return "dense";
    case LayerKind::batchnorm:
      return "batchnorm";
    case LayerKind::relu:
      return "relu";
    case LayerKind::embedding:
      return "embedding";
    case LayerKind::dropout:
      return "dropout";
    case LayerKind::gradrev:
      return "gradrev";
  }
  return "unknown";
}

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in, std::size_t out)
    : weight_(in, out), bias_(1, out), weight_grad_(in, out), bias_grad_(1, out) {
  if (in == 0 || out == 0) throw ValidationError("dense layer widths must be positive");
}

Matrix Dense::forward(const Matrix& x, Mode /*mode*/) {
  if (x.cols() != in()) {
    throw ValidationError("dense: input has " + std::to_string(x.cols()) + " columns, layer expects " +
                          std::to_string(in()));
  }
  input_ = x;
  const auto& k = simd::active();
  Matrix y(x.rows(), out());
  const std::size_t n_in = in();
  const std::size_t n_out = out();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* xr = x.row(r).data();
    double* yr = y.row(r).data();
    if (n_out == 1) {
      yr[0] = bias_(0, 0) + k.dot(xr, weight_.data(), n_in);
      continue;
    }
    for (std::size_t c = 0; c < n_out; ++c) yr[c] = bias_(0, c);
    for (std::size_t i = 0; i < n_in; ++i) k.axpy(xr[i], weight_.row(i).data(), yr, n_out);
  }
  return y;
}

Matrix Dense::backward(const Matrix& upstream) {
  require_shape(upstream, input_.rows(), out(), "dense backward");
  const auto& k = simd::active();
  const std::size_t n_in = in();
  const std::size_t n_out = out();
  Matrix dx(input_.rows(), n_in);
  for (std::size_t r = 0; r < input_.rows(); ++r) {
    const double* xr = input_.row(r).data();
    const double* gr = upstream.row(r).data();
    double* dxr = dx.row(r).data();
    if (n_out == 1) {
      k.axpy(gr[0], weight_.data(), dxr, n_in);
      k.axpy(gr[0], xr, weight_grad_.data(), n_in);
      bias_grad_(0, 0) += gr[0];
      continue;
    }
    for (std::size_t i = 0; i < n_in; ++i) {
      dxr[i] = k.dot(weight_.row(i).data(), gr, n_out);
      k.axpy(xr[i], gr, weight_grad_.row(i).data(), n_out);
    }
    k.axpy(1.0, gr, bias_grad_.data(), n_out);
  }
  return dx;
}

std::vector<Param> Dense::params() {
  return {{"W", &weight_, &weight_grad_}, {"b", &bias_, &bias_grad_}};
}

void Dense::initialize(Rng& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in())));
  for (double& w : weight_.values()) w = normal(rng);
  bias_.fill(0.0);
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::size_t width)
    : width_(width),
      gamma_(1, width, 1.0),
      beta_(1, width, 0.0),
      gamma_grad_(1, width),
      beta_grad_(1, width),
      running_mean_(1, width, 0.0),
      running_var_(1, width, 1.0) {
  if (width == 0) throw ValidationError("batchnorm width must be positive");
}

Matrix BatchNorm::forward(const Matrix& x, Mode mode) {
  if (x.cols() != width_) throw ValidationError("batchnorm: input width mismatch");
  const std::size_t n = x.rows();
  mode_ = mode;
  inv_std_.assign(width_, 0.0);
  x_hat_ = Matrix(n, width_);
  Matrix y(n, width_);

  std::vector<double> mean(width_, 0.0);
  std::vector<double> var(width_, 0.0);
  if (mode == Mode::train) {
    if (n < 2) throw ValidationError("batchnorm: train mode needs a batch of at least 2 rows");
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < width_; ++c) mean[c] += x(r, c);
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < width_; ++c) {
        const double d = x(r, c) - mean[c];
        var[c] += d * d;
      }
    }
    for (double& v : var) v /= static_cast<double>(n);
    if (!stats_frozen_) {
      for (std::size_t c = 0; c < width_; ++c) {
        running_mean_(0, c) = kMomentum * running_mean_(0, c) + (1.0 - kMomentum) * mean[c];
        running_var_(0, c) = kMomentum * running_var_(0, c) + (1.0 - kMomentum) * var[c];
      }
    }
  } else {
    for (std::size_t c = 0; c < width_; ++c) {
      mean[c] = running_mean_(0, c);
      var[c] = running_var_(0, c);
    }
  }
  for (std::size_t c = 0; c < width_; ++c) inv_std_[c] = 1.0 / std::sqrt(var[c] + kEpsilon);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < width_; ++c) {
      const double h = (x(r, c) - mean[c]) * inv_std_[c];
      x_hat_(r, c) = h;
      y(r, c) = gamma_(0, c) * h + beta_(0, c);
    }
  }
  return y;
}

Matrix BatchNorm::backward(const Matrix& upstream) {
  require_shape(upstream, x_hat_.rows(), width_, "batchnorm backward");
  const std::size_t n = upstream.rows();
  Matrix dx(n, width_);
  std::vector<double> sum_dy(width_, 0.0);
  std::vector<double> sum_dy_xhat(width_, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < width_; ++c) {
      sum_dy[c] += upstream(r, c);
      sum_dy_xhat[c] += upstream(r, c) * x_hat_(r, c);
    }
  }
  for (std::size_t c = 0; c < width_; ++c) {
    gamma_grad_(0, c) += sum_dy_xhat[c];
    beta_grad_(0, c) += sum_dy[c];
  }
  if (mode_ == Mode::eval) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < width_; ++c) dx(r, c) = upstream(r, c) * gamma_(0, c) * inv_std_[c];
    }
    return dx;
  }
  // dx = gamma * inv_std / n * (n * dy - sum(dy) - x_hat * sum(dy * x_hat))
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < width_; ++c) {
      const double centered = static_cast<double>(n) * upstream(r, c) - sum_dy[c] -
                              x_hat_(r, c) * sum_dy_xhat[c];
      dx(r, c) = gamma_(0, c) * inv_std_[c] * inv_n * centered;
    }
  }
  return dx;
}

std::vector<Param> BatchNorm::params() {
  return {{"gamma", &gamma_, &gamma_grad_}, {"beta", &beta_, &beta_grad_}};
}

std::vector<Buffer> BatchNorm::buffers() {
  return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
}

void BatchNorm::initialize(Rng& /*rng*/) {
  gamma_.fill(1.0);
  beta_.fill(0.0);
  running_mean_.fill(0.0);
  running_var_.fill(1.0);
}

// ---------------------------------------------------------------- Relu

Matrix Relu::forward(const Matrix& x, Mode /*mode*/) {
  Matrix y(x.rows(), x.cols());
  cols_ = x.cols();
  active_.resize(x.size());
  const auto in = x.values();
  auto out = y.values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    active_[i] = in[i] > 0.0 ? 1 : 0;
    out[i] = active_[i] ? in[i] : 0.0;
  }
  return y;
}

Matrix Relu::backward(const Matrix& upstream) {
  if (upstream.size() != active_.size() || upstream.cols() != cols_) {
    throw ValidationError("relu backward: shape mismatch");
  }
  Matrix dx(upstream.rows(), upstream.cols());
  const auto g = upstream.values();
  auto out = dx.values();
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = active_[i] ? g[i] : 0.0;
  return dx;
}

std::uint64_t Relu::activation_signature() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t a : active_) {
    h ^= a;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------- Dropout

Dropout::Dropout(double tau, std::uint64_t seed) : tau_(tau), rng_(seed) {
  if (!(tau >= 0.0 && tau < 1.0)) throw ValidationError("dropout rate must lie in [0, 1)");
}

Matrix Dropout::forward(const Matrix& x, Mode mode) {
  mode_ = mode;
  if (mode == Mode::eval || tau_ == 0.0) return x;
  if (!mask_frozen_ || mask_.size() != x.size()) {
    const double scale = 1.0 / (1.0 - tau_);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    mask_.resize(x.size());
    for (double& m : mask_) m = unit(rng_) < tau_ ? 0.0 : scale;
  }
  Matrix y(x.rows(), x.cols());
  const auto in = x.values();
  auto out = y.values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * mask_[i];
  return y;
}

Matrix Dropout::backward(const Matrix& upstream) {
  if (mode_ == Mode::eval || tau_ == 0.0) return upstream;
  if (upstream.size() != mask_.size()) throw ValidationError("dropout backward: shape mismatch");
  Matrix dx(upstream.rows(), upstream.cols());
  const auto g = upstream.values();
  auto out = dx.values();
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] * mask_[i];
  return dx;
}

std::uint64_t Dropout::activation_signature() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double m : mask_) {
    h ^= m == 0.0 ? 0u : 1u;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------- GradRev

GradRev::GradRev(double eta) : eta_(eta) {
  if (!(eta >= 0.0)) throw ValidationError("gradient reversal scale eta must be >= 0");
}

Matrix GradRev::forward(const Matrix& x, Mode /*mode*/) { return x; }

Matrix GradRev::backward(const Matrix& upstream) {
  Matrix dx(upstream.rows(), upstream.cols());
  const auto g = upstream.values();
  auto out = dx.values();
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = -eta_ * g[i];
  return dx;
}

// ---------------------------------------------------------------- Embedding

Embedding::Embedding(std::size_t rows, std::size_t dim) : table_(rows, dim), table_grad_(rows, dim) {
  if (rows == 0 || dim == 0) throw ValidationError("embedding shape must be positive");
}

Matrix Embedding::forward(std::span<const int> ids) {
  ids_.assign(ids.begin(), ids.end());
  Matrix y(ids.size(), dim());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const int id = ids[r];
    if (id < 0 || static_cast<std::size_t>(id) >= rows()) {
      throw ValidationError("embedding id " + std::to_string(id) + " out of range");
    }
    const auto src = table_.row(static_cast<std::size_t>(id));
    std::copy(src.begin(), src.end(), y.row(r).begin());
  }
  return y;
}

void Embedding::backward(const Matrix& upstream) {
  require_shape(upstream, ids_.size(), dim(), "embedding backward");
  const auto& k = simd::active();
  for (std::size_t r = 0; r < ids_.size(); ++r) {
    k.axpy(1.0, upstream.row(r).data(), table_grad_.row(static_cast<std::size_t>(ids_[r])).data(),
           dim());
  }
}

std::vector<Param> Embedding::params() { return {{"table", &table_, &table_grad_}}; }

void Embedding::initialize(Rng& rng) {
  std::uniform_real_distribution<double> uniform(-kInitRange, kInitRange);
  for (double& v : table_.values()) v = uniform(rng);
}

// ---------------------------------------------------------------- Sequential

Sequential::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Matrix Sequential::forward(const Matrix& x, Mode mode) {
  Matrix h = x;
  for (auto& l : layers_) h = l->forward(h, mode);
  return h;
}

Matrix Sequential::backward(const Matrix& upstream) {
  Matrix g = upstream;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<Param> Sequential::params(const std::string& prefix) {
  std::vector<Param> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto p : layers_[i]->params()) {
      p.name = prefix + "." + std::to_string(i) + "." + p.name;
      out.push_back(p);
    }
  }
  return out;
}

std::vector<Buffer> Sequential::buffers(const std::string& prefix) {
  std::vector<Buffer> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto b : layers_[i]->buffers()) {
      b.name = prefix + "." + std::to_string(i) + "." + b.name;
      out.push_back(b);
    }
  }
  return out;
}

void Sequential::initialize(std::uint64_t seed, const std::string& prefix) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Rng rng = make_stream(seed, Stream::init, fnv1a(prefix + "." + std::to_string(i)));
    layers_[i]->initialize(rng);
  }
}

std::uint64_t Sequential::activation_signature() const {
  std::uint64_t h = 0;
  for (const auto& l : layers_) h = mix_seed(h, l->activation_signature());
  return h;
}

void Sequential::freeze_batchnorm_stats(bool frozen) {
  for (auto& l : layers_) {
    if (auto* bn = dynamic_cast<BatchNorm*>(l.get())) bn->freeze_running_stats(frozen);
  }
}

Sequential make_hidden_stack(std::size_t in, std::span<const std::size_t> widths) {
  Sequential s;
  std::size_t prev = in;
  for (std::size_t w : widths) {
    s.add<Dense>(prev, w);
    s.add<BatchNorm>(w);
    s.add<Relu>();
    prev = w;
  }
  return s;
}

Sequential make_mlp(std::size_t in, std::span<const std::size_t> widths) {
  if (widths.empty()) throw ValidationError("an MLP needs at least one layer width");
  Sequential s = make_hidden_stack(in, widths.first(widths.size() - 1));
  const std::size_t prev = widths.size() > 1 ? widths[widths.size() - 2] : in;
  s.add<Dense>(prev, widths.back());
  return s;
}

void zero_grads(std::span<const Param> params) {
  for (const auto& p : params) p.grad->fill(0.0);
}

}  // namespace ultr::nn
