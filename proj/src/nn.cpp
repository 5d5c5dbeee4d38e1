#include "relief/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "relief/kernels.hpp"

namespace relief {

Mlp::Mlp(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw ShapeError("Mlp needs at least input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
    if (sizes_[i] == 0 || sizes_[i + 1] == 0) throw ShapeError("Mlp layer size must be positive");
    layers_.push_back({Matrix(sizes_[i], sizes_[i + 1]), Matrix(1, sizes_[i + 1])});
  }
}

Mlp::Mlp(std::vector<std::size_t> sizes, Rng& rng, double output_scale) : Mlp(std::move(sizes)) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
    const double scale = l + 1 == layers_.size() ? output_scale : 1.0;
    for (double& w : layers_[l].weight.values()) w = scale * rng.uniform(-bound, bound);
    for (double& b : layers_[l].bias.values()) b = scale * rng.uniform(-bound, bound);
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

Matrix Mlp::forward(const Matrix& x) const {
  Cache unused;
  return forward(x, unused);
}

Matrix Mlp::forward(const Matrix& x, Cache& cache) const {
  if (x.cols() != input_dim()) {
    throw ShapeError("Mlp input has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(input_dim()));
  }
  cache.inputs.clear();
  cache.pre.clear();
  Matrix h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = kernels::matmul(h, layers_[l].weight);
    const auto& b = layers_[l].bias.values();
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
    }
    cache.inputs.push_back(std::move(h));
    h = z;
    if (l + 1 < layers_.size()) {
      for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
    }
    cache.pre.push_back(std::move(z));
  }
  return h;
}

Matrix Mlp::backward(const Cache& cache, const Matrix& dy, std::vector<Matrix>& grads) const {
  return backward_impl(cache, dy, &grads);
}

Matrix Mlp::backward_input(const Cache& cache, const Matrix& dy) const {
  return backward_impl(cache, dy, nullptr);
}

Matrix Mlp::backward_impl(const Cache& cache, const Matrix& dy, std::vector<Matrix>* grads) const {
  if (cache.pre.size() != layers_.size()) throw ShapeError("Mlp cache does not match model");
  const Matrix& out = cache.pre.back();
  if (dy.rows() != out.rows() || dy.cols() != out.cols()) {
    throw ShapeError("Mlp backward: dy is " + std::to_string(dy.rows()) + "x" +
                     std::to_string(dy.cols()) + ", output is " + std::to_string(out.rows()) +
                     "x" + std::to_string(out.cols()));
  }
  if (grads) *grads = zero_grads();
  Matrix delta = dy;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (l + 1 < layers_.size()) {
      // ReLU gate on this layer's pre-activation.
      const auto& pre = cache.pre[l].values();
      auto& d = delta.values();
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (!(pre[i] > 0.0)) d[i] = 0.0;
      }
    }
    if (grads) {
      (*grads)[2 * l] = kernels::matmul_tn(cache.inputs[l], delta);
      Matrix& gb = (*grads)[2 * l + 1];
      for (std::size_t r = 0; r < delta.rows(); ++r) {
        auto row = delta.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) gb(0, c) += row[c];
      }
    }
    delta = kernels::matmul_nt(delta, layers_[l].weight);
  }
  return delta;
}

std::vector<Matrix*> Mlp::parameters() {
  std::vector<Matrix*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Matrix*> Mlp::parameters() const {
  std::vector<const Matrix*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<Matrix> Mlp::zero_grads() const {
  std::vector<Matrix> g;
  for (const auto& l : layers_) {
    g.emplace_back(l.weight.rows(), l.weight.cols());
    g.emplace_back(l.bias.rows(), l.bias.cols());
  }
  return g;
}

void accumulate(std::vector<Matrix>& dst, const std::vector<Matrix>& src, double scale) {
  if (dst.size() != src.size()) throw ShapeError("gradient list length mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto& d = dst[i].values();
    const auto& s = src[i].values();
    if (d.size() != s.size()) throw ShapeError("gradient tensor shape mismatch");
    for (std::size_t j = 0; j < d.size(); ++j) d[j] += scale * s[j];
  }
}

Adam::Adam(std::span<const Matrix* const> params, Options opts) : opts_(opts) {
  for (const Matrix* p : params) {
    m_.emplace_back(p->rows(), p->cols());
    v_.emplace_back(p->rows(), p->cols());
  }
}

Adam::Adam(const std::vector<Matrix*>& params, Options opts)
    : Adam(std::span<const Matrix* const>(params.data(), params.size()), opts) {}

void Adam::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size() || params.size() != m_.size()) {
    throw ShapeError("Adam: parameter/gradient/state count mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->values();
    const auto& g = grads[i].values();
    auto& m = m_[i].values();
    auto& v = v_[i].values();
    if (p.size() != g.size() || p.size() != m.size()) throw ShapeError("Adam: tensor shape mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g[j];
      v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      if (opts_.weight_decay != 0.0) p[j] -= opts_.lr * opts_.weight_decay * p[j];
      p[j] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
    }
  }
}

std::vector<double> masked_softmax(std::span<const double> logits, const std::vector<bool>& valid) {
  if (logits.size() != valid.size()) throw ShapeError("masked_softmax: mask length mismatch");
  double mx = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (valid[i]) {
      mx = std::max(mx, logits[i]);
      any = true;
    }
  }
  if (!any) throw std::invalid_argument("masked_softmax: no valid entries");
  std::vector<double> p(logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (valid[i]) {
      p[i] = std::exp(logits[i] - mx);
      z += p[i];
    }
  }
  for (double& v : p) v /= z;
  return p;
}

DiagGaussian::DiagGaussian(std::vector<double> mean, std::vector<double> stddev)
    : mean_(std::move(mean)), stddev_(std::move(stddev)) {
  if (mean_.size() != stddev_.size()) throw ShapeError("DiagGaussian: mean/stddev length mismatch");
  for (double s : stddev_) {
    if (!(s > 0.0)) throw std::invalid_argument("DiagGaussian: stddev must be positive");
  }
}

std::vector<double> DiagGaussian::sample(Rng& rng) const {
  std::vector<double> z(dim());
  for (std::size_t i = 0; i < dim(); ++i) z[i] = mean_[i] + stddev_[i] * rng.normal();
  return z;
}

double DiagGaussian::log_prob(std::span<const double> z) const {
  if (z.size() != dim()) throw ShapeError("DiagGaussian::log_prob length mismatch");
  constexpr double half_log_2pi = 0.91893853320467274178;
  double lp = 0.0;
  for (std::size_t i = 0; i < dim(); ++i) {
    const double u = (z[i] - mean_[i]) / stddev_[i];
    lp += -0.5 * u * u - std::log(stddev_[i]) - half_log_2pi;
  }
  return lp;
}

double DiagGaussian::entropy() const {
  double h = 0.0;
  for (double s : stddev_) h += 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * s * s);
  return h;
}

std::vector<double> DiagGaussian::grad_log_prob_mean(std::span<const double> z) const {
  if (z.size() != dim()) throw ShapeError("DiagGaussian::grad_log_prob_mean length mismatch");
  std::vector<double> g(dim());
  for (std::size_t i = 0; i < dim(); ++i) g[i] = (z[i] - mean_[i]) / (stddev_[i] * stddev_[i]);
  return g;
}

double gaussian_kl_shared_sigma(std::span<const double> mu_p, std::span<const double> mu_q,
                                std::span<const double> sigma) {
  if (mu_p.size() != mu_q.size() || mu_p.size() != sigma.size()) {
    throw ShapeError("gaussian_kl_shared_sigma length mismatch");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < mu_p.size(); ++i) {
    const double d = mu_p[i] - mu_q[i];
    kl += d * d / (2.0 * sigma[i] * sigma[i]);
  }
  return kl;
}

}  // namespace relief
