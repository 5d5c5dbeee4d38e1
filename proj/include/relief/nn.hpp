#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "relief/tensor.hpp"

namespace relief {

/// Fully connected stack: ReLU between layers, identity on the output.
/// Weights are stored in×out so a batch forward is `x·W + b`.
class Mlp {
 public:
  struct Layer {
    Matrix weight;  // in × out
    Matrix bias;    // 1 × out
  };

  /// Activations kept by forward() for the matching backward().
  struct Cache {
    std::vector<Matrix> inputs;  // input to each layer (post-activation of previous)
    std::vector<Matrix> pre;     // pre-activation of each layer
  };

  Mlp() = default;
  /// All-zero parameters.
  explicit Mlp(std::vector<std::size_t> sizes);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation; the final
  /// layer is additionally multiplied by `output_scale`.
  Mlp(std::vector<std::size_t> sizes, Rng& rng, double output_scale = 1.0);

  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }
  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t parameter_count() const;

  Layer& layer(std::size_t i) { return layers_[i]; }
  const Layer& layer(std::size_t i) const { return layers_[i]; }

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, Cache& cache) const;

  /// Returns dL/dx and writes parameter gradients (same order as
  /// parameters()) into `grads`, overwriting whatever was there.
  Matrix backward(const Cache& cache, const Matrix& dy, std::vector<Matrix>& grads) const;
  /// Input gradient only.
  Matrix backward_input(const Cache& cache, const Matrix& dy) const;

  /// Flat parameter list: W0, b0, W1, b1, ...
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  std::vector<Matrix> zero_grads() const;

 private:
  Matrix backward_impl(const Cache& cache, const Matrix& dy, std::vector<Matrix>* grads) const;

  std::vector<std::size_t> sizes_;
  std::vector<Layer> layers_;
};

/// Accumulates `src` into `dst` elementwise, tensor by tensor.
void accumulate(std::vector<Matrix>& dst, const std::vector<Matrix>& src, double scale = 1.0);

/// Adam with bias correction and optional decoupled weight decay.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  Adam() = default;
  Adam(std::span<const Matrix* const> params, Options opts);
  explicit Adam(const std::vector<Matrix*>& params, Options opts);

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads);

  std::size_t steps() const { return t_; }
  const Options& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }

 private:
  Options opts_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

/// Softmax over entries with valid[i] true; invalid entries are exactly 0.
std::vector<double> masked_softmax(std::span<const double> logits, const std::vector<bool>& valid);

/// Diagonal Gaussian with per-dimension standard deviation.
class DiagGaussian {
 public:
  DiagGaussian(std::vector<double> mean, std::vector<double> stddev);

  std::size_t dim() const { return mean_.size(); }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return stddev_; }

  std::vector<double> sample(Rng& rng) const;
  double log_prob(std::span<const double> z) const;
  double entropy() const;
  /// d log_prob / d mean.
  std::vector<double> grad_log_prob_mean(std::span<const double> z) const;

 private:
  std::vector<double> mean_;
  std::vector<double> stddev_;
};

/// KL(N(mu_p, σ) ‖ N(mu_q, σ)) for a shared diagonal σ.
double gaussian_kl_shared_sigma(std::span<const double> mu_p, std::span<const double> mu_q,
                                std::span<const double> sigma);

}  // namespace relief
