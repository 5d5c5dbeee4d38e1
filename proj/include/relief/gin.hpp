#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "relief/checkpoint.hpp"
#include "relief/graph.hpp"
#include "relief/nn.hpp"

namespace relief {

/// Raised when code tries to compute parameter updates for a frozen model.
class FrozenModelError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct GinConfig {
  std::size_t input_dim = 8;
  std::size_t hidden_dim = 32;
  std::size_t num_layers = 2;
  /// Inverted dropout on hidden layer outputs; only active in training passes.
  double dropout = 0.0;
  /// Scale applied to each layer MLP's output weights at init.
  double init_scale = 1.0;
};

/// Graph Isomorphism Network. Layer l computes
///   h_v ← MLP_l((1 + ε_l)·h_v + Σ_{u∈N(v)} h_u)
/// with a 2-layer MLP of width d per layer and ReLU between GIN layers.
/// The last layer's output is the node embedding.
class GinModel {
 public:
  struct Layer {
    Matrix eps;  // 1×1, learnable, initialised to 0
    Mlp mlp;
  };

  struct Cache {
    std::vector<Matrix> inputs;      // h entering each layer
    std::vector<Mlp::Cache> mlp;     // per-layer MLP activations
    std::vector<Matrix> outputs;     // MLP output before the inter-layer ReLU
    std::vector<Matrix> dropout;     // per-layer keep masks (scaled), empty if unused
  };

  GinModel() = default;
  GinModel(const GinConfig& cfg, Rng& rng);
  /// Builds a model from explicit layers (tests use hand-set weights).
  GinModel(std::vector<Layer> layers, double dropout = 0.0);

  std::size_t input_dim() const { return layers_.front().mlp.input_dim(); }
  std::size_t hidden_dim() const { return layers_.back().mlp.output_dim(); }
  std::size_t num_layers() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return layers_[i]; }
  const Layer& layer(std::size_t i) const { return layers_[i]; }

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  /// Node embeddings (n × d) for the graph's structure and features `x`
  /// (which may be the prompted features X + P).
  Matrix forward(const Graph& g, const Matrix& x) const;
  Matrix forward(const Graph& g) const { return forward(g, g.features()); }
  Matrix forward(const Graph& g, const Matrix& x, Cache& cache) const;
  /// Training pass with dropout drawn from `rng` when configured.
  Matrix forward_train(const Graph& g, const Matrix& x, Cache& cache, Rng& rng) const;

  /// Gradients for every parameter (same order as parameters()) plus the
  /// input-feature gradient. Throws FrozenModelError on a frozen model.
  Matrix backward(const Graph& g, const Cache& cache, const Matrix& d_embeddings,
                  std::vector<Matrix>& grads) const;
  /// Input-feature gradient only; allowed when frozen.
  Matrix backward_input(const Graph& g, const Cache& cache, const Matrix& d_embeddings) const;

  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  /// Throws FrozenModelError when frozen.
  std::vector<Matrix*> trainable_parameters();
  std::vector<Matrix> zero_grads() const;
  std::size_t parameter_count() const;

  /// "gin-v1" checkpoint: L_g, D, d and ε values in the header.
  Checkpoint to_checkpoint() const;
  static GinModel from_checkpoint(const Checkpoint& c);

  bool same_parameters(const GinModel& o) const;

 private:
  Matrix forward_impl(const Graph& g, const Matrix& x, Cache& cache, Rng* rng) const;
  Matrix backward_impl(const Graph& g, const Cache& cache, const Matrix& d_embeddings,
                       std::vector<Matrix>* grads) const;

  std::vector<Layer> layers_;
  double dropout_ = 0.0;
  bool frozen_ = false;
};

/// Column-wise mean over nodes.
Matrix mean_pool(const Matrix& node_embeddings);
/// Gradient of mean_pool: every row receives d_pooled / n.
Matrix mean_pool_backward(const Matrix& d_pooled, std::size_t n);

}  // namespace relief
