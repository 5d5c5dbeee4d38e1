#include "relief/gin.hpp"

#include "relief/kernels.hpp"

namespace relief {

GinModel::GinModel(const GinConfig& cfg, Rng& rng) : dropout_(cfg.dropout) {
  if (cfg.num_layers == 0) throw ConfigError("GIN needs at least one layer");
  if (cfg.input_dim == 0 || cfg.hidden_dim == 0) throw ConfigError("GIN dimensions must be positive");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw ConfigError("dropout must lie in [0,1)");
  std::size_t in = cfg.input_dim;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    layers_.push_back({Matrix(1, 1), Mlp({in, cfg.hidden_dim, cfg.hidden_dim}, rng, cfg.init_scale)});
    in = cfg.hidden_dim;
  }
}

GinModel::GinModel(std::vector<Layer> layers, double dropout)
    : layers_(std::move(layers)), dropout_(dropout) {
  if (layers_.empty()) throw ConfigError("GIN needs at least one layer");
  for (std::size_t l = 1; l < layers_.size(); ++l) {
    if (layers_[l].mlp.input_dim() != layers_[l - 1].mlp.output_dim()) {
      throw ShapeError("GIN layer " + std::to_string(l) + " input does not chain");
    }
  }
}

Matrix GinModel::forward(const Graph& g, const Matrix& x) const {
  Cache cache;
  return forward_impl(g, x, cache, nullptr);
}

Matrix GinModel::forward(const Graph& g, const Matrix& x, Cache& cache) const {
  return forward_impl(g, x, cache, nullptr);
}

Matrix GinModel::forward_train(const Graph& g, const Matrix& x, Cache& cache, Rng& rng) const {
  return forward_impl(g, x, cache, dropout_ > 0.0 ? &rng : nullptr);
}

Matrix GinModel::forward_impl(const Graph& g, const Matrix& x, Cache& cache, Rng* rng) const {
  if (x.rows() != g.num_nodes() || x.cols() != input_dim()) {
    throw ShapeError("GIN input is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                     ", expected " + std::to_string(g.num_nodes()) + "x" +
                     std::to_string(input_dim()));
  }
  cache = Cache{};
  const auto adj = g.adjacency().view();
  Matrix h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const double self = 1.0 + layers_[l].eps(0, 0);
    Matrix agg = kernels::neighbor_sum(adj, h);
    const auto& hv = h.values();
    auto& av = agg.values();
    for (std::size_t i = 0; i < av.size(); ++i) av[i] += self * hv[i];
    cache.inputs.push_back(std::move(h));
    cache.mlp.emplace_back();
    Matrix out = layers_[l].mlp.forward(agg, cache.mlp.back());
    h = out;
    if (l + 1 < layers_.size()) {
      for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
      if (rng != nullptr) {
        Matrix keep(h.rows(), h.cols());
        const double scale = 1.0 / (1.0 - dropout_);
        for (double& k : keep.values()) k = rng->bernoulli(dropout_) ? 0.0 : scale;
        for (std::size_t i = 0; i < h.size(); ++i) h.values()[i] *= keep.values()[i];
        cache.dropout.push_back(std::move(keep));
      } else {
        cache.dropout.emplace_back();
      }
    }
    cache.outputs.push_back(std::move(out));
  }
  h.require_finite("GIN forward");
  return h;
}

Matrix GinModel::backward(const Graph& g, const Cache& cache, const Matrix& d_embeddings,
                          std::vector<Matrix>& grads) const {
  if (frozen_) throw FrozenModelError("parameter gradients requested from a frozen GIN");
  return backward_impl(g, cache, d_embeddings, &grads);
}

Matrix GinModel::backward_input(const Graph& g, const Cache& cache, const Matrix& d_embeddings) const {
  return backward_impl(g, cache, d_embeddings, nullptr);
}

Matrix GinModel::backward_impl(const Graph& g, const Cache& cache, const Matrix& d_embeddings,
                               std::vector<Matrix>* grads) const {
  if (cache.inputs.size() != layers_.size()) throw ShapeError("GIN cache does not match model");
  if (d_embeddings.rows() != g.num_nodes() || d_embeddings.cols() != hidden_dim()) {
    throw ShapeError("GIN backward: gradient shape mismatch");
  }
  if (grads) *grads = zero_grads();
  const auto adj = g.adjacency().view();
  Matrix delta = d_embeddings;
  std::size_t slot = parameters().size();
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const std::size_t n_mlp = 2 * layers_[l].mlp.num_layers();
    slot -= n_mlp + 1;
    if (l + 1 < layers_.size()) {
      if (!cache.dropout[l].empty()) {
        for (std::size_t i = 0; i < delta.size(); ++i) delta.values()[i] *= cache.dropout[l].values()[i];
      }
      const auto& out = cache.outputs[l].values();
      for (std::size_t i = 0; i < delta.size(); ++i) {
        if (!(out[i] > 0.0)) delta.values()[i] = 0.0;
      }
    }
    Matrix d_agg;
    if (grads) {
      std::vector<Matrix> mlp_grads;
      d_agg = layers_[l].mlp.backward(cache.mlp[l], delta, mlp_grads);
      for (std::size_t k = 0; k < n_mlp; ++k) (*grads)[slot + 1 + k] = std::move(mlp_grads[k]);
      double de = 0.0;
      const auto& hv = cache.inputs[l].values();
      for (std::size_t i = 0; i < hv.size(); ++i) de += d_agg.values()[i] * hv[i];
      (*grads)[slot](0, 0) = de;
    } else {
      d_agg = layers_[l].mlp.backward_input(cache.mlp[l], delta);
    }
    // Symmetric adjacency: the transpose of neighbor_sum is neighbor_sum.
    Matrix dh = kernels::neighbor_sum(adj, d_agg);
    const double self = 1.0 + layers_[l].eps(0, 0);
    for (std::size_t i = 0; i < dh.size(); ++i) dh.values()[i] += self * d_agg.values()[i];
    delta = std::move(dh);
  }
  return delta;
}

std::vector<Matrix*> GinModel::parameters() {
  std::vector<Matrix*> out;
  for (auto& l : layers_) {
    out.push_back(&l.eps);
    for (Matrix* p : l.mlp.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Matrix*> GinModel::parameters() const {
  std::vector<const Matrix*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.eps);
    for (const Matrix* p : l.mlp.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<Matrix*> GinModel::trainable_parameters() {
  if (frozen_) throw FrozenModelError("frozen GIN has no trainable parameters");
  return parameters();
}

std::vector<Matrix> GinModel::zero_grads() const {
  std::vector<Matrix> g;
  for (const Matrix* p : parameters()) g.emplace_back(p->rows(), p->cols());
  return g;
}

std::size_t GinModel::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* p : parameters()) n += p->size();
  return n;
}

Checkpoint GinModel::to_checkpoint() const {
  Checkpoint c;
  c.kind = "gin-v1";
  c.meta["num_layers"] = layers_.size();
  c.meta["input_dim"] = input_dim();
  c.meta["hidden_dim"] = hidden_dim();
  c.meta["dropout"] = dropout_;
  std::vector<double> eps;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    eps.push_back(layers_[l].eps(0, 0));
    c.put_mlp("layer" + std::to_string(l), layers_[l].mlp);
  }
  c.meta["eps"] = eps;
  return c;
}

GinModel GinModel::from_checkpoint(const Checkpoint& c) {
  if (c.kind != "gin-v1") throw CheckpointError("expected a gin-v1 checkpoint, got '" + c.kind + "'");
  const auto n = c.meta.at("num_layers").get<std::size_t>();
  const auto eps = c.meta.at("eps").get<std::vector<double>>();
  if (eps.size() != n) throw CheckpointError("gin-v1 checkpoint: eps count mismatch");
  std::vector<Layer> layers;
  for (std::size_t l = 0; l < n; ++l) {
    layers.push_back({Matrix(1, 1, eps[l]), c.get_mlp("layer" + std::to_string(l))});
  }
  GinModel m(std::move(layers), c.meta.value("dropout", 0.0));
  if (m.input_dim() != c.meta.at("input_dim").get<std::size_t>() ||
      m.hidden_dim() != c.meta.at("hidden_dim").get<std::size_t>()) {
    throw CheckpointError("gin-v1 checkpoint: header dims disagree with tensors");
  }
  return m;
}

bool GinModel::same_parameters(const GinModel& o) const {
  const auto a = parameters();
  const auto b = o.parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(*a[i] == *b[i])) return false;
  }
  return true;
}

Matrix mean_pool(const Matrix& node_embeddings) {
  if (node_embeddings.rows() == 0) throw ShapeError("mean_pool over zero nodes");
  Matrix out(1, node_embeddings.cols());
  for (std::size_t r = 0; r < node_embeddings.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(0, c) += node_embeddings(r, c);
  }
  out *= 1.0 / static_cast<double>(node_embeddings.rows());
  return out;
}

Matrix mean_pool_backward(const Matrix& d_pooled, std::size_t n) {
  if (n == 0) throw ShapeError("mean_pool_backward over zero nodes");
  Matrix out(n, d_pooled.cols());
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = d_pooled(0, c) * inv;
  }
  return out;
}

}  // namespace relief
