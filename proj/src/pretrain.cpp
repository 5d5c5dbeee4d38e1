#include "relief/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>

#include "relief/kernels.hpp"
#include "relief/loss.hpp"

namespace relief {

PretrainStrategy parse_pretrain_strategy(const std::string& s) {
  if (s == "masked_edge") return PretrainStrategy::masked_edge;
  if (s == "contra_edge") return PretrainStrategy::contra_edge;
  if (s == "attr_mask") return PretrainStrategy::attr_mask;
  throw ConfigError("unknown strategy '" + s + "' (valid: masked_edge, contra_edge, attr_mask)");
}

std::string to_string(PretrainStrategy s) {
  switch (s) {
    case PretrainStrategy::masked_edge: return "masked_edge";
    case PretrainStrategy::contra_edge: return "contra_edge";
    case PretrainStrategy::attr_mask: return "attr_mask";
  }
  return "?";
}

void PretrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  switch (strategy) {
    case PretrainStrategy::masked_edge:
      if (!(negative_ratio > 0.0)) throw ConfigError("negative_ratio must be positive");
      break;
    case PretrainStrategy::contra_edge:
      if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
      if (negatives_per_node == 0) throw ConfigError("negatives_per_node must be positive");
      break;
    case PretrainStrategy::attr_mask:
      if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) throw ConfigError("mask_fraction must lie in (0,1)");
      break;
  }
}

EdgeSample sample_edge_pairs(const Graph& g, double negative_ratio, Rng& rng) {
  EdgeSample s;
  for (const auto& e : g.edges()) {
    if (e.first == e.second) continue;
    s.pairs.push_back(e);
    s.targets.push_back(1.0);
  }
  const std::size_t n = g.num_nodes();
  std::vector<Edge> non_edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!g.has_edge(i, j)) non_edges.emplace_back(i, j);
    }
  }
  auto want = static_cast<std::size_t>(std::llround(negative_ratio * static_cast<double>(s.pairs.size())));
  want = std::min(want, non_edges.size());
  // Partial Fisher-Yates: the first `want` entries are a uniform sample.
  for (std::size_t k = 0; k < want; ++k) {
    std::swap(non_edges[k], non_edges[k + rng.index(non_edges.size() - k)]);
    s.pairs.push_back(non_edges[k]);
    s.targets.push_back(0.0);
  }
  return s;
}

double masked_edge_loss(const Matrix& emb, const EdgeSample& s, Matrix* d_emb) {
  if (s.pairs.empty()) return 0.0;
  if (d_emb) *d_emb = Matrix(emb.rows(), emb.cols());
  const double inv = 1.0 / static_cast<double>(s.pairs.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < s.pairs.size(); ++k) {
    const auto [i, j] = s.pairs[k];
    const double logit = dot(emb.row(i), emb.row(j));
    loss += inv * bce_with_logit(logit, s.targets[k]);
    if (d_emb) {
      const double g = inv * (sigmoid(logit) - s.targets[k]);
      for (std::size_t c = 0; c < emb.cols(); ++c) {
        (*d_emb)(i, c) += g * emb(j, c);
        (*d_emb)(j, c) += g * emb(i, c);
      }
    }
  }
  return loss;
}

double contrastive_loss(std::span<const double> anchor, std::span<const double> positive,
                        const std::vector<std::vector<double>>& negatives, double tau,
                        std::vector<double>* d_anchor, std::vector<double>* d_positive,
                        std::vector<std::vector<double>>* d_negatives) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  std::vector<double> logits{dot(anchor, positive) / tau};
  for (const auto& neg : negatives) logits.push_back(dot(anchor, neg) / tau);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double lse = mx + std::log(z);
  const double loss = lse - logits[0];
  if (d_anchor || d_positive || d_negatives) {
    const std::size_t dim = anchor.size();
    std::vector<double> dl(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) dl[k] = std::exp(logits[k] - lse) / tau;
    dl[0] -= 1.0 / tau;
    if (d_anchor) {
      d_anchor->assign(dim, 0.0);
      for (std::size_t c = 0; c < dim; ++c) {
        (*d_anchor)[c] += dl[0] * positive[c];
        for (std::size_t k = 0; k < negatives.size(); ++k) (*d_anchor)[c] += dl[k + 1] * negatives[k][c];
      }
    }
    if (d_positive) {
      d_positive->assign(dim, 0.0);
      for (std::size_t c = 0; c < dim; ++c) (*d_positive)[c] = dl[0] * anchor[c];
    }
    if (d_negatives) {
      d_negatives->assign(negatives.size(), std::vector<double>(dim, 0.0));
      for (std::size_t k = 0; k < negatives.size(); ++k) {
        for (std::size_t c = 0; c < dim; ++c) (*d_negatives)[k][c] = dl[k + 1] * anchor[c];
      }
    }
  }
  return loss;
}

std::vector<std::size_t> choose_masked_nodes(std::size_t n, double mask_fraction, Rng& rng) {
  const auto count = static_cast<std::size_t>(std::floor(mask_fraction * static_cast<double>(n)));
  std::vector<std::size_t> nodes(n);
  std::iota(nodes.begin(), nodes.end(), 0);
  for (std::size_t k = 0; k < count; ++k) std::swap(nodes[k], nodes[k + rng.index(n - k)]);
  nodes.resize(count);
  std::sort(nodes.begin(), nodes.end());
  return nodes;
}

double attr_mask_loss(const GinModel& model, const Mlp& head, const Graph& g,
                      const std::vector<std::size_t>& masked, std::vector<Matrix>* gin_grads,
                      std::vector<Matrix>* head_grads) {
  if (masked.empty()) return 0.0;
  Matrix x = g.features();
  for (std::size_t v : masked) std::fill(x.row(v).begin(), x.row(v).end(), 0.0);
  GinModel::Cache gc;
  const Matrix emb = model.forward(g, x, gc);
  const Matrix picked = gather_rows(emb, masked);
  Mlp::Cache hc;
  const Matrix pred = head.forward(picked, hc);
  const Matrix target = gather_rows(g.features(), masked);
  const double inv = 1.0 / static_cast<double>(pred.size());
  double loss = 0.0;
  Matrix d_pred(pred.rows(), pred.cols());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double diff = pred.values()[i] - target.values()[i];
    loss += inv * diff * diff;
    d_pred.values()[i] = 2.0 * inv * diff;
  }
  if (gin_grads || head_grads) {
    std::vector<Matrix> hg;
    const Matrix d_picked = head.backward(hc, d_pred, hg);
    if (head_grads) *head_grads = std::move(hg);
    if (gin_grads) {
      Matrix d_emb(emb.rows(), emb.cols());
      for (std::size_t k = 0; k < masked.size(); ++k) {
        for (std::size_t c = 0; c < emb.cols(); ++c) d_emb(masked[k], c) += d_picked(k, c);
      }
      model.backward(g, gc, d_emb, *gin_grads);
    }
  }
  return loss;
}

namespace {

// One graph's contribution: loss and gradients for the flat parameter list,
// or nullopt if the graph offers nothing to learn from.
using GraphStep = std::function<std::optional<double>(const Graph&, Rng&, std::vector<Matrix>*)>;

PretrainResult run_loop(const Dataset& data, const PretrainConfig& cfg, std::vector<Matrix*> params,
                        const GraphStep& step) {
  cfg.validate();
  if (data.graphs.empty()) throw DataError("empty dataset");
  PretrainResult result;
  Rng rng(cfg.seed);
  Adam opt(params, Adam::Options{.lr = cfg.lr});
  const std::size_t m = data.graphs.size();

  auto zero_like = [&] {
    std::vector<Matrix> g;
    for (const Matrix* p : params) g.emplace_back(p->rows(), p->cols());
    return g;
  };

  {
    Rng probe = rng.fork();
    double total = 0.0;
    std::size_t used = 0;
    for (const Graph& g : data.graphs) {
      Rng local = probe.fork();
      if (auto l = step(g, local, nullptr)) {
        total += *l;
        ++used;
      }
    }
    if (used == 0) throw DataError("no graph in the dataset is usable for " + to_string(cfg.strategy));
    result.initial_loss = total / static_cast<double>(used);
    result.skipped_graphs = m - used;
    if (result.skipped_graphs > 0) {
      std::cerr << "warning: " << result.skipped_graphs << " graph(s) skipped by " << to_string(cfg.strategy)
                << "\n";
    }
  }

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t epoch_used = 0;
    for (std::size_t start = 0; start < m; start += cfg.batch_size) {
      const std::size_t end = std::min(m, start + cfg.batch_size);
      const std::size_t b = end - start;
      std::vector<Rng> rngs;
      for (std::size_t k = 0; k < b; ++k) rngs.push_back(rng.fork());
      std::vector<std::optional<double>> losses(b);
      std::vector<std::vector<Matrix>> grads(b);
      kernels::parallel_for(b, [&](std::size_t k) {
        losses[k] = step(data.graphs[order[start + k]], rngs[k], &grads[k]);
      });
      // Fixed-order reduction keeps results independent of the thread count.
      std::vector<Matrix> total = zero_like();
      std::size_t used = 0;
      for (std::size_t k = 0; k < b; ++k) {
        if (!losses[k]) continue;
        if (!std::isfinite(*losses[k])) {
          throw NumericalError(to_string(cfg.strategy) + ": non-finite loss at epoch " +
                               std::to_string(epoch + 1));
        }
        accumulate(total, grads[k]);
        epoch_loss += *losses[k];
        ++used;
      }
      if (used == 0) continue;
      for (auto& t : total) t *= 1.0 / static_cast<double>(used);
      epoch_used += used;
      opt.step(params, total);
    }
    const double mean = epoch_used ? epoch_loss / static_cast<double>(epoch_used) : 0.0;
    if (!std::isfinite(mean)) {
      throw NumericalError(to_string(cfg.strategy) + ": non-finite loss at epoch " + std::to_string(epoch + 1));
    }
    result.loss_curve.push_back(mean);
  }
  return result;
}

}  // namespace

PretrainResult pretrain_masked_edge(GinModel& model, const Dataset& data, const PretrainConfig& cfg) {
  PretrainConfig c = cfg;
  c.strategy = PretrainStrategy::masked_edge;
  auto params = model.trainable_parameters();
  return run_loop(data, c, params, [&](const Graph& g, Rng& rng, std::vector<Matrix>* grads) -> std::optional<double> {
    if (g.num_nodes() < 2) return std::nullopt;
    const EdgeSample s = sample_edge_pairs(g, c.negative_ratio, rng);
    if (s.pairs.empty()) return std::nullopt;
    GinModel::Cache cache;
    const Matrix emb = model.forward_train(g, g.features(), cache, rng);
    if (!grads) return masked_edge_loss(emb, s, nullptr);
    Matrix d_emb;
    const double loss = masked_edge_loss(emb, s, &d_emb);
    model.backward(g, cache, d_emb, *grads);
    return loss;
  });
}

PretrainResult pretrain_contra_edge(GinModel& model, const Dataset& data, const PretrainConfig& cfg) {
  PretrainConfig c = cfg;
  c.strategy = PretrainStrategy::contra_edge;
  auto params = model.trainable_parameters();
  return run_loop(data, c, params, [&](const Graph& g, Rng& rng, std::vector<Matrix>* grads) -> std::optional<double> {
    const std::size_t n = g.num_nodes();
    if (n < 2) return std::nullopt;
    GinModel::Cache cache;
    const Matrix emb = model.forward_train(g, g.features(), cache, rng);
    Matrix d_emb(emb.rows(), emb.cols());
    double total = 0.0;
    std::size_t anchors = 0;
    for (std::size_t v = 0; v < n; ++v) {
      std::vector<std::size_t> nbrs;
      for (std::size_t u : g.adjacency().neighbors(v)) {
        if (u != v) nbrs.push_back(u);
      }
      if (nbrs.empty()) continue;  // isolated anchor
      std::vector<std::size_t> non;
      for (std::size_t u = 0; u < n; ++u) {
        if (u != v && !std::binary_search(nbrs.begin(), nbrs.end(), u)) non.push_back(u);
      }
      if (non.empty()) continue;
      const std::size_t pos = nbrs[rng.index(nbrs.size())];
      std::vector<std::size_t> negs;
      std::vector<std::vector<double>> neg_h;
      for (std::size_t k = 0; k < c.negatives_per_node; ++k) {
        negs.push_back(non[rng.index(non.size())]);
        neg_h.emplace_back(emb.row(negs.back()).begin(), emb.row(negs.back()).end());
      }
      std::vector<double> da, dp;
      std::vector<std::vector<double>> dn;
      total += contrastive_loss(emb.row(v), emb.row(pos), neg_h, c.temperature, grads ? &da : nullptr,
                                grads ? &dp : nullptr, grads ? &dn : nullptr);
      if (grads) {
        for (std::size_t col = 0; col < emb.cols(); ++col) {
          d_emb(v, col) += da[col];
          d_emb(pos, col) += dp[col];
          for (std::size_t k = 0; k < negs.size(); ++k) d_emb(negs[k], col) += dn[k][col];
        }
      }
      ++anchors;
    }
    if (anchors == 0) return std::nullopt;
    const double inv = 1.0 / static_cast<double>(anchors);
    if (grads) {
      d_emb *= inv;
      model.backward(g, cache, d_emb, *grads);
    }
    return total * inv;
  });
}

PretrainResult pretrain_attr_mask(GinModel& model, const Dataset& data, const PretrainConfig& cfg) {
  PretrainConfig c = cfg;
  c.strategy = PretrainStrategy::attr_mask;
  c.validate();
  bool any = false;
  for (const Graph& g : data.graphs) {
    any |= std::floor(c.mask_fraction * static_cast<double>(g.num_nodes())) >= 1.0;
  }
  if (!any) throw ConfigError("mask_fraction masks no node in any graph");
  Rng head_rng(c.seed ^ 0x9e3779b97f4a7c15ULL);
  Mlp head({model.hidden_dim(), data.feature_dim()}, head_rng);
  auto params = model.trainable_parameters();
  const std::size_t n_gin = params.size();
  for (Matrix* p : head.parameters()) params.push_back(p);
  return run_loop(data, c, params, [&](const Graph& g, Rng& rng, std::vector<Matrix>* grads) -> std::optional<double> {
    const auto masked = choose_masked_nodes(g.num_nodes(), c.mask_fraction, rng);
    if (masked.empty()) return std::nullopt;
    if (!grads) return attr_mask_loss(model, head, g, masked, nullptr, nullptr);
    std::vector<Matrix> gg, hg;
    const double loss = attr_mask_loss(model, head, g, masked, &gg, &hg);
    grads->clear();
    grads->reserve(n_gin + hg.size());
    for (auto& m : gg) grads->push_back(std::move(m));
    for (auto& m : hg) grads->push_back(std::move(m));
    return loss;
  });
}

PretrainResult pretrain(GinModel& model, const Dataset& data, const PretrainConfig& cfg) {
  switch (cfg.strategy) {
    case PretrainStrategy::masked_edge: return pretrain_masked_edge(model, data, cfg);
    case PretrainStrategy::contra_edge: return pretrain_contra_edge(model, data, cfg);
    case PretrainStrategy::attr_mask: return pretrain_attr_mask(model, data, cfg);
  }
  throw ConfigError("unknown strategy");
}

}  // namespace relief
