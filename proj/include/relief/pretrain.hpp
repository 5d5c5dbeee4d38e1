#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "relief/gin.hpp"
#include "relief/graph.hpp"

namespace relief {

enum class PretrainStrategy { masked_edge, contra_edge, attr_mask };

PretrainStrategy parse_pretrain_strategy(const std::string& s);
std::string to_string(PretrainStrategy s);

struct PretrainConfig {
  PretrainStrategy strategy = PretrainStrategy::masked_edge;
  std::size_t epochs = 50;
  double lr = 1e-3;
  /// Graphs per optimizer step.
  std::size_t batch_size = 8;
  /// masked_edge: sampled non-edges per positive edge.
  double negative_ratio = 1.0;
  /// contra_edge: softmax temperature and negatives per anchor.
  double temperature = 1.0;
  std::size_t negatives_per_node = 5;
  /// attr_mask: share of nodes per graph whose features are zeroed.
  double mask_fraction = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PretrainResult {
  /// Mean loss over the dataset before any update, on a fresh sample.
  double initial_loss = 0.0;
  /// Mean per-graph training loss for each epoch.
  std::vector<double> loss_curve;
  /// Graphs skipped because the strategy had nothing to learn from them.
  std::size_t skipped_graphs = 0;
};

/// Trains `model` in place with the configured strategy. The dataset is not
/// modified. Throws NumericalError if a loss turns non-finite.
PretrainResult pretrain(GinModel& model, const Dataset& data, const PretrainConfig& cfg);
PretrainResult pretrain_masked_edge(GinModel& model, const Dataset& data, const PretrainConfig& cfg);
PretrainResult pretrain_contra_edge(GinModel& model, const Dataset& data, const PretrainConfig& cfg);
PretrainResult pretrain_attr_mask(GinModel& model, const Dataset& data, const PretrainConfig& cfg);

/// Node pairs with binary targets for edge prediction.
struct EdgeSample {
  std::vector<Edge> pairs;
  std::vector<double> targets;
};

/// All edges as positives plus round(ratio·|E|) uniformly drawn non-edges.
EdgeSample sample_edge_pairs(const Graph& g, double negative_ratio, Rng& rng);

/// Mean BCE of dot-product logits over the sample; writes dL/dH into d_emb.
double masked_edge_loss(const Matrix& emb, const EdgeSample& s, Matrix* d_emb);

/// -log softmax of the positive among {positive, negatives} at temperature τ.
/// Gradients (when non-null) are with respect to the anchor, the positive and
/// each negative.
double contrastive_loss(std::span<const double> anchor, std::span<const double> positive,
                        const std::vector<std::vector<double>>& negatives, double tau,
                        std::vector<double>* d_anchor = nullptr,
                        std::vector<double>* d_positive = nullptr,
                        std::vector<std::vector<double>>* d_negatives = nullptr);

/// floor(mask_fraction · n) distinct nodes chosen uniformly.
std::vector<std::size_t> choose_masked_nodes(std::size_t n, double mask_fraction, Rng& rng);

/// Squared reconstruction error of masked nodes' original features from their
/// embeddings (computed with those rows zeroed), averaged over masked nodes
/// and feature dims.
double attr_mask_loss(const GinModel& model, const Mlp& head, const Graph& g,
                      const std::vector<std::size_t>& masked, std::vector<Matrix>* gin_grads,
                      std::vector<Matrix>* head_grads);

}  // namespace relief
