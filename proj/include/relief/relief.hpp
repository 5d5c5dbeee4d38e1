#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relief/env.hpp"
#include "relief/gin.hpp"
#include "relief/graph.hpp"
#include "relief/hppo.hpp"
#include "relief/metrics.hpp"

namespace relief {

enum class TaskLevel { graph, node };

enum class Method { relief, fine_tune, linear_probe, random_d, random_c };

Method parse_method(const std::string& s);
std::string to_string(Method m);

struct ReliefConfig {
  std::size_t epochs = 50;
  std::size_t num_policies = 3;
  double alpha_d = 1.0;
  double alpha_c = 0.1;
  double z_max = 0.5;
  std::size_t q = 1;
  double head_lr = 1e-3;
  std::size_t head_layers = 1;
  /// Hidden width of multi-layer heads; 0 means the embedding width.
  std::size_t head_hidden = 0;
  /// Epochs without a new best before stopping; 0 disables early stopping.
  std::size_t patience = 0;
  std::size_t min_epoch_before_best = 20;
  double overlap = 0.2;
  std::size_t policy_hidden = 64;
  /// Stochastic episodes collected per context graph in the policy phase.
  std::size_t episodes_per_graph = 1;
  TaskLevel level = TaskLevel::graph;
  /// When set, alpha_d, z_max, q, head_lr and head_layers must come from the
  /// tuning grids. Unit tests switch it off to probe degenerate settings.
  bool grid_checked = true;
  PpoConfig ppo;
  std::uint64_t seed = 0;

  void validate() const;
  /// Best-epoch selection starts here; clamped so short runs still select one.
  std::size_t effective_min_epoch() const;
};

/// Projection head: `layers` linear maps from d to out_dim with ReLU between.
Mlp make_projection_head(std::size_t embed_dim, std::size_t out_dim, std::size_t layers, std::size_t hidden,
                         Rng& rng);

/// q full-batch Adam steps on the mean task loss. Returns the loss measured
/// before each step.
std::vector<double> train_projection_head(Mlp& head, const std::vector<Matrix>& embeddings,
                                          const std::vector<Label>& labels, LossKind kind, std::size_t q,
                                          Adam& opt);
std::vector<double> train_projection_head(Mlp& head, const std::vector<Matrix>& embeddings,
                                          const std::vector<Label>& labels, LossKind kind, std::size_t q,
                                          double lr);

/// "head-v1" checkpoint holding one MLP under the prefix "head".
Checkpoint head_to_checkpoint(const Mlp& head);
Mlp head_from_checkpoint(const Checkpoint& c);

struct SplitScores {
  double metric = 0.0;  // accuracy (single-label) or mean ROC-AUC (multi-label)
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double mean_reward = 0.0;
};

struct EvalOptions {
  double z_max = 0.5;
  std::size_t max_nodes = 0;
  ActionOverrides overrides;
  /// Seeds the random ablation actors so evaluation stays repeatable.
  std::uint64_t seed = 0;
};

struct EvalResult {
  SplitScores scores;
  std::vector<Matrix> prompts;   // final P per graph
  std::vector<double> rewards;   // L(X) − L(X + P) per graph
  ImpactReport impact;
  double max_abs_prompt = 0.0;
};

/// Deterministic joint-policy rollouts on the listed graphs followed by
/// prediction. A null agent leaves the graphs unprompted. Parameters are
/// never modified.
EvalResult evaluate(const Dataset& data, std::span<const std::size_t> idx, const GinModel& gnn, const Mlp& head,
                    const HppoAgent* agent, const EvalOptions& opts);

/// Task metric of logits against labels (argmax accuracy or mean ROC-AUC).
SplitScores score_predictions(const Dataset& data, std::span<const std::size_t> idx,
                              const std::vector<Matrix>& logits);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  SplitScores train, valid, test;
  std::vector<UpdateStats> policy;  // one entry per sub-policy (empty for baselines)
  double head_loss = 0.0;
};

struct RunReport {
  std::string method;
  std::string metric_name;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_valid_metric = 0.0;
  SplitScores test_at_best;
  ImpactReport test_impact;
  double test_max_abs_prompt = 0.0;
  std::size_t test_max_nodes = 0;

  nlohmann::json to_json() const;
};

/// curves.csv rows: epoch,split,metric,mean_reward.
void write_curves_csv(const RunReport& r, std::ostream& out);
/// Per-epoch policy statistics: epoch,policy,surrogate_d,...,mean_episode_reward.
void write_policy_stats_csv(const RunReport& r, std::ostream& out);

struct TrainOptions {
  ActionOverrides overrides;
  /// When non-empty, the best-so-far state is written here at every new best.
  std::filesystem::path checkpoint_dir;
};

struct RunResult {
  RunReport report;
  std::optional<HppoAgent> agent;  // absent for linear probing and fine-tuning
  Mlp head;
  std::optional<GinModel> tuned_gnn;  // fine-tuning only
  EvalResult test_eval;               // test split at the best epoch
  std::string rng_state;              // trainer RNG at the best epoch
};

/// Alternating policy and projection-head phases with
/// best-validation selection. `gnn` must be frozen and is never modified.
RunResult train_relief(const Dataset& data, const Split& split, const GinModel& gnn, const ReliefConfig& cfg,
                       const TrainOptions& opts = {});

/// Baselines and ablations; Method::relief forwards to train_relief.
RunResult run_method(Method m, const Dataset& data, const Split& split, const GinModel& gnn,
                     const ReliefConfig& cfg, const TrainOptions& opts = {});

}  // namespace relief
