#pragma once

#include <cstddef>
#include <vector>

#include "relief/gin.hpp"
#include "relief/graph.hpp"
#include "relief/loss.hpp"
#include "relief/nn.hpp"

namespace relief {

/// Node embeddings of the prompted graph, zero-padded to N rows.
struct EnvState {
  Matrix embeddings;         // N × d; rows ≥ n are exactly zero
  std::vector<bool> valid;   // true exactly for rows < n
  std::size_t num_nodes = 0; // n
  std::size_t step = 0;      // prompts applied so far

  std::size_t max_nodes() const { return embeddings.rows(); }
};

struct Transition {
  EnvState state;
  std::size_t action = 0;
  std::vector<double> z;      // clamped prompt actually applied
  std::vector<double> z_raw;  // unclamped draw that log_prob_z refers to
  double reward = 0.0;
  EnvState next_state;
  bool done = false;
  double log_prob_a = 0.0;
  double log_prob_z = 0.0;
  double value = 0.0;  // critic estimate V(state)
};

enum class RolloutMode { stochastic, deterministic };

/// What a policy returns for one state. z_raw is unclamped; the environment
/// clamps it.
struct PolicyDecision {
  std::size_t action = 0;
  std::vector<double> z_raw;
  double log_prob_a = 0.0;
  double log_prob_z = 0.0;
  double value = 0.0;
};

class PromptPolicy {
 public:
  virtual ~PromptPolicy() = default;
  virtual PolicyDecision decide(const EnvState& s, RolloutMode mode, Rng& rng) const = 0;
};

/// Everything needed to score prompted versions of one labelled graph. The
/// GIN and head are borrowed and never modified.
struct EpisodeContext {
  const Graph* graph = nullptr;
  const GinModel* gnn = nullptr;
  const Mlp* head = nullptr;
  LossKind loss_kind = LossKind::cross_entropy;
  double z_max = 0.1;
  std::size_t max_nodes = 0;  // N

  EpisodeContext(const Graph& g, const GinModel& model, const Mlp& h, LossKind kind, double zmax,
                 std::size_t n_max);

  std::size_t num_nodes() const { return graph->num_nodes(); }
  std::size_t feature_dim() const { return graph->feature_dim(); }
};

/// State and task loss of X + P from one GIN pass.
struct PromptEval {
  EnvState state;
  double loss = 0.0;
  Matrix graph_embedding;  // 1 × d mean-pooled
};

PromptEval evaluate_prompt(const EpisodeContext& ctx, const Matrix& prompts, std::size_t step = 0);
EnvState build_state(const EpisodeContext& ctx, const Matrix& prompts, std::size_t step = 0);
/// L(g_φ(f_θ(X + P)), y).
double prompted_loss(const EpisodeContext& ctx, const Matrix& prompts);
/// Mean-pooled embedding of X + P.
Matrix prompted_graph_embedding(const GinModel& gnn, const Graph& g, const Matrix& prompts);

/// P'[a] = P[a] + z; other rows untouched.
Matrix apply_prompt(const Matrix& prompts, std::size_t action, std::span<const double> z);
void apply_prompt_inplace(Matrix& prompts, std::size_t action, std::span<const double> z);

/// L(X + P_prev) − L(X + P_next).
double compute_reward(const EpisodeContext& ctx, const Matrix& prev, const Matrix& next);

std::vector<double> clamp_prompt(std::span<const double> z, double z_max);

struct Episode {
  std::vector<Transition> transitions;
  Matrix prompts;  // final P
  double initial_loss = 0.0;
  double final_loss = 0.0;

  double total_reward() const;
};

/// Runs exactly n steps. Deterministic mode expects the policy to return
/// argmax / mean actions; stochastic mode samples.
Episode rollout_episode(const EpisodeContext& ctx, const PromptPolicy& policy, RolloutMode mode,
                        Rng& rng);

/// Final prompt matrix only, skipping transition bookkeeping.
Matrix final_prompts(const EpisodeContext& ctx, const PromptPolicy& policy, RolloutMode mode, Rng& rng);

}  // namespace relief
