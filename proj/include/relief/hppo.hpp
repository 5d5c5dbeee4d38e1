#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "relief/checkpoint.hpp"
#include "relief/env.hpp"
#include "relief/nn.hpp"

namespace relief {

enum class CriticSchedule { per_pair, per_epoch };

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double entropy_coef = 0.01;
  double critic_coef = 0.5;
  std::size_t ppo_epochs = 10;
  std::size_t minibatch_size = 32;
  bool normalize_returns = true;
  bool normalize_advantages = true;
  double actor_lr = 5e-4;
  double critic_lr = 5e-4;
  double weight_decay = 1e-5;
  CriticSchedule critic_schedule = CriticSchedule::per_pair;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Pure pieces of the objective.

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// values has T+1 entries; the last is the bootstrap value (0 at episode end).
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma,
                      double lambda);

struct SurrogateTerm {
  double value = 0.0;    // min(r·A, clip(r, 1-ε, 1+ε)·A)
  double d_ratio = 0.0;  // derivative with respect to r
};

SurrogateTerm clipped_surrogate(double ratio, double advantage, double clip);

/// Σ p log(p/q) over entries with p > 0.
double categorical_kl(std::span<const double> p, std::span<const double> q);
double categorical_entropy(std::span<const double> p);

/// Elementwise max over sub-policy distributions, renormalised.
std::vector<double> joint_discrete(const std::vector<std::vector<double>>& probs);
/// Elementwise mean of sub-policy means.
std::vector<double> joint_continuous(const std::vector<std::vector<double>>& means);

struct DiscreteTerms {
  double surrogate = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
  double objective = 0.0;  // surrogate + β·entropy − α_d·kl
  double ratio = 1.0;
};

/// Per-sample discrete objective; when d_logits is non-null it receives
/// dObjective/dlogits (the joint distribution is treated as a constant).
DiscreteTerms discrete_sample_objective(std::span<const double> logits, const std::vector<bool>& valid,
                                        std::size_t action, double old_log_prob, double advantage,
                                        std::span<const double> joint, double clip, double entropy_coef,
                                        double alpha_d, std::vector<double>* d_logits);

struct ContinuousTerms {
  double surrogate = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
  double objective = 0.0;
  double ratio = 1.0;
};

/// Per-sample continuous objective for N(mu, σ) against the stored draw;
/// d_mu receives dObjective/dmu (joint mean treated as a constant).
ContinuousTerms continuous_sample_objective(std::span<const double> mu, std::span<const double> z_raw,
                                            std::span<const double> sigma, double old_log_prob,
                                            double advantage, std::span<const double> mu_joint,
                                            double clip, double entropy_coef, double alpha_c,
                                            std::vector<double>* d_mu);

/// Splits `train` into l contexts: floor(m/l) disjoint base indices each, the
/// m mod l leftovers dealt round-robin, then floor(o·floor(m/l)) extra indices
/// drawn from the other contexts' bases.
std::vector<std::vector<std::size_t>> bootstrap_contexts(std::span<const std::size_t> train, std::size_t l,
                                                         double overlap, Rng& rng);

// ---------------------------------------------------------------------------
// Networks. Both actors apply one MLP per node to [h_v ‖ mean_u h_u]; padded
// rows are left out. The critic reads the flattened N×d state.

/// N × 2d node-wise actor input (padded rows zero).
Matrix actor_input(const EnvState& s);

class DiscreteActor {
 public:
  DiscreteActor() = default;
  DiscreteActor(std::size_t embed_dim, std::size_t hidden, Rng& rng, double output_scale = 0.01);
  explicit DiscreteActor(Mlp net) : net_(std::move(net)) {}

  /// N logits (padded rows included; callers mask them).
  std::vector<double> logits(const EnvState& s) const;
  std::vector<double> probs(const EnvState& s) const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

 private:
  Mlp net_;  // 2d → hidden → 1
};

class ContinuousActor {
 public:
  ContinuousActor() = default;
  ContinuousActor(std::size_t embed_dim, std::size_t feature_dim, std::size_t hidden, Rng& rng,
                  double output_scale = 0.01);
  explicit ContinuousActor(Mlp net) : net_(std::move(net)) {}

  /// Mean prompt for node `action`.
  std::vector<double> mean(const EnvState& s, std::size_t action) const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

 private:
  Mlp net_;  // 2d → hidden → D
};

class Critic {
 public:
  Critic() = default;
  Critic(std::size_t max_nodes, std::size_t embed_dim, std::size_t hidden, Rng& rng);
  explicit Critic(Mlp net) : net_(std::move(net)) {}

  /// Raw network output on the flattened state.
  double output(const EnvState& s) const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

 private:
  Mlp net_;  // N·d → hidden → 1
};

/// Which actors are replaced by random draws (ablations). A replaced actor
/// is neither consulted nor trained.
struct ActionOverrides {
  bool random_discrete = false;
  bool random_continuous = false;
};

struct AgentDims {
  std::size_t max_nodes = 0;     // N
  std::size_t embed_dim = 0;     // d
  std::size_t feature_dim = 0;   // D
  std::size_t hidden = 64;
  std::size_t num_policies = 3;  // l
  double z_max = 0.5;
};

/// One replay sample with its advantage and critic target.
struct PreparedSample {
  const Transition* transition = nullptr;
  double advantage = 0.0;
  double target = 0.0;  // critic regression target (normalised if enabled)
};

struct PreparedBuffer {
  std::vector<PreparedSample> samples;
  double return_mean = 0.0;
  double return_std = 1.0;
};

struct UpdateStats {
  double surrogate_d = 0.0;
  double surrogate_c = 0.0;
  double entropy_d = 0.0;
  double entropy_c = 0.0;
  double kl_d = 0.0;
  double kl_c = 0.0;
  double critic_loss = 0.0;
  double mean_episode_reward = 0.0;
};

/// l discrete/continuous sub-policy pairs sharing one critic, each with its
/// own Adam state.
class HppoAgent {
 public:
  HppoAgent() = default;
  HppoAgent(const AgentDims& dims, const PpoConfig& cfg, Rng& rng);

  const AgentDims& dims() const { return dims_; }
  const PpoConfig& config() const { return cfg_; }
  std::size_t num_policies() const { return discrete_.size(); }

  DiscreteActor& discrete(std::size_t i) { return discrete_[i]; }
  const DiscreteActor& discrete(std::size_t i) const { return discrete_[i]; }
  ContinuousActor& continuous(std::size_t i) { return continuous_[i]; }
  const ContinuousActor& continuous(std::size_t i) const { return continuous_[i]; }
  Critic& critic() { return critic_; }
  const Critic& critic() const { return critic_; }

  /// Fixed exploration scale z_max/2 per feature dim.
  const std::vector<double>& sigma() const { return sigma_; }

  /// Critic estimate in reward units (undoes return normalisation).
  double value(const EnvState& s) const;

  std::vector<double> joint_probs(const EnvState& s) const;
  std::vector<double> joint_mean(const EnvState& s, std::size_t action) const;

  PolicyDecision decide_sub(std::size_t i, const EnvState& s, RolloutMode mode, Rng& rng,
                            ActionOverrides ov = {}) const;
  PolicyDecision decide_joint(const EnvState& s, RolloutMode mode, Rng& rng, ActionOverrides ov = {}) const;

  /// Advantages, returns and critic targets for a batch of episodes.
  PreparedBuffer prepare(const std::vector<Episode>& episodes) const;

  /// PPO epochs over the buffer for pair i: clipped surrogate plus entropy
  /// bonus minus the KL pull toward the joint policy, for both actors.
  UpdateStats update_actors(std::size_t i, const PreparedBuffer& buf, double alpha_d, double alpha_c,
                            Rng& rng, ActionOverrides ov = {});
  /// MSE regression of the critic onto the buffer targets; returns the mean
  /// loss of the final epoch.
  double update_critic(const PreparedBuffer& buf, Rng& rng);

  Checkpoint to_checkpoint() const;
  static HppoAgent from_checkpoint(const Checkpoint& c, const PpoConfig& cfg);

 private:
  void init_optimizers();

  AgentDims dims_;
  PpoConfig cfg_;
  std::vector<DiscreteActor> discrete_;
  std::vector<ContinuousActor> continuous_;
  Critic critic_;
  std::vector<double> sigma_;
  std::vector<Adam> opt_discrete_;
  std::vector<Adam> opt_continuous_;
  Adam opt_critic_;
  double value_mean_ = 0.0;
  double value_std_ = 1.0;
};

/// Adapter exposing sub-policy i (or the joint policy) to rollout_episode.
class AgentPolicy : public PromptPolicy {
 public:
  static constexpr std::size_t kJoint = static_cast<std::size_t>(-1);

  AgentPolicy(const HppoAgent& agent, std::size_t index, ActionOverrides ov = {})
      : agent_(&agent), index_(index), ov_(ov) {}

  PolicyDecision decide(const EnvState& s, RolloutMode mode, Rng& rng) const override;

 private:
  const HppoAgent* agent_;
  std::size_t index_;
  ActionOverrides ov_;
};

}  // namespace relief
