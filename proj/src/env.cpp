#include "relief/env.hpp"

#include <algorithm>
#include <cmath>

namespace relief {

EpisodeContext::EpisodeContext(const Graph& g, const GinModel& model, const Mlp& h, LossKind kind,
                               double zmax, std::size_t n_max)
    : graph(&g), gnn(&model), head(&h), loss_kind(kind), z_max(zmax), max_nodes(n_max) {
  if (g.num_nodes() > n_max) {
    throw DataError("graph has " + std::to_string(g.num_nodes()) + " nodes, above the maximum " +
                    std::to_string(n_max));
  }
  if (zmax < 0.0) throw ConfigError("z_max must be non-negative");
  if (model.input_dim() != g.feature_dim()) throw ShapeError("GIN input dim does not match graph features");
  if (h.input_dim() != model.hidden_dim()) throw ShapeError("head input dim does not match GIN output");
}

namespace {

Matrix prompted_features(const Graph& g, const Matrix& prompts) {
  if (prompts.rows() != g.num_nodes() || prompts.cols() != g.feature_dim()) {
    throw ShapeError("prompt matrix is " + std::to_string(prompts.rows()) + "x" +
                     std::to_string(prompts.cols()) + ", graph features are " +
                     std::to_string(g.num_nodes()) + "x" + std::to_string(g.feature_dim()));
  }
  return g.features() + prompts;
}

}  // namespace

Matrix prompted_graph_embedding(const GinModel& gnn, const Graph& g, const Matrix& prompts) {
  return mean_pool(gnn.forward(g, prompted_features(g, prompts)));
}

PromptEval evaluate_prompt(const EpisodeContext& ctx, const Matrix& prompts, std::size_t step) {
  const Matrix emb = ctx.gnn->forward(*ctx.graph, prompted_features(*ctx.graph, prompts));
  PromptEval out;
  const std::size_t n = emb.rows();
  out.state.embeddings = Matrix(ctx.max_nodes, emb.cols());
  std::copy(emb.values().begin(), emb.values().end(), out.state.embeddings.values().begin());
  out.state.valid.assign(ctx.max_nodes, false);
  std::fill(out.state.valid.begin(), out.state.valid.begin() + static_cast<std::ptrdiff_t>(n), true);
  out.state.num_nodes = n;
  out.state.step = step;
  out.graph_embedding = mean_pool(emb);
  out.loss = task_loss_value(ctx.loss_kind, ctx.head->forward(out.graph_embedding), ctx.graph->label());
  if (!std::isfinite(out.loss)) throw NumericalError("non-finite loss while scoring a prompt");
  return out;
}

EnvState build_state(const EpisodeContext& ctx, const Matrix& prompts, std::size_t step) {
  return evaluate_prompt(ctx, prompts, step).state;
}

double prompted_loss(const EpisodeContext& ctx, const Matrix& prompts) {
  return evaluate_prompt(ctx, prompts).loss;
}

void apply_prompt_inplace(Matrix& prompts, std::size_t action, std::span<const double> z) {
  if (action >= prompts.rows()) {
    throw std::out_of_range("prompt action " + std::to_string(action) + " out of range for " +
                            std::to_string(prompts.rows()) + " nodes");
  }
  if (z.size() != prompts.cols()) throw ShapeError("prompt vector has the wrong width");
  auto row = prompts.row(action);
  for (std::size_t j = 0; j < z.size(); ++j) row[j] += z[j];
}

Matrix apply_prompt(const Matrix& prompts, std::size_t action, std::span<const double> z) {
  Matrix out = prompts;
  apply_prompt_inplace(out, action, z);
  return out;
}

double compute_reward(const EpisodeContext& ctx, const Matrix& prev, const Matrix& next) {
  return prompted_loss(ctx, prev) - prompted_loss(ctx, next);
}

std::vector<double> clamp_prompt(std::span<const double> z, double z_max) {
  std::vector<double> out(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) out[j] = std::clamp(z[j], -z_max, z_max);
  return out;
}

double Episode::total_reward() const {
  double s = 0.0;
  for (const auto& t : transitions) s += t.reward;
  return s;
}

Episode rollout_episode(const EpisodeContext& ctx, const PromptPolicy& policy, RolloutMode mode, Rng& rng) {
  const std::size_t n = ctx.num_nodes();
  Episode ep;
  ep.prompts = Matrix(n, ctx.feature_dim());
  PromptEval cur = evaluate_prompt(ctx, ep.prompts, 0);
  ep.initial_loss = cur.loss;
  ep.transitions.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    PolicyDecision d = policy.decide(cur.state, mode, rng);
    if (d.action >= n) throw std::out_of_range("policy selected a padded node");
    Transition tr;
    tr.z = clamp_prompt(d.z_raw, ctx.z_max);
    apply_prompt_inplace(ep.prompts, d.action, tr.z);
    PromptEval next = evaluate_prompt(ctx, ep.prompts, t + 1);
    tr.action = d.action;
    tr.z_raw = std::move(d.z_raw);
    tr.reward = cur.loss - next.loss;
    tr.done = t + 1 == n;
    tr.log_prob_a = d.log_prob_a;
    tr.log_prob_z = d.log_prob_z;
    tr.value = d.value;
    tr.state = std::move(cur.state);
    tr.next_state = next.state;
    ep.transitions.push_back(std::move(tr));
    cur = std::move(next);
  }
  ep.final_loss = cur.loss;
  return ep;
}

Matrix final_prompts(const EpisodeContext& ctx, const PromptPolicy& policy, RolloutMode mode, Rng& rng) {
  const std::size_t n = ctx.num_nodes();
  Matrix prompts(n, ctx.feature_dim());
  for (std::size_t t = 0; t < n; ++t) {
    const EnvState s = build_state(ctx, prompts, t);
    const PolicyDecision d = policy.decide(s, mode, rng);
    if (d.action >= n) throw std::out_of_range("policy selected a padded node");
    apply_prompt_inplace(prompts, d.action, clamp_prompt(d.z_raw, ctx.z_max));
  }
  return prompts;
}

}  // namespace relief
