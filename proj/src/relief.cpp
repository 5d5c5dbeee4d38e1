#include "relief/relief.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <ostream>

#include "relief/kernels.hpp"
#include "relief/loss.hpp"

namespace relief {

Method parse_method(const std::string& s) {
  if (s == "relief") return Method::relief;
  if (s == "fine_tune") return Method::fine_tune;
  if (s == "linear_probe") return Method::linear_probe;
  if (s == "random_d") return Method::random_d;
  if (s == "random_c") return Method::random_c;
  throw ConfigError("unknown method '" + s + "' (valid: relief, fine_tune, linear_probe, random_d, random_c)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::relief: return "relief";
    case Method::fine_tune: return "fine_tune";
    case Method::linear_probe: return "linear_probe";
    case Method::random_d: return "random_d";
    case Method::random_c: return "random_c";
  }
  return "?";
}

namespace {

bool in_grid(double v, std::initializer_list<double> grid) {
  return std::any_of(grid.begin(), grid.end(),
                     [v](double g) { return std::abs(v - g) <= 1e-12 * std::max(1.0, std::abs(g)); });
}

}  // namespace

void ReliefConfig::validate() const {
  ppo.validate();
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (num_policies == 0) throw ConfigError("l must be at least 1");
  if (!(alpha_d >= 0.0)) throw ConfigError("alpha_d must be non-negative");
  if (!(alpha_c >= 0.0)) throw ConfigError("alpha_c must be non-negative");
  if (!(z_max >= 0.0) || !std::isfinite(z_max)) throw ConfigError("z_max must be a non-negative number");
  if (!(head_lr > 0.0)) throw ConfigError("head_lr must be positive");
  if (head_layers < 1 || head_layers > 3) throw ConfigError("head_layers must be 1, 2 or 3");
  if (!(overlap >= 0.0 && overlap <= 1.0)) throw ConfigError("overlap must lie in [0, 1]");
  if (policy_hidden == 0) throw ConfigError("policy_hidden must be positive");
  if (episodes_per_graph == 0) throw ConfigError("episodes_per_graph must be at least 1");
  if (!grid_checked) return;
  if (!in_grid(alpha_d, {1.0, 10.0, 1e3, 1e5})) throw ConfigError("alpha_d must be one of 1, 10, 1000, 100000");
  if (!(alpha_c > 0.0)) throw ConfigError("alpha_c must be positive");
  if (level == TaskLevel::graph && !in_grid(z_max, {0.1, 0.5, 1.0})) {
    throw ConfigError("z_max must be one of 0.1, 0.5, 1.0 for graph tasks");
  }
  if (level == TaskLevel::node && !in_grid(z_max, {0.05, 0.1, 0.5})) {
    throw ConfigError("z_max must be one of 0.05, 0.1, 0.5 for node tasks");
  }
  if (q < 1 || q > 3) throw ConfigError("q must be 1, 2 or 3");
  if (!in_grid(head_lr, {5e-4, 1e-3, 1.5e-3})) throw ConfigError("head_lr must be one of 0.0005, 0.001, 0.0015");
}

std::size_t ReliefConfig::effective_min_epoch() const {
  return std::max<std::size_t>(1, std::min(min_epoch_before_best, epochs));
}

Mlp make_projection_head(std::size_t embed_dim, std::size_t out_dim, std::size_t layers, std::size_t hidden,
                         Rng& rng) {
  if (layers < 1 || layers > 3) throw ConfigError("projection head needs 1 to 3 layers");
  if (out_dim == 0) throw ConfigError("projection head needs a positive output width");
  std::vector<std::size_t> sizes{embed_dim};
  for (std::size_t k = 1; k < layers; ++k) sizes.push_back(hidden == 0 ? embed_dim : hidden);
  sizes.push_back(out_dim);
  return Mlp(sizes, rng);
}

Checkpoint head_to_checkpoint(const Mlp& head) {
  Checkpoint c;
  c.kind = "head-v1";
  c.put_mlp("head", head);
  return c;
}

Mlp head_from_checkpoint(const Checkpoint& c) {
  if (c.kind != "head-v1") throw CheckpointError("expected a head-v1 checkpoint, got " + c.kind);
  return c.get_mlp("head");
}

std::vector<double> train_projection_head(Mlp& head, const std::vector<Matrix>& embeddings,
                                          const std::vector<Label>& labels, LossKind kind, std::size_t q,
                                          Adam& opt) {
  if (embeddings.size() != labels.size()) {
    throw ShapeError("train_projection_head: " + std::to_string(embeddings.size()) + " embeddings but " +
                     std::to_string(labels.size()) + " labels");
  }
  std::vector<double> losses;
  if (embeddings.empty() || q == 0) return losses;
  const double inv = 1.0 / static_cast<double>(embeddings.size());
  std::vector<Matrix> g;
  for (std::size_t step = 0; step < q; ++step) {
    std::vector<Matrix> grads = head.zero_grads();
    double total = 0.0;
    for (std::size_t k = 0; k < embeddings.size(); ++k) {
      Mlp::Cache cache;
      const Matrix logits = head.forward(embeddings[k], cache);
      LossValue lv = task_loss(kind, logits, labels[k]);
      total += lv.loss;
      lv.d_logits *= inv;
      head.backward(cache, lv.d_logits, g);
      accumulate(grads, g);
    }
    const double mean = total * inv;
    if (!std::isfinite(mean)) throw NumericalError("non-finite projection-head loss");
    losses.push_back(mean);
    opt.step(head.parameters(), grads);
  }
  return losses;
}

std::vector<double> train_projection_head(Mlp& head, const std::vector<Matrix>& embeddings,
                                          const std::vector<Label>& labels, LossKind kind, std::size_t q,
                                          double lr) {
  Adam opt(head.parameters(), Adam::Options{lr});
  return train_projection_head(head, embeddings, labels, kind, q, opt);
}

SplitScores score_predictions(const Dataset& data, std::span<const std::size_t> idx,
                              const std::vector<Matrix>& logits) {
  if (idx.size() != logits.size()) throw ShapeError("score_predictions: count mismatch");
  SplitScores s;
  if (idx.empty()) {
    s.metric = s.accuracy = s.macro_f1 = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  if (data.multi_label()) {
    const std::size_t T = data.num_tasks;
    Matrix scores(idx.size(), T);
    std::vector<std::vector<int>> labels(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      labels[k] = data.graphs[idx[k]].label().tasks;
      for (std::size_t t = 0; t < T; ++t) scores(k, t) = sigmoid(logits[k](0, t));
    }
    try {
      s.metric = mean_roc_auc(scores, labels);
    } catch (const std::invalid_argument&) {
      s.metric = std::numeric_limits<double>::quiet_NaN();
    }
    s.accuracy = s.macro_f1 = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  std::vector<int> preds(idx.size());
  std::vector<int> truth(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto row = logits[k].values();
    preds[k] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    truth[k] = data.graphs[idx[k]].label().cls;
  }
  const ClassificationMetrics cm = classification_metrics(preds, truth, data.num_classes);
  s.accuracy = cm.accuracy;
  s.macro_f1 = cm.macro_f1;
  s.metric = cm.accuracy;
  return s;
}

EvalResult evaluate(const Dataset& data, std::span<const std::size_t> idx, const GinModel& gnn, const Mlp& head,
                    const HppoAgent* agent, const EvalOptions& opts) {
  const std::size_t m = idx.size();
  const std::size_t max_nodes = opts.max_nodes == 0 ? data.max_nodes() : opts.max_nodes;
  const LossKind kind = loss_kind_for(data);
  EvalResult out;
  out.prompts.resize(m);
  out.rewards.assign(m, 0.0);
  std::vector<Matrix> logits(m);
  Rng base(opts.seed);
  std::vector<Rng> rngs;
  rngs.reserve(m);
  for (std::size_t k = 0; k < m; ++k) rngs.push_back(base.fork());

  kernels::parallel_for(m, [&](std::size_t k) {
    const Graph& g = data.graphs[idx[k]];
    const EpisodeContext ctx(g, gnn, head, kind, opts.z_max, max_nodes);
    Matrix prompts(g.num_nodes(), g.feature_dim());
    const PromptEval clean = evaluate_prompt(ctx, prompts);
    if (agent != nullptr) {
      const AgentPolicy policy(*agent, AgentPolicy::kJoint, opts.overrides);
      prompts = final_prompts(ctx, policy, RolloutMode::deterministic, rngs[k]);
      const PromptEval prompted = evaluate_prompt(ctx, prompts);
      out.rewards[k] = clean.loss - prompted.loss;
      logits[k] = head.forward(prompted.graph_embedding);
    } else {
      logits[k] = head.forward(clean.graph_embedding);
    }
    out.prompts[k] = std::move(prompts);
  });

  out.scores = score_predictions(data, idx, logits);
  double reward_sum = 0.0;
  for (double r : out.rewards) reward_sum += r;
  out.scores.mean_reward = m ? reward_sum / static_cast<double>(m) : 0.0;
  if (m > 0) out.impact = impact_report(out.prompts);
  for (const Matrix& p : out.prompts) out.max_abs_prompt = std::max(out.max_abs_prompt, max_abs(p));
  return out;
}

nlohmann::json RunReport::to_json() const {
  using nlohmann::json;
  json j;
  j["method"] = method;
  j["metric_name"] = metric_name;
  j["best_epoch"] = best_epoch;
  j["best_valid_metric"] = best_valid_metric;
  j["test_metric"] = test_at_best.metric;
  j["test_accuracy"] = test_at_best.accuracy;
  j["test_macro_f1"] = test_at_best.macro_f1;
  j["test_mean_reward"] = test_at_best.mean_reward;
  j["pcr"] = test_impact.mean_pcr;
  j["apm"] = test_impact.mean_apm;
  j["overall"] = test_impact.mean_overall;
  j["per_graph"] = {{"pcr", test_impact.pcr}, {"apm", test_impact.apm}, {"overall", test_impact.overall}};
  j["max_abs_prompt"] = test_max_abs_prompt;
  j["max_nodes"] = test_max_nodes;
  json rows = json::array();
  for (const EpochRecord& e : epochs) {
    const auto split = [](const SplitScores& s) {
      return json{{"metric", s.metric}, {"accuracy", s.accuracy}, {"macro_f1", s.macro_f1},
                  {"mean_reward", s.mean_reward}};
    };
    rows.push_back({{"epoch", e.epoch},
                    {"train", split(e.train)},
                    {"valid", split(e.valid)},
                    {"test", split(e.test)},
                    {"head_loss", e.head_loss}});
  }
  j["epochs"] = rows;
  return j;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_curves_csv(const RunReport& r, std::ostream& out) {
  out << "epoch,split,metric,mean_reward\n";
  for (const EpochRecord& e : r.epochs) {
    out << e.epoch << ",train," << fmt(e.train.metric) << ',' << fmt(e.train.mean_reward) << '\n';
    out << e.epoch << ",valid," << fmt(e.valid.metric) << ',' << fmt(e.valid.mean_reward) << '\n';
    out << e.epoch << ",test," << fmt(e.test.metric) << ',' << fmt(e.test.mean_reward) << '\n';
  }
}

void write_policy_stats_csv(const RunReport& r, std::ostream& out) {
  out << "epoch,policy,surrogate_d,surrogate_c,entropy_d,entropy_c,kl_d,kl_c,critic_loss,mean_episode_reward\n";
  for (const EpochRecord& e : r.epochs) {
    for (std::size_t i = 0; i < e.policy.size(); ++i) {
      const UpdateStats& s = e.policy[i];
      out << e.epoch << ',' << i << ',' << fmt(s.surrogate_d) << ',' << fmt(s.surrogate_c) << ','
          << fmt(s.entropy_d) << ',' << fmt(s.entropy_c) << ',' << fmt(s.kl_d) << ',' << fmt(s.kl_c) << ','
          << fmt(s.critic_loss) << ',' << fmt(s.mean_episode_reward) << '\n';
    }
  }
}

namespace {

constexpr std::uint64_t kEvalSeedSalt = 0x5eed5eed5eedULL;

std::vector<Label> labels_of(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<Label> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data.graphs[i].label());
  return out;
}

void check_split(const Dataset& data, const Split& split) {
  if (split.train.empty()) throw DataError("training split is empty");
  if (split.valid.empty()) throw DataError("validation split is empty");
  for (const auto* part : {&split.train, &split.valid, &split.test}) {
    for (std::size_t i : *part) {
      if (i >= data.size()) {
        throw DataError("split index " + std::to_string(i) + " out of range for " + std::to_string(data.size()) +
                        " graphs");
      }
    }
  }
}

void write_state(const std::filesystem::path& dir, std::size_t epoch, const std::string& rng_state) {
  Checkpoint c;
  c.kind = "trainer-state-v1";
  c.meta["epoch"] = epoch;
  c.meta["rng"] = rng_state;
  c.save(dir / "state.json");
}

/// Tracks best-validation selection shared by every method.
struct Selection {
  std::size_t min_epoch;
  std::size_t patience;
  std::size_t best_epoch = 0;
  double best_valid = -std::numeric_limits<double>::infinity();

  /// True when `epoch` becomes the new best.
  bool offer(std::size_t epoch, double valid) {
    if (epoch < min_epoch || std::isnan(valid)) return false;
    if (best_epoch != 0 && !(valid > best_valid)) return false;
    best_epoch = epoch;
    best_valid = valid;
    return true;
  }
  bool should_stop(std::size_t epoch) const {
    return patience > 0 && best_epoch != 0 && epoch - best_epoch >= patience;
  }
};

template <typename Fn>
auto with_context(const std::string& where, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    throw NumericalError(where + ": " + e.what());
  }
}

void finish_report(RunResult& res, const Selection& sel, const EvalResult& test_eval, std::size_t max_nodes) {
  RunReport& r = res.report;
  r.best_epoch = sel.best_epoch;
  r.best_valid_metric = sel.best_valid;
  r.test_at_best = test_eval.scores;
  r.test_impact = test_eval.impact;
  r.test_max_abs_prompt = test_eval.max_abs_prompt;
  r.test_max_nodes = max_nodes;
  res.test_eval = test_eval;
}

std::string metric_name_for(const Dataset& data) { return data.multi_label() ? "roc_auc" : "accuracy"; }

}  // namespace

RunResult train_relief(const Dataset& data, const Split& split, const GinModel& gnn, const ReliefConfig& cfg,
                       const TrainOptions& opts) {
  cfg.validate();
  if (!gnn.frozen()) throw ConfigError("train_relief requires a frozen GNN");
  check_split(data, split);
  if (gnn.input_dim() != data.feature_dim()) throw ShapeError("GNN input width does not match dataset features");
  const ActionOverrides ov = opts.overrides;

  const std::size_t N = data.max_nodes();
  const std::size_t d = gnn.hidden_dim();
  const LossKind kind = loss_kind_for(data);
  Rng root(cfg.seed);
  Rng init = root.fork();

  RunResult res;
  res.report.method = ov.random_discrete ? "random_d" : ov.random_continuous ? "random_c" : "relief";
  res.report.metric_name = metric_name_for(data);
  Mlp head = make_projection_head(d, data.output_dim(), cfg.head_layers, cfg.head_hidden, init);
  AgentDims dims{N, d, data.feature_dim(), cfg.policy_hidden, cfg.num_policies, cfg.z_max};
  HppoAgent agent(dims, cfg.ppo, init);
  Adam head_opt(head.parameters(), Adam::Options{cfg.head_lr});

  Rng ctx_rng = root.fork();
  const auto contexts = bootstrap_contexts(split.train, cfg.num_policies, cfg.overlap, ctx_rng);
  const std::vector<Label> train_labels = labels_of(data, split.train);
  const EvalOptions eval_opts{cfg.z_max, N, ov, cfg.seed ^ kEvalSeedSalt};

  Selection sel{cfg.effective_min_epoch(), cfg.patience};
  EvalResult best_test;
  if (!opts.checkpoint_dir.empty()) std::filesystem::create_directories(opts.checkpoint_dir);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::string tag = "epoch " + std::to_string(epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    Rng erng = root.fork();

    // Policy phase: the head is read-only here.
    std::vector<Episode> all_episodes;
    for (std::size_t i = 0; i < cfg.num_policies; ++i) {
      std::vector<std::size_t> graphs;
      for (std::size_t rep = 0; rep < cfg.episodes_per_graph; ++rep) {
        graphs.insert(graphs.end(), contexts[i].begin(), contexts[i].end());
      }
      std::vector<Rng> rngs;
      rngs.reserve(graphs.size());
      for (std::size_t k = 0; k < graphs.size(); ++k) rngs.push_back(erng.fork());
      std::vector<Episode> episodes(graphs.size());
      const AgentPolicy policy(agent, i, ov);
      with_context(tag + ", rollouts of policy " + std::to_string(i), [&] {
        kernels::parallel_for(graphs.size(), [&](std::size_t k) {
          const EpisodeContext ctx(data.graphs[graphs[k]], gnn, head, kind, cfg.z_max, N);
          episodes[k] = rollout_episode(ctx, policy, RolloutMode::stochastic, rngs[k]);
        });
      });
      UpdateStats stats = with_context(tag + ", update of policy " + std::to_string(i), [&] {
        const PreparedBuffer buf = agent.prepare(episodes);
        UpdateStats s = agent.update_actors(i, buf, cfg.alpha_d, cfg.alpha_c, erng, ov);
        if (cfg.ppo.critic_schedule == CriticSchedule::per_pair) {
          s.critic_loss = cfg.ppo.critic_coef * agent.update_critic(buf, erng);
        }
        return s;
      });
      double reward_sum = 0.0;
      for (const Episode& ep : episodes) reward_sum += ep.total_reward();
      stats.mean_episode_reward = episodes.empty() ? 0.0 : reward_sum / static_cast<double>(episodes.size());
      rec.policy.push_back(stats);
      if (cfg.ppo.critic_schedule == CriticSchedule::per_epoch) {
        for (Episode& ep : episodes) all_episodes.push_back(std::move(ep));
      }
    }
    if (cfg.ppo.critic_schedule == CriticSchedule::per_epoch) {
      const double loss = with_context(tag + ", critic update", [&] {
        const PreparedBuffer buf = agent.prepare(all_episodes);
        return cfg.ppo.critic_coef * agent.update_critic(buf, erng);
      });
      for (UpdateStats& s : rec.policy) s.critic_loss = loss;
    }

    // Head phase: actors and critic are read-only here.
    const std::uint64_t head_seed = erng.next_u64();
    const EvalResult prompted_train = with_context(tag + ", head phase", [&] {
      return evaluate(data, split.train, gnn, head, &agent, EvalOptions{cfg.z_max, N, ov, head_seed});
    });
    std::vector<Matrix> embeddings(split.train.size());
    kernels::parallel_for(split.train.size(), [&](std::size_t k) {
      embeddings[k] = prompted_graph_embedding(gnn, data.graphs[split.train[k]], prompted_train.prompts[k]);
    });
    const std::vector<double> head_losses = with_context(tag + ", head phase", [&] {
      return train_projection_head(head, embeddings, train_labels, kind, cfg.q, head_opt);
    });
    rec.head_loss = head_losses.empty() ? 0.0 : head_losses.back();

    with_context(tag + ", evaluation", [&] {
      rec.train = evaluate(data, split.train, gnn, head, &agent, eval_opts).scores;
      rec.valid = evaluate(data, split.valid, gnn, head, &agent, eval_opts).scores;
      EvalResult test = evaluate(data, split.test, gnn, head, &agent, eval_opts);
      rec.test = test.scores;
      if (sel.offer(epoch, rec.valid.metric)) {
        best_test = std::move(test);
        res.agent = agent;
        res.head = head;
        res.rng_state = root.serialize();
        if (!opts.checkpoint_dir.empty()) {
          agent.to_checkpoint().save(opts.checkpoint_dir / "policy.json");
          head_to_checkpoint(head).save(opts.checkpoint_dir / "head.json");
          write_state(opts.checkpoint_dir, epoch, res.rng_state);
        }
      }
    });
    res.report.epochs.push_back(std::move(rec));
    if (sel.should_stop(epoch)) break;
  }

  if (sel.best_epoch == 0) throw NumericalError("no epoch produced a usable validation metric");
  finish_report(res, sel, best_test, N);
  return res;
}

namespace {

RunResult run_linear_probe(const Dataset& data, const Split& split, const GinModel& gnn, const ReliefConfig& cfg,
                           const TrainOptions& opts) {
  check_split(data, split);
  Rng root(cfg.seed);
  Rng init = root.fork();
  const std::size_t N = data.max_nodes();
  const LossKind kind = loss_kind_for(data);
  Mlp head = make_projection_head(gnn.hidden_dim(), data.output_dim(), cfg.head_layers, cfg.head_hidden, init);
  Adam opt(head.parameters(), Adam::Options{cfg.head_lr});

  std::vector<Matrix> embeddings(split.train.size());
  kernels::parallel_for(split.train.size(), [&](std::size_t k) {
    embeddings[k] = mean_pool(gnn.forward(data.graphs[split.train[k]]));
  });
  const std::vector<Label> labels = labels_of(data, split.train);
  const EvalOptions eval_opts{cfg.z_max, N, {}, cfg.seed ^ kEvalSeedSalt};

  RunResult res;
  res.report.method = "linear_probe";
  res.report.metric_name = metric_name_for(data);
  Selection sel{cfg.effective_min_epoch(), cfg.patience};
  EvalResult best_test;
  if (!opts.checkpoint_dir.empty()) std::filesystem::create_directories(opts.checkpoint_dir);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const auto losses = train_projection_head(head, embeddings, labels, kind, cfg.q, opt);
    rec.head_loss = losses.empty() ? 0.0 : losses.back();
    rec.train = evaluate(data, split.train, gnn, head, nullptr, eval_opts).scores;
    rec.valid = evaluate(data, split.valid, gnn, head, nullptr, eval_opts).scores;
    EvalResult test = evaluate(data, split.test, gnn, head, nullptr, eval_opts);
    rec.test = test.scores;
    if (sel.offer(epoch, rec.valid.metric)) {
      best_test = std::move(test);
      res.head = head;
      res.rng_state = root.serialize();
      if (!opts.checkpoint_dir.empty()) {
        head_to_checkpoint(head).save(opts.checkpoint_dir / "head.json");
        write_state(opts.checkpoint_dir, epoch, res.rng_state);
      }
    }
    res.report.epochs.push_back(std::move(rec));
    if (sel.should_stop(epoch)) break;
  }
  if (sel.best_epoch == 0) throw NumericalError("no epoch produced a usable validation metric");
  finish_report(res, sel, best_test, N);
  return res;
}

RunResult run_fine_tune(const Dataset& data, const Split& split, const GinModel& gnn, const ReliefConfig& cfg,
                        const TrainOptions& opts) {
  check_split(data, split);
  Rng root(cfg.seed);
  Rng init = root.fork();
  const std::size_t N = data.max_nodes();
  const LossKind kind = loss_kind_for(data);
  // A fresh copy from the checkpoint is unfrozen; the caller's model stays intact.
  GinModel tuned = GinModel::from_checkpoint(gnn.to_checkpoint());
  Mlp head = make_projection_head(gnn.hidden_dim(), data.output_dim(), cfg.head_layers, cfg.head_hidden, init);
  Adam head_opt(head.parameters(), Adam::Options{cfg.head_lr});
  Adam gnn_opt(tuned.trainable_parameters(), Adam::Options{cfg.head_lr});
  const EvalOptions eval_opts{cfg.z_max, N, {}, cfg.seed ^ kEvalSeedSalt};
  const std::size_t m = split.train.size();
  const double inv = 1.0 / static_cast<double>(m);

  RunResult res;
  res.report.method = "fine_tune";
  res.report.metric_name = metric_name_for(data);
  Selection sel{cfg.effective_min_epoch(), cfg.patience};
  EvalResult best_test;
  if (!opts.checkpoint_dir.empty()) std::filesystem::create_directories(opts.checkpoint_dir);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t step = 0; step < cfg.q; ++step) {
      std::vector<double> losses(m);
      std::vector<std::vector<Matrix>> hg(m), gg(m);
      kernels::parallel_for(m, [&](std::size_t k) {
        const Graph& g = data.graphs[split.train[k]];
        GinModel::Cache gc;
        const Matrix emb = tuned.forward(g, g.features(), gc);
        Mlp::Cache hc;
        const Matrix logits = head.forward(mean_pool(emb), hc);
        LossValue lv = task_loss(kind, logits, g.label());
        losses[k] = lv.loss;
        lv.d_logits *= inv;
        const Matrix d_pooled = head.backward(hc, lv.d_logits, hg[k]);
        tuned.backward(g, gc, mean_pool_backward(d_pooled, g.num_nodes()), gg[k]);
      });
      std::vector<Matrix> head_grads = head.zero_grads();
      std::vector<Matrix> gnn_grads = tuned.zero_grads();
      double total = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        total += losses[k];
        accumulate(head_grads, hg[k]);
        accumulate(gnn_grads, gg[k]);
      }
      if (!std::isfinite(total)) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", fine-tuning: non-finite loss");
      }
      rec.head_loss = total * inv;
      head_opt.step(head.parameters(), head_grads);
      gnn_opt.step(tuned.trainable_parameters(), gnn_grads);
    }
    rec.train = evaluate(data, split.train, tuned, head, nullptr, eval_opts).scores;
    rec.valid = evaluate(data, split.valid, tuned, head, nullptr, eval_opts).scores;
    EvalResult test = evaluate(data, split.test, tuned, head, nullptr, eval_opts);
    rec.test = test.scores;
    if (sel.offer(epoch, rec.valid.metric)) {
      best_test = std::move(test);
      res.head = head;
      res.tuned_gnn = tuned;
      res.rng_state = root.serialize();
      if (!opts.checkpoint_dir.empty()) {
        head_to_checkpoint(head).save(opts.checkpoint_dir / "head.json");
        tuned.to_checkpoint().save(opts.checkpoint_dir / "gnn.json");
        write_state(opts.checkpoint_dir, epoch, res.rng_state);
      }
    }
    res.report.epochs.push_back(std::move(rec));
    if (sel.should_stop(epoch)) break;
  }
  if (sel.best_epoch == 0) throw NumericalError("no epoch produced a usable validation metric");
  finish_report(res, sel, best_test, N);
  return res;
}

}  // namespace

RunResult run_method(Method m, const Dataset& data, const Split& split, const GinModel& gnn,
                     const ReliefConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  switch (m) {
    case Method::relief: {
      TrainOptions o = opts;
      o.overrides = {};
      return train_relief(data, split, gnn, cfg, o);
    }
    case Method::random_d: {
      TrainOptions o = opts;
      o.overrides = {true, false};
      return train_relief(data, split, gnn, cfg, o);
    }
    case Method::random_c: {
      TrainOptions o = opts;
      o.overrides = {false, true};
      return train_relief(data, split, gnn, cfg, o);
    }
    case Method::linear_probe: return run_linear_probe(data, split, gnn, cfg, opts);
    case Method::fine_tune: return run_fine_tune(data, split, gnn, cfg, opts);
  }
  throw ConfigError("unknown method");
}

}  // namespace relief
