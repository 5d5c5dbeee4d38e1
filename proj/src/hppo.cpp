#include "relief/hppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace relief {

void PpoConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must lie in [0, 1]");
  if (!(clip > 0.0)) throw ConfigError("clip must be positive");
  if (!(entropy_coef >= 0.0)) throw ConfigError("entropy_coef must be non-negative");
  if (!(critic_coef > 0.0)) throw ConfigError("critic_coef must be positive");
  if (ppo_epochs == 0) throw ConfigError("ppo_epochs must be at least 1");
  if (minibatch_size == 0) throw ConfigError("minibatch_size must be at least 1");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma,
                      double lambda) {
  const std::size_t T = rewards.size();
  if (values.size() != T + 1) {
    throw ShapeError("compute_gae: expected " + std::to_string(T + 1) + " values, got " +
                     std::to_string(values.size()));
  }
  GaeResult out;
  out.advantages.assign(T, 0.0);
  out.returns.assign(T, 0.0);
  double running = 0.0;
  for (std::size_t k = T; k-- > 0;) {
    const double delta = rewards[k] + gamma * values[k + 1] - values[k];
    running = delta + gamma * lambda * running;
    out.advantages[k] = running;
    out.returns[k] = running + values[k];
  }
  return out;
}

SurrogateTerm clipped_surrogate(double ratio, double advantage, double clip) {
  const double clipped_ratio = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  const double unclipped = ratio * advantage;
  const double clipped = clipped_ratio * advantage;
  SurrogateTerm s;
  if (unclipped <= clipped) {
    s.value = unclipped;
    s.d_ratio = advantage;
  } else {
    s.value = clipped;
    s.d_ratio = (ratio > 1.0 - clip && ratio < 1.0 + clip) ? advantage : 0.0;
  }
  return s;
}

double categorical_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("categorical_kl: length mismatch");
  double kl = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) kl += p[j] * (std::log(p[j]) - std::log(q[j]));
  }
  // Rounding can push a near-zero divergence slightly negative.
  return std::max(kl, 0.0);
}

double categorical_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

std::vector<double> joint_discrete(const std::vector<std::vector<double>>& probs) {
  if (probs.empty()) throw std::invalid_argument("joint_discrete: no sub-policies");
  // A lone sub-policy is already normalised; skip the division so it passes through unchanged.
  if (probs.size() == 1) return probs.front();
  std::vector<double> out = probs.front();
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i].size() != out.size()) throw ShapeError("joint_discrete: distribution lengths differ");
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::max(out[j], probs[i][j]);
  }
  const double total = std::accumulate(out.begin(), out.end(), 0.0);
  if (!(total > 0.0)) throw NumericalError("joint_discrete: elementwise max is all zero");
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> joint_continuous(const std::vector<std::vector<double>>& means) {
  if (means.empty()) throw std::invalid_argument("joint_continuous: no sub-policies");
  std::vector<double> out(means.front().size(), 0.0);
  for (const auto& m : means) {
    if (m.size() != out.size()) throw ShapeError("joint_continuous: mean lengths differ");
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += m[j];
  }
  const double l = static_cast<double>(means.size());
  for (double& v : out) v /= l;
  return out;
}

DiscreteTerms discrete_sample_objective(std::span<const double> logits, const std::vector<bool>& valid,
                                        std::size_t action, double old_log_prob, double advantage,
                                        std::span<const double> joint, double clip, double entropy_coef,
                                        double alpha_d, std::vector<double>* d_logits) {
  const std::size_t n = logits.size();
  if (joint.size() != n) throw ShapeError("discrete objective: joint length mismatch");
  if (action >= n || !valid[action]) throw std::out_of_range("discrete objective: action is not a valid node");
  const std::vector<double> p = masked_softmax(logits, valid);
  DiscreteTerms t;
  const double log_p = std::log(p[action]);
  t.ratio = std::exp(log_p - old_log_prob);
  if (!std::isfinite(t.ratio)) {
    throw NumericalError("non-finite discrete probability ratio (log p = " + std::to_string(log_p) +
                         ", old = " + std::to_string(old_log_prob) + ")");
  }
  const SurrogateTerm s = clipped_surrogate(t.ratio, advantage, clip);
  t.surrogate = s.value;
  t.entropy = categorical_entropy(p);
  t.kl = categorical_kl(p, joint);
  t.objective = t.surrogate + entropy_coef * t.entropy - alpha_d * t.kl;
  if (d_logits != nullptr) {
    d_logits->assign(n, 0.0);
    const double ds = s.d_ratio * t.ratio;
    for (std::size_t j = 0; j < n; ++j) {
      if (!valid[j] || p[j] == 0.0) continue;
      const double log_pj = std::log(p[j]);
      double g = ds * ((j == action ? 1.0 : 0.0) - p[j]);
      g += entropy_coef * (-p[j] * (log_pj + t.entropy));
      g -= alpha_d * p[j] * (log_pj - std::log(joint[j]) - t.kl);
      (*d_logits)[j] = g;
    }
  }
  return t;
}

ContinuousTerms continuous_sample_objective(std::span<const double> mu, std::span<const double> z_raw,
                                            std::span<const double> sigma, double old_log_prob,
                                            double advantage, std::span<const double> mu_joint,
                                            double clip, double entropy_coef, double alpha_c,
                                            std::vector<double>* d_mu) {
  const std::size_t D = mu.size();
  if (z_raw.size() != D || sigma.size() != D || mu_joint.size() != D) {
    throw ShapeError("continuous objective: dimension mismatch");
  }
  const DiagGaussian dist(std::vector<double>(mu.begin(), mu.end()),
                          std::vector<double>(sigma.begin(), sigma.end()));
  ContinuousTerms t;
  const double log_p = dist.log_prob(z_raw);
  t.ratio = std::exp(log_p - old_log_prob);
  if (!std::isfinite(t.ratio)) {
    throw NumericalError("non-finite continuous probability ratio (log p = " + std::to_string(log_p) +
                         ", old = " + std::to_string(old_log_prob) + ")");
  }
  const SurrogateTerm s = clipped_surrogate(t.ratio, advantage, clip);
  t.surrogate = s.value;
  t.entropy = dist.entropy();
  t.kl = gaussian_kl_shared_sigma(mu, mu_joint, sigma);
  t.objective = t.surrogate + entropy_coef * t.entropy - alpha_c * t.kl;
  if (d_mu != nullptr) {
    d_mu->assign(D, 0.0);
    const double ds = s.d_ratio * t.ratio;
    for (std::size_t j = 0; j < D; ++j) {
      const double var = sigma[j] * sigma[j];
      (*d_mu)[j] = ds * (z_raw[j] - mu[j]) / var - alpha_c * (mu[j] - mu_joint[j]) / var;
    }
  }
  return t;
}

std::vector<std::vector<std::size_t>> bootstrap_contexts(std::span<const std::size_t> train, std::size_t l,
                                                         double overlap, Rng& rng) {
  const std::size_t m = train.size();
  if (l == 0) throw ConfigError("number of sub-policies must be at least 1");
  if (m < l) {
    throw ConfigError("cannot split " + std::to_string(m) + " training graphs into " + std::to_string(l) +
                      " contexts");
  }
  if (!(overlap >= 0.0 && overlap <= 1.0)) throw ConfigError("overlap ratio must lie in [0, 1]");

  std::vector<std::size_t> order(train.begin(), train.end());
  rng.shuffle(order);
  const std::size_t base = m / l;
  std::vector<std::vector<std::size_t>> contexts(l);
  for (std::size_t i = 0; i < l; ++i) {
    contexts[i].assign(order.begin() + static_cast<std::ptrdiff_t>(i * base),
                       order.begin() + static_cast<std::ptrdiff_t>((i + 1) * base));
  }
  const std::size_t extra = static_cast<std::size_t>(std::floor(overlap * static_cast<double>(base) + 1e-9));
  std::vector<std::vector<std::size_t>> extras(l);
  if (l > 1 && extra > 0) {
    for (std::size_t i = 0; i < l; ++i) {
      std::vector<std::size_t> pool;
      pool.reserve((l - 1) * base);
      for (std::size_t j = 0; j < l; ++j) {
        if (j != i) pool.insert(pool.end(), contexts[j].begin(), contexts[j].end());
      }
      for (std::size_t k = 0; k < extra; ++k) {
        const std::size_t pick = k + rng.index(pool.size() - k);
        std::swap(pool[k], pool[pick]);
        extras[i].push_back(pool[k]);
      }
    }
  }
  for (std::size_t r = l * base; r < m; ++r) contexts[(r - l * base) % l].push_back(order[r]);
  for (std::size_t i = 0; i < l; ++i) {
    contexts[i].insert(contexts[i].end(), extras[i].begin(), extras[i].end());
    std::sort(contexts[i].begin(), contexts[i].end());
  }
  return contexts;
}

Matrix actor_input(const EnvState& s) {
  const std::size_t N = s.embeddings.rows();
  const std::size_t d = s.embeddings.cols();
  Matrix mean(1, d);
  for (std::size_t v = 0; v < s.num_nodes; ++v) {
    for (std::size_t k = 0; k < d; ++k) mean(0, k) += s.embeddings(v, k);
  }
  if (s.num_nodes > 0) mean *= 1.0 / static_cast<double>(s.num_nodes);
  Matrix x(N, 2 * d);
  for (std::size_t v = 0; v < s.num_nodes; ++v) {
    for (std::size_t k = 0; k < d; ++k) {
      x(v, k) = s.embeddings(v, k);
      x(v, d + k) = mean(0, k);
    }
  }
  return x;
}

namespace {

Matrix actor_input_row(const EnvState& s, std::size_t v) {
  if (v >= s.num_nodes) throw std::out_of_range("actor input requested for a padded node");
  const Matrix all = actor_input(s);
  return gather_rows(all, std::vector<std::size_t>{v});
}

std::size_t argmax_valid(const std::vector<double>& p, const std::vector<bool>& valid) {
  std::size_t best = p.size();
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (valid[j] && (best == p.size() || p[j] > p[best])) best = j;
  }
  if (best == p.size()) throw std::invalid_argument("state has no valid node");
  return best;
}

std::size_t sample_categorical(const std::vector<double>& p, const std::vector<bool>& valid, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last = p.size();
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (!valid[j] || p[j] <= 0.0) continue;
    cum += p[j];
    last = j;
    if (u < cum) return j;
  }
  if (last == p.size()) throw std::invalid_argument("state has no valid node");
  return last;
}

std::vector<double> to_vector(const Matrix& m) { return {m.values().begin(), m.values().end()}; }

}  // namespace

DiscreteActor::DiscreteActor(std::size_t embed_dim, std::size_t hidden, Rng& rng, double output_scale)
    : net_({2 * embed_dim, hidden, 1}, rng, output_scale) {}

std::vector<double> DiscreteActor::logits(const EnvState& s) const {
  return to_vector(net_.forward(actor_input(s)));
}

std::vector<double> DiscreteActor::probs(const EnvState& s) const { return masked_softmax(logits(s), s.valid); }

ContinuousActor::ContinuousActor(std::size_t embed_dim, std::size_t feature_dim, std::size_t hidden, Rng& rng,
                                 double output_scale)
    : net_({2 * embed_dim, hidden, feature_dim}, rng, output_scale) {}

std::vector<double> ContinuousActor::mean(const EnvState& s, std::size_t action) const {
  return to_vector(net_.forward(actor_input_row(s, action)));
}

Critic::Critic(std::size_t max_nodes, std::size_t embed_dim, std::size_t hidden, Rng& rng)
    : net_({max_nodes * embed_dim, hidden, 1}, rng) {}

double Critic::output(const EnvState& s) const {
  Matrix flat(1, s.embeddings.size());
  std::copy(s.embeddings.values().begin(), s.embeddings.values().end(), flat.data());
  return net_.forward(flat)(0, 0);
}

HppoAgent::HppoAgent(const AgentDims& dims, const PpoConfig& cfg, Rng& rng) : dims_(dims), cfg_(cfg) {
  cfg_.validate();
  if (dims.num_policies == 0) throw ConfigError("number of sub-policies must be at least 1");
  if (dims.max_nodes == 0 || dims.embed_dim == 0 || dims.feature_dim == 0 || dims.hidden == 0) {
    throw ConfigError("agent dimensions must be positive");
  }
  for (std::size_t i = 0; i < dims.num_policies; ++i) {
    discrete_.emplace_back(dims.embed_dim, dims.hidden, rng);
    continuous_.emplace_back(dims.embed_dim, dims.feature_dim, dims.hidden, rng);
  }
  critic_ = Critic(dims.max_nodes, dims.embed_dim, dims.hidden, rng);
  init_optimizers();
}

void HppoAgent::init_optimizers() {
  if (dims_.z_max < 0.0) throw ConfigError("z_max must be non-negative");
  // A zero clamp still needs a proper density for the log-probs.
  sigma_.assign(dims_.feature_dim, std::max(dims_.z_max / 2.0, 1e-6));
  const Adam::Options actor{cfg_.actor_lr, 0.9, 0.999, 1e-8, cfg_.weight_decay};
  const Adam::Options critic{cfg_.critic_lr, 0.9, 0.999, 1e-8, cfg_.weight_decay};
  opt_discrete_.clear();
  opt_continuous_.clear();
  for (std::size_t i = 0; i < discrete_.size(); ++i) {
    opt_discrete_.emplace_back(discrete_[i].net().parameters(), actor);
    opt_continuous_.emplace_back(continuous_[i].net().parameters(), actor);
  }
  opt_critic_ = Adam(critic_.net().parameters(), critic);
}

double HppoAgent::value(const EnvState& s) const { return critic_.output(s) * value_std_ + value_mean_; }

std::vector<double> HppoAgent::joint_probs(const EnvState& s) const {
  std::vector<std::vector<double>> probs;
  probs.reserve(discrete_.size());
  for (const auto& a : discrete_) probs.push_back(a.probs(s));
  return joint_discrete(probs);
}

std::vector<double> HppoAgent::joint_mean(const EnvState& s, std::size_t action) const {
  std::vector<std::vector<double>> means;
  means.reserve(continuous_.size());
  for (const auto& a : continuous_) means.push_back(a.mean(s, action));
  return joint_continuous(means);
}

namespace {

template <typename ProbFn, typename MeanFn>
PolicyDecision decide_with(const EnvState& s, RolloutMode mode, Rng& rng, ActionOverrides ov,
                           const std::vector<double>& sigma, ProbFn&& probs_of, MeanFn&& mean_of) {
  PolicyDecision d;
  if (ov.random_discrete) {
    d.action = rng.index(s.num_nodes);
    d.log_prob_a = -std::log(static_cast<double>(s.num_nodes));
  } else {
    const std::vector<double> p = probs_of();
    d.action = mode == RolloutMode::deterministic ? argmax_valid(p, s.valid) : sample_categorical(p, s.valid, rng);
    d.log_prob_a = std::log(p[d.action]);
  }
  if (ov.random_continuous) {
    const DiagGaussian noise(std::vector<double>(sigma.size(), 0.0), sigma);
    d.z_raw = noise.sample(rng);
    d.log_prob_z = noise.log_prob(d.z_raw);
  } else {
    const DiagGaussian dist(mean_of(d.action), sigma);
    d.z_raw = mode == RolloutMode::deterministic ? dist.mean() : dist.sample(rng);
    d.log_prob_z = dist.log_prob(d.z_raw);
  }
  return d;
}

}  // namespace

PolicyDecision HppoAgent::decide_sub(std::size_t i, const EnvState& s, RolloutMode mode, Rng& rng,
                                     ActionOverrides ov) const {
  if (i >= discrete_.size()) throw std::out_of_range("sub-policy index out of range");
  PolicyDecision d = decide_with(
      s, mode, rng, ov, sigma_, [&] { return discrete_[i].probs(s); },
      [&](std::size_t a) { return continuous_[i].mean(s, a); });
  d.value = value(s);
  return d;
}

PolicyDecision HppoAgent::decide_joint(const EnvState& s, RolloutMode mode, Rng& rng, ActionOverrides ov) const {
  PolicyDecision d = decide_with(
      s, mode, rng, ov, sigma_, [&] { return joint_probs(s); }, [&](std::size_t a) { return joint_mean(s, a); });
  d.value = value(s);
  return d;
}

PreparedBuffer HppoAgent::prepare(const std::vector<Episode>& episodes) const {
  PreparedBuffer buf;
  std::vector<double> returns;
  for (const Episode& ep : episodes) {
    std::vector<double> rewards;
    std::vector<double> values;
    for (const Transition& t : ep.transitions) {
      rewards.push_back(t.reward);
      values.push_back(t.value);
    }
    values.push_back(0.0);
    const GaeResult g = compute_gae(rewards, values, cfg_.gamma, cfg_.gae_lambda);
    for (std::size_t k = 0; k < ep.transitions.size(); ++k) {
      buf.samples.push_back({&ep.transitions[k], g.advantages[k], g.returns[k]});
      returns.push_back(g.returns[k]);
    }
  }
  if (buf.samples.empty()) return buf;

  const auto standardize = [](std::vector<double>& v, double& mean_out, double& std_out) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / n);
    const double scale = sd > 1e-12 ? sd : 1.0;
    for (double& x : v) x = (x - mean) / scale;
    mean_out = mean;
    std_out = scale;
  };

  if (cfg_.normalize_returns) {
    standardize(returns, buf.return_mean, buf.return_std);
    for (std::size_t k = 0; k < returns.size(); ++k) buf.samples[k].target = returns[k];
  }
  if (cfg_.normalize_advantages) {
    std::vector<double> adv;
    adv.reserve(buf.samples.size());
    for (const auto& s : buf.samples) adv.push_back(s.advantage);
    double m = 0.0;
    double sd = 1.0;
    standardize(adv, m, sd);
    for (std::size_t k = 0; k < adv.size(); ++k) buf.samples[k].advantage = adv[k];
  }
  return buf;
}

namespace {

/// Stacks the listed row blocks into one matrix so a minibatch runs through
/// a network in a single pass.
Matrix stack_rows(const std::vector<const Matrix*>& blocks) {
  std::size_t rows = 0;
  const std::size_t cols = blocks.front()->cols();
  for (const Matrix* m : blocks) rows += m->rows();
  Matrix out(rows, cols);
  double* dst = out.data();
  for (const Matrix* m : blocks) {
    if (m->cols() != cols) throw ShapeError("stack_rows: width mismatch");
    dst = std::copy(m->values().begin(), m->values().end(), dst);
  }
  return out;
}

Matrix flatten(const Matrix& m) {
  Matrix flat(1, m.size());
  std::copy(m.values().begin(), m.values().end(), flat.data());
  return flat;
}

}  // namespace

UpdateStats HppoAgent::update_actors(std::size_t i, const PreparedBuffer& buf, double alpha_d, double alpha_c,
                                     Rng& rng, ActionOverrides ov) {
  if (i >= discrete_.size()) throw std::out_of_range("sub-policy index out of range");
  UpdateStats stats;
  const std::size_t B = buf.samples.size();
  if (B == 0) return stats;
  const std::size_t l = discrete_.size();
  const std::size_t N = dims_.max_nodes;
  const std::size_t D = dims_.feature_dim;

  // Other pairs are frozen while pair i updates, so their contributions to
  // the joint policies can be computed once. Inputs depend only on the state.
  std::vector<Matrix> node_inputs(B);
  std::vector<Matrix> action_inputs(B);
  std::vector<std::vector<std::vector<double>>> other_probs(B);
  std::vector<std::vector<std::vector<double>>> other_means(B);
  for (std::size_t k = 0; k < B; ++k) {
    const Transition& t = *buf.samples[k].transition;
    if (t.state.max_nodes() != N) throw ShapeError("buffer state does not match the agent's node budget");
    node_inputs[k] = actor_input(t.state);
    action_inputs[k] = gather_rows(node_inputs[k], std::vector<std::size_t>{t.action});
    for (std::size_t j = 0; j < l; ++j) {
      if (j == i) continue;
      if (!ov.random_discrete) other_probs[k].push_back(discrete_[j].probs(t.state));
      if (!ov.random_continuous) other_means[k].push_back(continuous_[j].mean(t.state, t.action));
    }
  }

  std::vector<std::size_t> order(B);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t mb = std::min(cfg_.minibatch_size, B);
  std::vector<Matrix> grads;
  for (std::size_t epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
    rng.shuffle(order);
    UpdateStats sums;
    for (std::size_t start = 0; start < B; start += mb) {
      const std::size_t end = std::min(B, start + mb);
      const std::size_t b = end - start;
      const double inv = 1.0 / static_cast<double>(b);

      if (!ov.random_discrete) {
        Mlp& net = discrete_[i].net();
        std::vector<const Matrix*> blocks;
        for (std::size_t r = start; r < end; ++r) blocks.push_back(&node_inputs[order[r]]);
        Mlp::Cache cache;
        const Matrix logits = net.forward(stack_rows(blocks), cache);
        Matrix dy(b * N, 1);
        for (std::size_t r = 0; r < b; ++r) {
          const std::size_t k = order[start + r];
          const PreparedSample& ps = buf.samples[k];
          const Transition& t = *ps.transition;
          const std::span<const double> lg(logits.data() + r * N, N);
          std::vector<std::vector<double>> all = other_probs[k];
          all.push_back(masked_softmax(lg, t.state.valid));
          const std::vector<double> joint = joint_discrete(all);
          std::vector<double> d_logits;
          const DiscreteTerms terms = discrete_sample_objective(lg, t.state.valid, t.action, t.log_prob_a,
                                                                ps.advantage, joint, cfg_.clip, cfg_.entropy_coef,
                                                                alpha_d, &d_logits);
          for (std::size_t v = 0; v < N; ++v) dy(r * N + v, 0) = -inv * d_logits[v];
          sums.surrogate_d += terms.surrogate;
          sums.entropy_d += terms.entropy;
          sums.kl_d += terms.kl;
        }
        net.backward(cache, dy, grads);
        opt_discrete_[i].step(net.parameters(), grads);
      }

      if (!ov.random_continuous) {
        Mlp& net = continuous_[i].net();
        std::vector<const Matrix*> blocks;
        for (std::size_t r = start; r < end; ++r) blocks.push_back(&action_inputs[order[r]]);
        Mlp::Cache cache;
        const Matrix mus = net.forward(stack_rows(blocks), cache);
        Matrix dy(b, D);
        for (std::size_t r = 0; r < b; ++r) {
          const std::size_t k = order[start + r];
          const PreparedSample& ps = buf.samples[k];
          const Transition& t = *ps.transition;
          const std::vector<double> mu(mus.data() + r * D, mus.data() + (r + 1) * D);
          std::vector<std::vector<double>> all = other_means[k];
          all.push_back(mu);
          const std::vector<double> mu_joint = joint_continuous(all);
          std::vector<double> d_mu;
          const ContinuousTerms terms =
              continuous_sample_objective(mu, t.z_raw, sigma_, t.log_prob_z, ps.advantage, mu_joint, cfg_.clip,
                                          cfg_.entropy_coef, alpha_c, &d_mu);
          for (std::size_t j = 0; j < D; ++j) dy(r, j) = -inv * d_mu[j];
          sums.surrogate_c += terms.surrogate;
          sums.entropy_c += terms.entropy;
          sums.kl_c += terms.kl;
        }
        net.backward(cache, dy, grads);
        opt_continuous_[i].step(net.parameters(), grads);
      }
    }
    if (epoch + 1 == cfg_.ppo_epochs) {
      const double n = static_cast<double>(B);
      stats.surrogate_d = sums.surrogate_d / n;
      stats.entropy_d = sums.entropy_d / n;
      stats.kl_d = sums.kl_d / n;
      stats.surrogate_c = sums.surrogate_c / n;
      stats.entropy_c = sums.entropy_c / n;
      stats.kl_c = sums.kl_c / n;
    }
  }
  return stats;
}

double HppoAgent::update_critic(const PreparedBuffer& buf, Rng& rng) {
  const std::size_t B = buf.samples.size();
  if (B == 0) return 0.0;
  // Targets were built against this buffer's return statistics; switch the
  // de-normalisation to match before fitting.
  if (cfg_.normalize_returns) {
    value_mean_ = buf.return_mean;
    value_std_ = buf.return_std;
  }
  Mlp& net = critic_.net();
  std::vector<Matrix> inputs(B);
  for (std::size_t k = 0; k < B; ++k) inputs[k] = flatten(buf.samples[k].transition->state.embeddings);
  std::vector<std::size_t> order(B);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t mb = std::min(cfg_.minibatch_size, B);
  std::vector<Matrix> grads;
  double last_loss = 0.0;
  for (std::size_t epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < B; start += mb) {
      const std::size_t end = std::min(B, start + mb);
      const std::size_t b = end - start;
      const double inv = 1.0 / static_cast<double>(b);
      std::vector<const Matrix*> blocks;
      for (std::size_t r = start; r < end; ++r) blocks.push_back(&inputs[order[r]]);
      Mlp::Cache cache;
      const Matrix v = net.forward(stack_rows(blocks), cache);
      Matrix dy(b, 1);
      for (std::size_t r = 0; r < b; ++r) {
        const double err = v(r, 0) - buf.samples[order[start + r]].target;
        loss_sum += err * err;
        dy(r, 0) = cfg_.critic_coef * 2.0 * err * inv;
      }
      net.backward(cache, dy, grads);
      opt_critic_.step(net.parameters(), grads);
    }
    last_loss = loss_sum / static_cast<double>(B);
    if (!std::isfinite(last_loss)) throw NumericalError("non-finite critic loss");
  }
  return last_loss;
}

Checkpoint HppoAgent::to_checkpoint() const {
  Checkpoint c;
  c.kind = "hppo-agent-v1";
  c.meta["max_nodes"] = dims_.max_nodes;
  c.meta["embed_dim"] = dims_.embed_dim;
  c.meta["feature_dim"] = dims_.feature_dim;
  c.meta["hidden"] = dims_.hidden;
  c.meta["num_policies"] = dims_.num_policies;
  c.meta["z_max"] = dims_.z_max;
  c.meta["value_mean"] = value_mean_;
  c.meta["value_std"] = value_std_;
  for (std::size_t i = 0; i < discrete_.size(); ++i) {
    c.put_mlp("discrete" + std::to_string(i), discrete_[i].net());
    c.put_mlp("continuous" + std::to_string(i), continuous_[i].net());
  }
  c.put_mlp("critic", critic_.net());
  return c;
}

HppoAgent HppoAgent::from_checkpoint(const Checkpoint& c, const PpoConfig& cfg) {
  if (c.kind != "hppo-agent-v1") throw CheckpointError("expected an hppo-agent-v1 checkpoint, got " + c.kind);
  HppoAgent a;
  a.cfg_ = cfg;
  a.cfg_.validate();
  try {
    a.dims_.max_nodes = c.meta.at("max_nodes").get<std::size_t>();
    a.dims_.embed_dim = c.meta.at("embed_dim").get<std::size_t>();
    a.dims_.feature_dim = c.meta.at("feature_dim").get<std::size_t>();
    a.dims_.hidden = c.meta.at("hidden").get<std::size_t>();
    a.dims_.num_policies = c.meta.at("num_policies").get<std::size_t>();
    a.dims_.z_max = c.meta.at("z_max").get<double>();
    a.value_mean_ = c.meta.at("value_mean").get<double>();
    a.value_std_ = c.meta.at("value_std").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("agent checkpoint metadata: ") + e.what());
  }
  for (std::size_t i = 0; i < a.dims_.num_policies; ++i) {
    a.discrete_.emplace_back(c.get_mlp("discrete" + std::to_string(i)));
    a.continuous_.emplace_back(c.get_mlp("continuous" + std::to_string(i)));
  }
  a.critic_ = Critic(c.get_mlp("critic"));
  a.init_optimizers();
  return a;
}

PolicyDecision AgentPolicy::decide(const EnvState& s, RolloutMode mode, Rng& rng) const {
  if (index_ == kJoint) return agent_->decide_joint(s, mode, rng, ov_);
  return agent_->decide_sub(index_, s, mode, rng, ov_);
}

}  // namespace relief
