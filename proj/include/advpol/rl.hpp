#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "advpol/envs.hpp"
#include "advpol/errors.hpp"
#include "advpol/game.hpp"
#include "advpol/parallel.hpp"
#include "advpol/policy.hpp"
#include "advpol/rng.hpp"
#include "advpol/rollout.hpp"

namespace advpol {

/// PPO hyperparameters. Defaults are the PPO2 values used for the attacks,
/// except total_steps and batch_size which are desk-scale.
struct PpoConfig {
  std::size_t total_steps = 200'000;
  std::size_t batch_size = 4096;
  std::size_t n_envs = 8;
  std::size_t minibatches = 4;
  std::size_t epochs_per_update = 4;
  double learning_rate = 3e-4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_range = 0.2;
  double vf_coef = 0.5;
  double ent_coef = 0.0;
  double max_grad_norm = 0.5;
  /// PPO2 clips the value prediction to the same range as the ratio.
  bool clip_value = true;
  /// Rollout threads; 1 is the bit-reproducible single-threaded mode. Results
  /// do not depend on it either way.
  std::size_t threads = 1;

  void validate() const {
    if (batch_size == 0 || minibatches == 0 || batch_size % minibatches != 0)
      throw ConfigError("ppo.batch_size must be divisible by ppo.minibatches");
    if (n_envs == 0 || batch_size % n_envs != 0) throw ConfigError("ppo.batch_size must be divisible by ppo.n_envs");
    if (epochs_per_update == 0) throw ConfigError("ppo.epochs_per_update must be >= 1");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ConfigError("ppo.learning_rate must be in (0, 1]");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("ppo.gamma must be in (0, 1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("ppo.gae_lambda must be in [0, 1]");
    if (!(clip_range > 0.0 && clip_range <= 1.0)) throw ConfigError("ppo.clip_range must be in (0, 1]");
    if (!(vf_coef >= 0.0) || !(ent_coef >= 0.0)) throw ConfigError("ppo loss coefficients must be >= 0");
    if (!(max_grad_norm > 0.0)) throw ConfigError("ppo.max_grad_norm must be > 0");
  }
};

/// GAE with episode masking. Transitions flagged done bootstrap with 0; the
/// final transition of an unfinished segment bootstraps with batch.last_value.
/// Writes raw (unnormalized) advantages and returns = advantages + values.
inline void compute_gae(TrajectoryBatch& batch, double gamma, double lambda) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  batch.advantages.resize(n);
  double last = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double nonterminal = batch.dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double next_value = t + 1 == n ? batch.last_value : batch.values(t + 1);
    const double delta = batch.rewards(t) + gamma * next_value * nonterminal - batch.values(t);
    last = delta + gamma * lambda * nonterminal * last;
    batch.advantages(t) = last;
  }
  batch.returns = batch.advantages + batch.values;
}

/// Zero mean, unit (population) variance. A constant vector is only centered.
inline Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& adv) {
  if (adv.size() == 0) return adv;
  const double mean = adv.mean();
  Eigen::VectorXd c = adv.array() - mean;
  const double sd = std::sqrt(c.squaredNorm() / static_cast<double>(adv.size()));
  if (sd > 1e-12) c /= sd;
  return c;
}

inline double clipped_surrogate(double ratio, double advantage, double clip_range) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip_range, 1.0 + clip_range) * advantage);
}

struct PpoMinibatch {
  Eigen::MatrixXd obs;
  Eigen::MatrixXd actions;
  Eigen::VectorXd old_log_probs;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
  Eigen::VectorXd old_values;
  std::size_t size() const noexcept { return static_cast<std::size_t>(old_log_probs.size()); }
};

struct LossStats {
  double total = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  /// Mean of the clipped surrogate (equals -policy_loss).
  double surrogate = 0.0;
};

/// PPO loss to minimise:
///   -mean(min(r A, clip(r) A)) - ent_coef * H + vf_coef * 0.5 * mean(value error^2)
/// with gradient with respect to policy.flat() when `grad` is given.
inline double ppo_loss(const GaussianPolicy& policy, const PpoMinibatch& mb, const PpoConfig& cfg,
                       Eigen::VectorXd* grad = nullptr, LossStats* stats = nullptr) {
  const auto m = static_cast<Eigen::Index>(mb.size());
  const double inv_m = 1.0 / static_cast<double>(m);
  const Eigen::VectorXd& log_std = policy.log_std();
  const Eigen::ArrayXd inv_var = (-2.0 * log_std.array()).exp();
  const auto k = log_std.size();

  MlpTape pi_tape, vf_tape;
  const Eigen::MatrixXd mean = policy.net().forward(mb.obs, grad ? &pi_tape : nullptr);
  const Eigen::MatrixXd value = policy.value_net().forward(mb.obs, grad ? &vf_tape : nullptr);
  const Eigen::MatrixXd diff = mb.actions - mean;

  Eigen::VectorXd lp(m);
  for (Eigen::Index i = 0; i < m; ++i)
    lp(i) = -0.5 * (diff.col(i).array().square() * inv_var).sum() - log_std.sum() -
            0.5 * static_cast<double>(k) * kLog2Pi;

  double surrogate = 0.0, clipped = 0.0, kl = 0.0, vloss = 0.0;
  Eigen::VectorXd d_logp(m);  // d(total loss)/d(log_prob_i)
  Eigen::VectorXd d_value(m);
  const double eps = cfg.clip_range;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double log_ratio = lp(i) - mb.old_log_probs(i);
    const double ratio = std::exp(log_ratio);
    const double a = mb.advantages(i);
    const double unclipped = ratio * a;
    const double clip_term = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * a;
    surrogate += std::min(unclipped, clip_term);
    // The unclipped branch carries the gradient when it is the minimum or
    // when the ratio lies inside the clip range (both branches coincide).
    const bool inside = ratio >= 1.0 - eps && ratio <= 1.0 + eps;
    d_logp(i) = (inside || unclipped <= clip_term) ? -inv_m * unclipped : 0.0;
    if (!inside) clipped += 1.0;
    kl += 0.5 * log_ratio * log_ratio;

    const double v = value(0, i);
    const double err = v - mb.returns(i);
    if (cfg.clip_value) {
      const double dv = std::clamp(v - mb.old_values(i), -eps, eps);
      const double err_c = mb.old_values(i) + dv - mb.returns(i);
      if (err * err >= err_c * err_c) {
        vloss += err * err;
        d_value(i) = err;
      } else {
        vloss += err_c * err_c;
        const bool moving = std::abs(v - mb.old_values(i)) < eps;
        d_value(i) = moving ? err_c : 0.0;
      }
    } else {
      vloss += err * err;
      d_value(i) = err;
    }
  }
  const double policy_loss = -surrogate * inv_m;
  const double value_loss = 0.5 * vloss * inv_m;
  const double entropy = gaussian_entropy(log_std);
  const double total = policy_loss - cfg.ent_coef * entropy + cfg.vf_coef * value_loss;

  if (stats) {
    stats->total = total;
    stats->policy_loss = policy_loss;
    stats->value_loss = value_loss;
    stats->entropy = entropy;
    stats->clip_fraction = clipped * inv_m;
    stats->approx_kl = kl * inv_m;
    stats->surrogate = surrogate * inv_m;
  }

  if (grad) {
    // d log_prob / d mean = diff / var ; d log_prob / d log_std = diff^2 / var - 1
    const Eigen::MatrixXd d_mean = (diff.array().colwise() * inv_var).matrix() * d_logp.asDiagonal();
    Eigen::VectorXd d_log_std = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < m; ++i)
      d_log_std += d_logp(i) * ((diff.col(i).array().square() * inv_var) - 1.0).matrix();
    d_log_std.array() -= cfg.ent_coef;
    const Eigen::MatrixXd d_v = (cfg.vf_coef * inv_m * d_value).transpose();

    grad->resize(static_cast<Eigen::Index>(policy.num_params()));
    const auto a = static_cast<Eigen::Index>(policy.net().num_params());
    grad->head(a) = policy.net().backward(pi_tape, d_mean);
    grad->segment(a, k) = d_log_std;
    grad->tail(static_cast<Eigen::Index>(policy.value_net().num_params())) =
        policy.value_net().backward(vf_tape, d_v);
  }
  return total;
}

/// Adam over a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-5)
      : m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))), v_(m_), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, double lr) {
    if (m_.size() != theta.size()) *this = Adam(static_cast<std::size_t>(theta.size()), beta1_, beta2_, eps_);
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const double step = lr * std::sqrt(c2) / c1;
    theta.array() -= step * m_.array() / (v_.array().sqrt() + eps_);
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  Eigen::VectorXd m_, v_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-5;
  std::size_t t_ = 0;
};

/// Fisher-Yates with the portable uniform draw.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
  }
  return idx;
}

struct PpoUpdateResult {
  GaussianPolicy policy;
  LossStats stats;  // averaged over all minibatch steps
};

/// One PPO update: epochs over shuffled minibatches, global grad-norm clipping,
/// Adam. Expects batch.advantages / batch.returns from compute_gae; advantages
/// are normalized over the whole batch here.
inline PpoUpdateResult ppo_update(const GaussianPolicy& policy, const TrajectoryBatch& batch,
                                  const PpoConfig& cfg, Adam& optimizer, Rng& shuffle_rng) {
  const std::size_t n = batch.size();
  if (static_cast<std::size_t>(batch.advantages.size()) != n)
    throw ConfigError("ppo_update needs advantages; call compute_gae first");
  const Eigen::VectorXd adv = normalize_advantages(batch.advantages);
  const std::size_t mb_size = std::max<std::size_t>(1, n / cfg.minibatches);

  PpoUpdateResult out{policy, {}};
  Eigen::VectorXd theta = policy.flat();
  Eigen::VectorXd grad;
  std::size_t count = 0;
  PpoMinibatch mb;
  for (std::size_t epoch = 0; epoch < cfg.epochs_per_update; ++epoch) {
    const auto order = shuffled_indices(n, shuffle_rng);
    for (std::size_t start = 0; start + mb_size <= n; start += mb_size) {
      const auto m = static_cast<Eigen::Index>(mb_size);
      mb.obs.resize(batch.obs.rows(), m);
      mb.actions.resize(batch.actions.rows(), m);
      mb.old_log_probs.resize(m);
      mb.advantages.resize(m);
      mb.returns.resize(m);
      mb.old_values.resize(m);
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto src = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(j)]);
        mb.obs.col(j) = batch.obs.col(src);
        mb.actions.col(j) = batch.actions.col(src);
        mb.old_log_probs(j) = batch.log_probs(src);
        mb.advantages(j) = adv(src);
        mb.returns(j) = batch.returns(src);
        mb.old_values(j) = batch.values(src);
      }
      LossStats st;
      const double loss = ppo_loss(out.policy, mb, cfg, &grad, &st);
      if (!std::isfinite(loss) || !grad.allFinite()) throw NumericalFault("non-finite PPO loss", count);
      const double norm = grad.norm();
      if (norm > cfg.max_grad_norm) grad *= cfg.max_grad_norm / norm;
      optimizer.step(theta, grad, cfg.learning_rate);
      out.policy.set_flat(theta);

      out.stats.total += st.total;
      out.stats.policy_loss += st.policy_loss;
      out.stats.value_loss += st.value_loss;
      out.stats.entropy += st.entropy;
      out.stats.clip_fraction += st.clip_fraction;
      out.stats.approx_kl += st.approx_kl;
      out.stats.surrogate += st.surrogate;
      ++count;
    }
  }
  if (count > 0) {
    const double c = 1.0 / static_cast<double>(count);
    out.stats.total *= c;
    out.stats.policy_loss *= c;
    out.stats.value_loss *= c;
    out.stats.entropy *= c;
    out.stats.clip_fraction *= c;
    out.stats.approx_kl *= c;
    out.stats.surrogate *= c;
  }
  return out;
}

/// Append-only list of frozen snapshots; sampling is uniform.
class OpponentPool {
 public:
  void add(std::size_t step, std::shared_ptr<const FrozenPolicy> p) { snapshots_.push_back({step, std::move(p)}); }
  std::size_t size() const noexcept { return snapshots_.size(); }
  const std::vector<PolicySnapshot>& snapshots() const noexcept { return snapshots_; }

  const PolicySnapshot& sample(Rng& rng) const {
    if (snapshots_.empty()) throw ConfigError("sampling from an empty opponent pool");
    return snapshots_[std::min(snapshots_.size() - 1,
                               static_cast<std::size_t>(uniform01(rng) * static_cast<double>(snapshots_.size())))];
  }

  std::vector<SamplerPtr> samplers() const {
    std::vector<SamplerPtr> out;
    out.reserve(snapshots_.size());
    for (const auto& s : snapshots_) out.push_back(s.policy);
    return out;
  }

 private:
  std::vector<PolicySnapshot> snapshots_;
};

/// One row of the training metrics log.
struct MetricsRow {
  std::size_t step = 0;
  double win_rate = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

/// Collects one PPO batch from n_envs workers over fresh episodes and computes
/// GAE per worker. Episode ids are unique per (iteration, worker).
template <MarkovGame G, Learner P>
TrajectoryBatch collect_batch(const EmbeddedMdp<G>& mdp, const P& learner, const PpoConfig& cfg,
                              std::uint64_t seed, std::uint64_t iteration, double shaping_coef = 0.0) {
  const std::size_t per_env = cfg.batch_size / cfg.n_envs;
  std::vector<TrajectoryBatch> parts(cfg.n_envs);
  parallel_for(cfg.n_envs, cfg.threads, [&](std::size_t w) {
    const std::uint64_t worker_seed = derive_seed(seed, iteration, w);
    const std::uint64_t base = (iteration << 24) | (static_cast<std::uint64_t>(w) << 16);
    RolloutWorker<G> worker(mdp, worker_seed, base);
    parts[w] = worker.collect(learner, per_env, shaping_coef);
    compute_gae(parts[w], cfg.gamma, cfg.gae_lambda);
  });
  return TrajectoryBatch::concat(parts);
}

inline double adversary_win_rate(const TrajectoryBatch& b) {
  if (b.episodes.empty()) return 0.0;
  std::size_t wins = 0;
  for (const auto& e : b.episodes) wins += e.outcome.winner == Winner::Adversary ? 1 : 0;
  return static_cast<double>(wins) / static_cast<double>(b.episodes.size());
}

inline MetricsRow metrics_row(std::size_t step, double win_rate, const LossStats& s) {
  return {step, win_rate, s.policy_loss, s.value_loss, s.entropy, s.clip_fraction, s.approx_kl};
}

struct SelfPlayConfig {
  PpoConfig ppo;
  std::size_t pool_interval = 50'000;
  std::size_t checkpoint_interval = 50'000;
  /// Dense shaping weight at step 0, annealed linearly to zero.
  double shaping_coef = 1.0;
  /// Fraction of training over which the shaping anneals away.
  double shaping_fraction = 0.1;
};

struct SelfPlayResult {
  std::array<std::vector<PolicySnapshot>, 2> checkpoints;
  std::array<OpponentPool, 2> pools;
  std::array<std::vector<MetricsRow>, 2> metrics;
};

inline PolicyMeta make_meta(const EnvConfig& env, std::size_t step, const std::string& role, int side) {
  return {std::string(to_string(env.name)), env.pose_dim, step, role, side};
}

/// Trains both players by self-play. Each learner plays episodes against an
/// opponent drawn uniformly from the other side's pool plus the other side's
/// current policy. Pools start with the initial policies and get a snapshot of
/// each side every pool_interval steps; steps count transitions per player.
/// `progress` (optional) is invoked after each iteration.
inline SelfPlayResult train_selfplay(const EnvConfig& env_config, const SelfPlayConfig& config, std::uint64_t seed,
                                     const std::function<void(std::size_t)>& progress = {}) {
  config.ppo.validate();
  if (config.pool_interval == 0 || config.checkpoint_interval == 0)
    throw ConfigError("pool_interval and checkpoint_interval must be >= 1");
  const PointMassGame game(env_config);
  SelfPlayResult result;

  std::array<GaussianPolicy, 2> learners;
  std::array<Adam, 2> optim;
  std::array<Rng, 2> shuffle;
  for (int p = 0; p < 2; ++p) {
    Rng init(derive_seed(seed, tag("init"), p));
    learners[p] = GaussianPolicy(game.obs_dim(p), game.action_dim(p), init);
    optim[p] = Adam(learners[p].num_params());
    shuffle[p] = Rng(derive_seed(seed, tag("shuffle"), p));
  }
  auto freeze = [&](int p, std::size_t step) {
    return std::make_shared<const FrozenPolicy>(learners[p], make_meta(env_config, step, "victim", p));
  };
  for (int p = 0; p < 2; ++p) {
    auto f = freeze(p, 0);
    result.pools[p].add(0, f);
    result.checkpoints[p].push_back({0, f});
  }

  const double anneal_steps = config.shaping_fraction * static_cast<double>(config.ppo.total_steps);
  std::size_t step = 0;
  for (std::uint64_t iter = 0; step < config.ppo.total_steps; ++iter) {
    const double coef = anneal_steps > 0.0 ? config.shaping_coef * std::max(0.0, 1.0 - static_cast<double>(step) / anneal_steps) : 0.0;
    std::array<std::shared_ptr<const FrozenPolicy>, 2> current{freeze(0, step), freeze(1, step)};
    std::array<TrajectoryBatch, 2> batches;
    for (int p = 0; p < 2; ++p) {
      std::vector<SamplerPtr> opponents = result.pools[1 - p].samplers();
      opponents.push_back(current[1 - p]);
      const EmbeddedMdp<PointMassGame> mdp(game, std::move(opponents), 1 - p, derive_seed(seed, tag("pool"), iter, p));
      batches[p] = collect_batch(mdp, learners[p], config.ppo, derive_seed(seed, tag("rollout"), p), iter, coef);
    }
    for (int p = 0; p < 2; ++p) {
      auto upd = ppo_update(learners[p], batches[p], config.ppo, optim[p], shuffle[p]);
      learners[p] = std::move(upd.policy);
      result.metrics[p].push_back(metrics_row(step + config.ppo.batch_size, adversary_win_rate(batches[p]), upd.stats));
    }
    const std::size_t prev = step;
    step += config.ppo.batch_size;
    const bool last = step >= config.ppo.total_steps;
    if (step / config.pool_interval != prev / config.pool_interval)
      for (int p = 0; p < 2; ++p) result.pools[p].add(step, freeze(p, step));
    if (step / config.checkpoint_interval != prev / config.checkpoint_interval || last)
      for (int p = 0; p < 2; ++p) result.checkpoints[p].push_back({step, freeze(p, step)});
    if (progress) progress(step);
  }
  return result;
}

struct AdversaryConfig {
  PpoConfig ppo;
  std::size_t checkpoint_interval = 50'000;
};

struct AdversaryResult {
  std::vector<PolicySnapshot> checkpoints;
  std::vector<MetricsRow> metrics;
  std::size_t steps = 0;
};

/// Trains an adversary by PPO against a frozen victim through the embedded
/// MDP, with the sparse terminal reward only. The victim is reached solely
/// through ActionSampler::sample. `resume` continues from a checkpoint and its
/// step counter; total_steps counts from there.
inline AdversaryResult train_adversary(const EnvConfig& env_config, std::shared_ptr<const FrozenPolicy> victim,
                                       int victim_index, const AdversaryConfig& config, std::uint64_t seed,
                                       const PolicyCheckpoint* resume = nullptr,
                                       const std::function<void(std::size_t)>& progress = {}) {
  config.ppo.validate();
  if (!victim) throw ConfigError("no victim policy");
  if (victim->meta().side != victim_index)
    throw ConfigError("victim checkpoint controls side " + std::to_string(victim->meta().side) +
                      " but the attack targets side " + std::to_string(victim_index));
  if (config.checkpoint_interval == 0) throw ConfigError("checkpoint_interval must be >= 1");
  const PointMassGame game(env_config);
  const int adv = 1 - victim_index;
  const EmbeddedMdp<PointMassGame> mdp(game, SamplerPtr(victim), victim_index);

  std::size_t step = 0;
  GaussianPolicy learner;
  if (resume) {
    if (resume->meta.side != adv || resume->meta.role != "adversary")
      throw ConfigError("resume checkpoint is not an adversary for side " + std::to_string(adv));
    learner = resume->policy;
    step = resume->meta.step;
  } else {
    Rng init(derive_seed(seed, tag("adv-init")));
    learner = GaussianPolicy(game.obs_dim(adv), game.action_dim(adv), init);
  }
  Adam optim(learner.num_params());
  Rng shuffle(derive_seed(seed, tag("adv-shuffle"), step));

  AdversaryResult result;
  auto freeze = [&](std::size_t s) {
    return std::make_shared<const FrozenPolicy>(learner, make_meta(env_config, s, "adversary", adv));
  };
  result.checkpoints.push_back({step, freeze(step)});
  const std::size_t end = step + config.ppo.total_steps;
  for (std::uint64_t iter = step / config.ppo.batch_size; step < end; ++iter) {
    TrajectoryBatch batch = collect_batch(mdp, learner, config.ppo, derive_seed(seed, tag("adv-rollout")), iter);
    auto upd = ppo_update(learner, batch, config.ppo, optim, shuffle);
    learner = std::move(upd.policy);
    const std::size_t prev = step;
    step += config.ppo.batch_size;
    result.metrics.push_back(metrics_row(step, adversary_win_rate(batch), upd.stats));
    if (step / config.checkpoint_interval != prev / config.checkpoint_interval || step >= end)
      result.checkpoints.push_back({step, freeze(step)});
    if (progress) progress(step);
  }
  result.steps = step;
  return result;
}

}  // namespace advpol
