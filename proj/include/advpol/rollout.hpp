#pragma once

#include <Eigen/Dense>

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "advpol/errors.hpp"
#include "advpol/game.hpp"
#include "advpol/policy.hpp"
#include "advpol/rng.hpp"

namespace advpol {

struct EpisodeRecord {
  std::size_t end_index = 0;  // index of the terminal transition in the batch
  EpisodeOutcome outcome;
};

/// Fixed-length rollout storage. Column t of `obs` / `actions` is transition t;
/// `dones[t]` marks that the episode ended at t and the next column starts a
/// new one. `last_value` bootstraps the trailing, unfinished episode.
struct TrajectoryBatch {
  Eigen::MatrixXd obs;
  Eigen::MatrixXd actions;
  Eigen::VectorXd log_probs;
  Eigen::VectorXd rewards;
  Eigen::VectorXd values;
  std::vector<std::uint8_t> dones;
  std::vector<EpisodeRecord> episodes;
  double last_value = 0.0;

  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;

  std::size_t size() const noexcept { return dones.size(); }

  void resize(std::size_t n, std::size_t obs_dim, std::size_t action_dim) {
    const auto N = static_cast<Eigen::Index>(n);
    obs.resize(static_cast<Eigen::Index>(obs_dim), N);
    actions.resize(static_cast<Eigen::Index>(action_dim), N);
    log_probs.resize(N);
    rewards.resize(N);
    values.resize(N);
    dones.assign(n, 0);
    episodes.clear();
  }

  /// Concatenates batches in order; advantages/returns are concatenated when
  /// every part has them.
  static TrajectoryBatch concat(const std::vector<TrajectoryBatch>& parts) {
    TrajectoryBatch out;
    if (parts.empty()) return out;
    std::size_t n = 0;
    bool with_adv = true;
    for (const auto& p : parts) {
      n += p.size();
      with_adv = with_adv && static_cast<std::size_t>(p.advantages.size()) == p.size();
    }
    out.resize(n, static_cast<std::size_t>(parts.front().obs.rows()),
               static_cast<std::size_t>(parts.front().actions.rows()));
    if (with_adv) {
      out.advantages.resize(static_cast<Eigen::Index>(n));
      out.returns.resize(static_cast<Eigen::Index>(n));
    }
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      const auto m = static_cast<Eigen::Index>(p.size());
      out.obs.middleCols(at, m) = p.obs;
      out.actions.middleCols(at, m) = p.actions;
      out.log_probs.segment(at, m) = p.log_probs;
      out.rewards.segment(at, m) = p.rewards;
      out.values.segment(at, m) = p.values;
      std::copy(p.dones.begin(), p.dones.end(), out.dones.begin() + at);
      for (auto e : p.episodes) {
        e.end_index += static_cast<std::size_t>(at);
        out.episodes.push_back(e);
      }
      if (with_adv) {
        out.advantages.segment(at, m) = p.advantages;
        out.returns.segment(at, m) = p.returns;
      }
      at += m;
    }
    out.last_value = parts.back().last_value;
    return out;
  }
};

/// What the rollout needs from a trainable policy.
template <class P>
concept Learner = requires(const P& p, const Eigen::VectorXd& obs, Rng& rng) {
  { p.sample_action(obs, rng) } -> std::same_as<ActionSample>;
  { p.value(obs) } -> std::convertible_to<double>;
};

/// Steps one environment instance of an embedded MDP, resetting episodes as
/// they end. Episode ids run episode_base, episode_base + stride, ...
template <MarkovGame G>
class RolloutWorker {
 public:
  RolloutWorker(const EmbeddedMdp<G>& mdp, std::uint64_t seed, std::uint64_t episode_base = 0,
                std::uint64_t episode_stride = 1)
      : mdp_(&mdp), learner_rng_(derive_seed(seed, tag("learner"))),
        victim_rng_(derive_seed(seed, tag("victim"))), next_episode_(episode_base),
        stride_(episode_stride) {}

  /// Collects exactly n transitions. With shaping_coef != 0 and a game that
  /// defines shaping(), the dense warm-up term is added to each reward.
  template <Learner P>
  TrajectoryBatch collect(const P& learner, std::size_t n, double shaping_coef = 0.0) {
    TrajectoryBatch b;
    b.resize(n, mdp_->obs_dim(), mdp_->action_dim());
    for (std::size_t t = 0; t < n; ++t) {
      if (!state_) begin_episode();
      const Eigen::VectorXd obs = mdp_->observe(*state_);
      if (!obs.allFinite()) throw NumericalFault("non-finite observation", t);
      const ActionSample s = learner.sample_action(obs, learner_rng_);
      if (!s.action.allFinite() || !std::isfinite(s.log_prob)) throw NumericalFault("non-finite action", t);
      auto tr = mdp_->step(*state_, s.action, victim_rng_);
      double r = tr.reward;
      if constexpr (requires(const G& g) { g.shaping(*state_, tr.next, 0); }) {
        if (shaping_coef != 0.0) r += shaping_coef * mdp_->game().shaping(*state_, tr.next, mdp_->adversary_index());
      }
      const auto col = static_cast<Eigen::Index>(t);
      b.obs.col(col) = obs;
      b.actions.col(col) = s.action;
      b.log_probs(col) = s.log_prob;
      b.values(col) = s.value;
      b.rewards(col) = r;
      b.dones[t] = tr.done ? 1 : 0;
      if (tr.done) {
        b.episodes.push_back({t, mdp_->outcome(tr.next)});
        state_.reset();
      } else {
        state_ = std::move(tr.next);
      }
    }
    b.last_value = state_ ? learner.value(mdp_->observe(*state_)) : 0.0;
    return b;
  }

  /// Drops the running episode so the next collect() starts a fresh one.
  void abandon_episode() { state_.reset(); }

 private:
  void begin_episode() {
    state_ = mdp_->reset(next_episode_);
    next_episode_ += stride_;
  }

  const EmbeddedMdp<G>* mdp_;
  Rng learner_rng_;
  Rng victim_rng_;
  std::uint64_t next_episode_;
  std::uint64_t stride_;
  std::optional<typename G::State> state_;
};

/// Collects n_steps transitions from fresh episodes of the embedded MDP.
template <MarkovGame G, Learner P>
TrajectoryBatch rollout(const EmbeddedMdp<G>& mdp, const P& adversary, std::size_t n_steps,
                        std::uint64_t seed) {
  if (n_steps < 1) throw ConfigError("rollout needs n_steps >= 1");
  RolloutWorker<G> w(mdp, seed, derive_seed(seed, tag("episodes")) >> 16);
  return w.collect(adversary, n_steps);
}

}  // namespace advpol
