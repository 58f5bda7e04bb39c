#pragma once

#include <Eigen/Dense>

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "advpol/errors.hpp"
#include "advpol/rng.hpp"

namespace advpol {

/// Raw game status, in terms of player indices.
enum class Status : std::uint8_t { Ongoing, Player0Wins, Player1Wins, Tie };

/// Outcome of an episode seen from the embedding (attacker vs frozen victim).
enum class Winner : std::uint8_t { Adversary, Victim, Tie };

struct EpisodeOutcome {
  Winner winner = Winner::Tie;
  std::size_t steps_elapsed = 0;
};

inline bool is_terminal(Status s) noexcept { return s != Status::Ongoing; }

/// Sparse terminal payoff: +1 for a win, -1 for a loss or a tie, 0 while running.
/// Ties pay -1 to both players, so the zero-sum identity only holds for decisive
/// outcomes.
inline double terminal_reward(Status s, int player) noexcept {
  switch (s) {
    case Status::Ongoing:
      return 0.0;
    case Status::Tie:
      return -1.0;
    case Status::Player0Wins:
      return player == 0 ? 1.0 : -1.0;
    case Status::Player1Wins:
      return player == 1 ? 1.0 : -1.0;
  }
  return 0.0;
}

/// Two-player Markov game. `step` must be a pure function of the state (which
/// carries its episode id and clock) and both actions; any transition noise is
/// drawn from a counter-based stream keyed by the game seed, the episode and the
/// step.
template <class G>
concept MarkovGame = requires(const G& g, const typename G::State& s, const Eigen::VectorXd& a,
                              int player, std::uint64_t episode) {
  { g.action_dim(player) } -> std::convertible_to<std::size_t>;
  { g.obs_dim(player) } -> std::convertible_to<std::size_t>;
  { g.max_steps() } -> std::convertible_to<std::size_t>;
  { g.reset(episode) } -> std::same_as<typename G::State>;
  { g.step(s, a, a) } -> std::same_as<typename G::State>;
  { g.observe(s, player) } -> std::same_as<Eigen::VectorXd>;
  { g.status(s) } -> std::same_as<Status>;
  { g.clock(s) } -> std::convertible_to<std::size_t>;
  { g.episode(s) } -> std::convertible_to<std::uint64_t>;
};

/// Black-box policy: the only thing a holder can do is ask for an action.
class ActionSampler {
 public:
  virtual ~ActionSampler() = default;

  /// Expected observation size; 0 accepts any size (baselines).
  virtual std::size_t obs_dim() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual Eigen::VectorXd sample(const Eigen::VectorXd& obs, Rng& rng) const = 0;
};

using SamplerPtr = std::shared_ptr<const ActionSampler>;

/// The single-agent MDP obtained by folding a frozen victim into a two-player
/// game. Holding a pool of victims picks one per episode, uniformly, from a
/// hash of (pool seed, episode); a single victim is a pool of one.
template <MarkovGame G>
class EmbeddedMdp {
 public:
  using State = typename G::State;

  struct Transition {
    State next;
    double reward = 0.0;
    bool done = false;
  };

  EmbeddedMdp(const G& game, SamplerPtr victim, int victim_index)
      : EmbeddedMdp(game, std::vector<SamplerPtr>{std::move(victim)}, victim_index, 0) {}

  EmbeddedMdp(const G& game, std::vector<SamplerPtr> victims, int victim_index,
              std::uint64_t pool_seed)
      : game_(&game), victims_(std::move(victims)), victim_index_(victim_index),
        pool_seed_(pool_seed) {
    if (victim_index != 0 && victim_index != 1) throw ConfigError("victim index must be 0 or 1");
    if (victims_.empty()) throw ConfigError("embedded MDP needs at least one victim");
    for (const auto& v : victims_) {
      if (!v) throw ConfigError("null victim policy");
      const std::size_t want_obs = game.obs_dim(victim_index);
      const std::size_t want_act = game.action_dim(victim_index);
      if (v->obs_dim() != 0 && v->obs_dim() != want_obs)
        throw ConfigError("victim observation dim " + std::to_string(v->obs_dim()) +
                          " does not match game layout " + std::to_string(want_obs));
      if (v->action_dim() != want_act)
        throw ConfigError("victim action dim " + std::to_string(v->action_dim()) +
                          " does not match game action dim " + std::to_string(want_act));
    }
  }

  const G& game() const noexcept { return *game_; }
  int victim_index() const noexcept { return victim_index_; }
  int adversary_index() const noexcept { return 1 - victim_index_; }
  std::size_t obs_dim() const { return game_->obs_dim(adversary_index()); }
  std::size_t action_dim() const { return game_->action_dim(adversary_index()); }
  std::size_t pool_size() const noexcept { return victims_.size(); }

  State reset(std::uint64_t episode) const { return game_->reset(episode); }

  Eigen::VectorXd observe(const State& s) const { return game_->observe(s, adversary_index()); }

  /// Samples the victim's action and advances the game with both actions.
  Transition step(const State& s, const Eigen::VectorXd& adversary_action, Rng& victim_rng) const {
    const ActionSampler& victim = victim_for(game_->episode(s));
    const Eigen::VectorXd victim_action = victim.sample(game_->observe(s, victim_index_), victim_rng);
    Transition t{victim_index_ == 0 ? game_->step(s, victim_action, adversary_action)
                                    : game_->step(s, adversary_action, victim_action)};
    const Status st = game_->status(t.next);
    t.done = is_terminal(st);
    t.reward = terminal_reward(st, adversary_index());
    return t;
  }

  EpisodeOutcome outcome(const State& s) const {
    EpisodeOutcome o;
    o.steps_elapsed = game_->clock(s);
    const Status st = game_->status(s);
    if (st == Status::Tie || st == Status::Ongoing) {
      o.winner = Winner::Tie;
    } else {
      const int w = st == Status::Player0Wins ? 0 : 1;
      o.winner = w == victim_index_ ? Winner::Victim : Winner::Adversary;
    }
    return o;
  }

 private:
  const ActionSampler& victim_for(std::uint64_t episode) const {
    if (victims_.size() == 1) return *victims_.front();
    return *victims_[derive_seed(pool_seed_, episode) % victims_.size()];
  }

  const G* game_;
  std::vector<SamplerPtr> victims_;
  int victim_index_;
  std::uint64_t pool_seed_;
};

}  // namespace advpol
