#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "advpol/envs.hpp"
#include "advpol/eval.hpp"
#include "advpol/policy.hpp"
#include "advpol/rl.hpp"
#include "advpol/rng.hpp"

namespace advpol {

/// Budgets for one victim-then-adversary run.
struct TrialConfig {
  SelfPlayConfig victim;
  AdversaryConfig adversary;
  /// Side attacked; the other side's self-play policy is the normal opponent.
  int victim_index = 0;
  std::size_t eval_episodes = 1000;
  std::size_t threads = 1;
};

/// Everything the directional experiments read off one trial.
struct TrialResult {
  std::size_t pose_dim = 0;
  std::uint64_t seed = 0;
  std::shared_ptr<const FrozenPolicy> victim;
  std::shared_ptr<const FrozenPolicy> normal_opponent;
  std::shared_ptr<const FrozenPolicy> adversary;
  SelfPlayResult selfplay;
  AdversaryResult attack;
  ScoreGrid grid;  // victim x {unmasked, masked} x {Adv, Normal, Rand, Zero}
};

inline constexpr const char* kAdvLabel = "Adv";
inline constexpr const char* kNormalLabel = "Normal";

using TrialProgress = std::function<void(const std::string& phase, std::size_t step)>;

/// Score grid of one trial: the victim, unmasked and masked, against the
/// adversary, the normal opponent, Rand and Zero.
inline ScoreGrid trial_grid(const EnvConfig& env, const TrialConfig& cfg, std::uint64_t seed, SamplerPtr victim,
                            SamplerPtr normal_opponent, SamplerPtr adversary) {
  const PointMassGame game(env);
  return build_score_grid(game, {{"Victim", std::move(victim)}}, cfg.victim_index,
                          {{kAdvLabel, std::move(adversary)}, {kNormalLabel, std::move(normal_opponent)}},
                          {false, true}, cfg.eval_episodes, derive_seed(seed, tag("grid")), cfg.threads);
}

/// Trains a victim by self-play, attacks it, and evaluates the score grid.
inline TrialResult run_trial(const EnvConfig& env, const TrialConfig& cfg, std::uint64_t seed,
                             const TrialProgress& progress = {}) {
  TrialResult r;
  r.pose_dim = env.pose_dim;
  r.seed = seed;
  r.selfplay = train_selfplay(env, cfg.victim, derive_seed(seed, tag("victim")), [&](std::size_t s) {
    if (progress) progress("victim", s);
  });
  r.victim = r.selfplay.checkpoints[static_cast<std::size_t>(cfg.victim_index)].back().policy;
  r.normal_opponent = r.selfplay.checkpoints[static_cast<std::size_t>(1 - cfg.victim_index)].back().policy;
  r.attack = train_adversary(env, r.victim, cfg.victim_index, cfg.adversary, derive_seed(seed, tag("adversary")),
                             nullptr, [&](std::size_t s) {
                               if (progress) progress("adversary", s);
                             });
  r.adversary = r.attack.checkpoints.back().policy;
  r.grid = trial_grid(env, cfg, seed, r.victim, r.normal_opponent, r.adversary);
  return r;
}

struct SweepRow {
  std::size_t pose_dim = 0;
  std::uint64_t seed = 0;
  double adversary_win_rate = 0.0;
  double ci_low = 0.0;
  double ci_high = 1.0;
  double normal_win_rate = 0.0;
  double rand_win_rate = 0.0;
  double zero_win_rate = 0.0;
  std::size_t n_episodes = 0;
};

inline SweepRow sweep_row(const TrialResult& t) {
  const auto& adv = t.grid.at("Victim", false, kAdvLabel).stats;
  return {t.pose_dim,
          t.seed,
          adv.opponent_win_rate(),
          adv.opponent_ci.low,
          adv.opponent_ci.high,
          t.grid.at("Victim", false, kNormalLabel).stats.opponent_win_rate(),
          t.grid.at("Victim", false, kRandLabel).stats.opponent_win_rate(),
          t.grid.at("Victim", false, kZeroLabel).stats.opponent_win_rate(),
          adv.n_episodes};
}

/// One trial per (pose_dim, seed); rows come out pose-major in input order.
/// `on_trial` sees each full trial result before it is dropped.
inline std::vector<SweepRow> dimensionality_sweep(const EnvConfig& base, const std::vector<std::size_t>& pose_dims,
                                                  const std::vector<std::uint64_t>& seeds, const TrialConfig& cfg,
                                                  const std::function<void(const TrialResult&)>& on_trial = {},
                                                  const TrialProgress& progress = {}) {
  if (pose_dims.empty() || seeds.empty()) throw ConfigError("sweep needs at least one pose_dim and one seed");
  for (std::size_t i = 1; i < pose_dims.size(); ++i)
    if (pose_dims[i] < pose_dims[i - 1]) throw ConfigError("pose_dims must be sorted ascending");
  std::vector<SweepRow> rows;
  for (auto d : pose_dims) {
    EnvConfig env = base;
    env.pose_dim = d;
    for (auto s : seeds) {
      TrialResult t = run_trial(env, cfg, s, progress);
      rows.push_back(sweep_row(t));
      if (on_trial) on_trial(t);
    }
  }
  return rows;
}

}  // namespace advpol
