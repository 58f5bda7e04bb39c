#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "advpol/envs.hpp"
#include "advpol/errors.hpp"
#include "advpol/game.hpp"
#include "advpol/parallel.hpp"
#include "advpol/policy.hpp"
#include "advpol/rng.hpp"

namespace advpol {

struct Interval {
  double low = 0.0;
  double high = 1.0;
};

/// Wilson score interval for a binomial proportion (default 95%).
inline Interval wilson_interval(std::size_t successes, std::size_t n, double z = 1.959963984540054) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double center = (p + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

/// Evaluation episode ids have the top bit set; training ids never do, so the
/// two never share transition noise.
inline std::uint64_t eval_episode_id(std::uint64_t seed, std::size_t episode) {
  return derive_seed(seed, tag("eval-episode"), episode) | (std::uint64_t{1} << 63);
}

struct MatchStats {
  std::size_t n_episodes = 0;
  std::size_t wins_opponent = 0;
  std::size_t wins_victim = 0;
  std::size_t ties = 0;
  double mean_episode_length = 0.0;
  std::uint64_t seed = 0;
  Interval opponent_ci;

  double opponent_win_rate() const {
    return n_episodes ? static_cast<double>(wins_opponent) / static_cast<double>(n_episodes) : 0.0;
  }
  double victim_win_rate() const {
    return n_episodes ? static_cast<double>(wins_victim) / static_cast<double>(n_episodes) : 0.0;
  }
  double tie_rate() const { return n_episodes ? static_cast<double>(ties) / static_cast<double>(n_episodes) : 0.0; }
};

/// Plays one episode with stochastic policies. The victim sees its observation
/// through `mask`.
inline EpisodeOutcome play_episode(const PointMassGame& game, const ActionSampler& opponent,
                                   const ActionSampler& victim, int victim_index, const MaskSpec& mask,
                                   std::uint64_t episode_id, Rng& opponent_rng, Rng& victim_rng) {
  GameState s = game.reset(episode_id);
  const int opp = 1 - victim_index;
  while (!is_terminal(s.status)) {
    const Eigen::VectorXd a_vic = victim.sample(game.observe(s, victim_index, mask), victim_rng);
    const Eigen::VectorXd a_opp = opponent.sample(game.observe(s, opp), opponent_rng);
    s = victim_index == 0 ? game.step(s, a_vic, a_opp) : game.step(s, a_opp, a_vic);
  }
  EpisodeOutcome o;
  o.steps_elapsed = s.clock;
  if (s.status == Status::Tie) {
    o.winner = Winner::Tie;
  } else {
    const int w = s.status == Status::Player0Wins ? 0 : 1;
    o.winner = w == victim_index ? Winner::Victim : Winner::Adversary;
  }
  return o;
}

/// Win/loss/tie counts over n_episodes with a Wilson 95% interval on the
/// opponent's win rate. Per-episode seeds are fixed up front, so the result
/// does not depend on `threads`.
inline MatchStats play_match(const PointMassGame& game, const ActionSampler& opponent, const ActionSampler& victim,
                             int victim_index, const MaskSpec& mask, std::size_t n_episodes, std::uint64_t seed,
                             std::size_t threads = 1) {
  const int opp = 1 - victim_index;
  auto check = [&](const ActionSampler& p, int side, const char* who) {
    if (p.obs_dim() != 0 && p.obs_dim() != game.obs_dim(side))
      throw ConfigError(std::string(who) + " observation dim does not match the environment");
    if (p.action_dim() != game.action_dim(side))
      throw ConfigError(std::string(who) + " action dim does not match the environment");
  };
  check(opponent, opp, "opponent");
  check(victim, victim_index, "victim");

  std::vector<EpisodeOutcome> outcomes(n_episodes);
  parallel_for(n_episodes, threads, [&](std::size_t e) {
    Rng opp_rng(derive_seed(seed, tag("opponent"), e));
    Rng vic_rng(derive_seed(seed, tag("victim"), e));
    outcomes[e] = play_episode(game, opponent, victim, victim_index, mask, eval_episode_id(seed, e), opp_rng, vic_rng);
  });
  MatchStats st;
  st.n_episodes = n_episodes;
  st.seed = seed;
  double len = 0.0;
  for (const auto& o : outcomes) {
    len += static_cast<double>(o.steps_elapsed);
    switch (o.winner) {
      case Winner::Adversary: ++st.wins_opponent; break;
      case Winner::Victim: ++st.wins_victim; break;
      case Winner::Tie: ++st.ties; break;
    }
  }
  st.mean_episode_length = n_episodes ? len / static_cast<double>(n_episodes) : 0.0;
  st.opponent_ci = wilson_interval(st.wins_opponent, n_episodes);
  return st;
}

/// A labelled policy in a score grid.
struct Entrant {
  std::string label;
  SamplerPtr policy;
};

struct GridCell {
  std::string victim;
  bool masked = false;
  std::string opponent;
  MatchStats stats;
};

/// Opponent win rates for every (victim, mask variant, opponent) triple.
struct ScoreGrid {
  std::vector<std::string> victims;
  std::vector<bool> mask_variants;
  std::vector<std::string> opponents;
  std::vector<GridCell> cells;  // victim-major, then mask variant, then opponent
  std::size_t n_episodes = 0;
  std::uint64_t seed = 0;

  const GridCell& at(const std::string& victim, bool masked, const std::string& opponent) const {
    for (const auto& c : cells)
      if (c.victim == victim && c.masked == masked && c.opponent == opponent) return c;
    throw ConfigError("no grid cell for victim '" + victim + "' opponent '" + opponent + "'");
  }
};

inline constexpr const char* kRandLabel = "Rand";
inline constexpr const char* kZeroLabel = "Zero";

/// Evaluates the full cross product. Rand and Zero opponents are appended
/// when absent. Each cell gets its own derived seed, and every cell plays the
/// same number of episodes.
inline ScoreGrid build_score_grid(const PointMassGame& game, const std::vector<Entrant>& victims, int victim_index,
                                  std::vector<Entrant> opponents, const std::vector<bool>& mask_variants,
                                  std::size_t n_episodes, std::uint64_t seed, std::size_t threads = 1) {
  if (victims.empty() || mask_variants.empty())
    throw ConfigError("score grid needs at least one victim and mask variant");
  const int opp = 1 - victim_index;
  auto has = [&](const char* label) {
    return std::any_of(opponents.begin(), opponents.end(), [&](const Entrant& e) { return e.label == label; });
  };
  if (!has(kRandLabel)) opponents.push_back({kRandLabel, make_baseline(BaselineKind::Rand, game.action_dim(opp))});
  if (!has(kZeroLabel)) opponents.push_back({kZeroLabel, make_baseline(BaselineKind::Zero, game.action_dim(opp))});

  ScoreGrid g;
  g.n_episodes = n_episodes;
  g.seed = seed;
  g.mask_variants = mask_variants;
  for (const auto& v : victims) g.victims.push_back(v.label);
  for (const auto& o : opponents) g.opponents.push_back(o.label);
  const MaskSpec masked = game.default_mask(victim_index);
  for (std::size_t vi = 0; vi < victims.size(); ++vi)
    for (std::size_t mi = 0; mi < mask_variants.size(); ++mi)
      for (std::size_t oi = 0; oi < opponents.size(); ++oi) {
        GridCell c;
        c.victim = victims[vi].label;
        c.masked = mask_variants[mi];
        c.opponent = opponents[oi].label;
        c.stats = play_match(game, *opponents[oi].policy, *victims[vi].policy, victim_index,
                             c.masked ? masked : MaskSpec{}, n_episodes,
                             derive_seed(seed, tag("cell"), vi, mi, oi), threads);
        g.cells.push_back(std::move(c));
      }
  return g;
}

struct CurvePoint {
  std::size_t step = 0;
  double win_rate = 0.0;
  double ci_low = 0.0;
  double ci_high = 1.0;
};

/// Adversary win rate at each checkpoint against a fixed victim. All points
/// share one seed, so the final point equals play_match on the final
/// checkpoint with that seed.
inline std::vector<CurvePoint> win_rate_curve(const PointMassGame& game, const std::vector<PolicySnapshot>& checkpoints,
                                              const ActionSampler& victim, int victim_index, const MaskSpec& mask,
                                              std::size_t n_episodes, std::uint64_t seed, std::size_t threads = 1) {
  if (checkpoints.size() < 2) throw ConfigError("a win-rate curve needs at least 2 checkpoints");
  std::vector<CurvePoint> out;
  for (const auto& c : checkpoints) {
    const auto st = play_match(game, *c.policy, victim, victim_index, mask, n_episodes, seed, threads);
    out.push_back({c.step, st.opponent_win_rate(), st.opponent_ci.low, st.opponent_ci.high});
  }
  return out;
}

/// Index of the victim whose final adversary win rate is the median; with an
/// even count the lower median, ties broken by lowest index.
inline std::size_t median_index(const std::vector<double>& final_rates) {
  if (final_rates.empty()) throw ConfigError("median of an empty list");
  std::vector<std::size_t> idx(final_rates.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return final_rates[a] < final_rates[b]; });
  const double m = final_rates[idx[(idx.size() - 1) / 2]];
  for (std::size_t i = 0; i < final_rates.size(); ++i)
    if (final_rates[i] == m) return i;
  return idx[(idx.size() - 1) / 2];
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace advpol
