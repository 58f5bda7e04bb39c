#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>

#include "advpol/errors.hpp"
#include "advpol/game.hpp"
#include "advpol/rng.hpp"

namespace advpol {

enum class EnvName : std::uint8_t { CorridorPass, DiskSumo };
enum class ActionSquash : std::uint8_t { Clip, Tanh };

inline std::string_view to_string(EnvName n) {
  return n == EnvName::CorridorPass ? "CorridorPass" : "DiskSumo";
}

inline EnvName env_name_from_string(std::string_view s) {
  if (s == "CorridorPass") return EnvName::CorridorPass;
  if (s == "DiskSumo") return EnvName::DiskSumo;
  throw ConfigError("unknown env name '" + std::string(s) + "'");
}

/// Configuration for the point-mass analogue games. Lengths are in arena units
/// and get multiplied by arena_scale.
struct EnvConfig {
  EnvName name = EnvName::CorridorPass;
  std::size_t pose_dim = 24;
  double arena_scale = 1.0;
  std::size_t time_limit = 50;
  double dt = 0.1;
  double max_speed = 1.0;

  /// Acceleration produced by a unit force action.
  double accel = 5.0;
  /// First-order lag rate of poses toward their action targets.
  double pose_lag = 0.2;
  /// Tag distance (CorridorPass) or body contact distance (DiskSumo), arena units.
  double contact_radius = 0.25;
  /// Corridor half-width, arena units (CorridorPass only).
  double corridor_half_width = 1.5;
  /// Blocker top speed as a fraction of max_speed (CorridorPass only).
  double blocker_speed_ratio = 0.4;
  /// Std of per-step acceleration noise as a fraction of accel.
  double force_noise = 0.02;
  ActionSquash squash = ActionSquash::Clip;
  /// Appends the opponent's velocity to the maskable component.
  bool observe_opponent_velocity = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(time_limit >= 1)) throw ConfigError("env.time_limit must be >= 1");
    if (!(dt > 0.0)) throw ConfigError("env.dt must be > 0");
    if (!(arena_scale > 0.0)) throw ConfigError("env.arena_scale must be > 0");
    if (!(max_speed > 0.0)) throw ConfigError("env.max_speed must be > 0");
    if (!(accel > 0.0)) throw ConfigError("env.accel must be > 0");
    if (!(pose_lag > 0.0 && pose_lag <= 1.0)) throw ConfigError("env.pose_lag must be in (0, 1]");
    if (!(contact_radius > 0.0)) throw ConfigError("env.contact_radius must be > 0");
    if (!(corridor_half_width > 0.0)) throw ConfigError("env.corridor_half_width must be > 0");
    if (!(blocker_speed_ratio > 0.0)) throw ConfigError("env.blocker_speed_ratio must be > 0");
    if (!(force_noise >= 0.0)) throw ConfigError("env.force_noise must be >= 0");
  }
};

struct Slice {
  std::size_t offset = 0;
  std::size_t size = 0;
  std::size_t end() const noexcept { return offset + size; }
};

/// Per-player observation layout. The opponent slices are contiguous and form
/// the maskable component P.
struct ObservationLayout {
  Slice own_position, own_velocity, own_pose, opponent_position, opponent_pose, opponent_velocity;
  std::size_t total_dim = 0;

  Slice maskable() const noexcept {
    return {opponent_position.offset, total_dim - opponent_position.offset};
  }

  static ObservationLayout make(std::size_t pose_dim, bool opponent_velocity) {
    ObservationLayout l;
    std::size_t at = 0;
    auto take = [&at](std::size_t n) {
      Slice s{at, n};
      at += n;
      return s;
    };
    l.own_position = take(2);
    l.own_velocity = take(2);
    l.own_pose = take(pose_dim);
    l.opponent_position = take(2);
    l.opponent_pose = take(pose_dim);
    l.opponent_velocity = take(opponent_velocity ? 2 : 0);
    l.total_dim = at;
    return l;
  }
};

struct MaskSpec {
  bool enabled = false;
  Eigen::VectorXd static_value;
};

/// Replaces the maskable component of an observation with the mask's static value.
inline Eigen::VectorXd apply_mask(const ObservationLayout& layout, Eigen::VectorXd obs,
                                  const MaskSpec& mask) {
  if (!mask.enabled) return obs;
  const Slice p = layout.maskable();
  if (static_cast<std::size_t>(mask.static_value.size()) != p.size)
    throw ConfigError("mask static value has size " + std::to_string(mask.static_value.size()) +
                      ", expected " + std::to_string(p.size));
  obs.segment(p.offset, p.size) = mask.static_value;
  return obs;
}

struct PlayerState {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  Eigen::VectorXd pose;
};

struct GameState {
  std::array<PlayerState, 2> players;
  std::size_t clock = 0;
  std::uint64_t episode = 0;
  Status status = Status::Ongoing;
};

/// Two point masses with an observation-only pose vector each.
///
/// CorridorPass: player 0 is the runner, player 1 the blocker. The runner wins
/// by crossing x = length(); the blocker wins by tagging the runner (distance
/// below contact_radius) or when time runs out. There are no ties.
///
/// DiskSumo: symmetric. Bodies closer than contact_radius are pushed apart; a
/// player leaving the disk loses; simultaneous exits and timeouts are ties.
///
/// Poses never feed back into positions, velocities or win conditions.
class PointMassGame {
 public:
  using State = GameState;

  explicit PointMassGame(EnvConfig config)
      : config_(config), layout_(ObservationLayout::make(config.pose_dim, config.observe_opponent_velocity)),
        noise_(derive_seed(config.seed, tag("env"))) {
    config_.validate();
  }

  const EnvConfig& config() const noexcept { return config_; }
  const ObservationLayout& layout() const noexcept { return layout_; }

  std::size_t action_dim(int /*player*/) const noexcept { return 2 + config_.pose_dim; }
  std::size_t obs_dim(int /*player*/) const noexcept { return layout_.total_dim; }
  std::size_t max_steps() const noexcept { return config_.time_limit; }
  Status status(const State& s) const noexcept { return s.status; }
  std::size_t clock(const State& s) const noexcept { return s.clock; }
  std::uint64_t episode(const State& s) const noexcept { return s.episode; }

  double scale() const noexcept { return config_.arena_scale; }
  double length() const noexcept { return 2.5 * scale(); }
  double half_width() const noexcept { return config_.corridor_half_width * scale(); }
  double disk_radius() const noexcept { return 2.0 * scale(); }
  double contact_distance() const noexcept { return config_.contact_radius * scale(); }

  double top_speed(int player) const noexcept {
    if (config_.name == EnvName::CorridorPass && player == 1)
      return config_.max_speed * config_.blocker_speed_ratio;
    return config_.max_speed;
  }

  /// Center of the player's start region.
  Eigen::Vector2d typical_start(int player) const {
    if (config_.name == EnvName::CorridorPass)
      return player == 0 ? Eigen::Vector2d(0.1 * scale(), 0.0) : Eigen::Vector2d(1.25 * scale(), 0.0);
    return Eigen::Vector2d(player == 0 ? -0.8 * scale() : 0.8 * scale(), 0.0);
  }

  /// Mask for `observer`: the opponent frozen at its typical start with a zero
  /// pose (and zero velocity when velocity is observed).
  MaskSpec default_mask(int observer) const {
    MaskSpec m;
    m.enabled = true;
    m.static_value = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout_.maskable().size));
    m.static_value.head<2>() = typical_start(1 - observer);
    return m;
  }

  State reset(std::uint64_t episode) const {
    State s;
    s.episode = episode;
    constexpr std::uint64_t kResetStep = ~std::uint64_t{0};
    auto u = [&](std::uint64_t lane, double lo, double hi) {
      return lo + (hi - lo) * noise_.uniform(episode, kResetStep, lane);
    };
    const double sc = scale();
    if (config_.name == EnvName::CorridorPass) {
      s.players[0].position = {u(0, 0.0, 0.2 * sc), u(1, -0.5 * sc, 0.5 * sc)};
      s.players[1].position = {u(2, 1.1 * sc, 1.4 * sc), u(3, -0.5 * sc, 0.5 * sc)};
    } else {
      for (int p = 0; p < 2; ++p) {
        const Eigen::Vector2d jitter(u(4 * p, -0.2 * sc, 0.2 * sc), u(4 * p + 1, -0.4 * sc, 0.4 * sc));
        s.players[p].position = typical_start(p) + jitter;
      }
    }
    for (auto& pl : s.players) pl.pose = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(config_.pose_dim));
    return s;
  }

  /// Integrates one step of the dynamics without evaluating win conditions.
  /// Velocities take a semi-implicit Euler step from the squashed force and are
  /// clipped to the player's top speed; poses lag toward their targets.
  State step_physics(const State& s, const Eigen::VectorXd& a0, const Eigen::VectorXd& a1) const {
    const std::size_t adim = action_dim(0);
    if (static_cast<std::size_t>(a0.size()) != adim || static_cast<std::size_t>(a1.size()) != adim)
      throw ConfigError("action has wrong dimension, expected " + std::to_string(adim));
    if (!a0.allFinite() || !a1.allFinite()) throw NumericalFault("non-finite action", s.clock);

    State n = s;
    n.clock = s.clock + 1;
    const double dt = config_.dt;
    for (int p = 0; p < 2; ++p) {
      const Eigen::VectorXd& a = p == 0 ? a0 : a1;
      PlayerState& pl = n.players[p];
      Eigen::Vector2d force = squash(a.head<2>());
      if (config_.force_noise > 0.0) {
        force.x() += config_.force_noise * noise_.normal(s.episode, n.clock, 2 * p);
        force.y() += config_.force_noise * noise_.normal(s.episode, n.clock, 2 * p + 1);
      }
      pl.velocity += config_.accel * dt * force;
      const double speed = pl.velocity.norm();
      const double vmax = top_speed(p);
      if (speed > vmax) pl.velocity *= vmax / speed;
      pl.position += dt * pl.velocity;
      if (config_.pose_dim > 0) {
        const Eigen::VectorXd target = squash(a.tail(static_cast<Eigen::Index>(config_.pose_dim)));
        pl.pose += config_.pose_lag * (target - pl.pose);
      }
    }

    if (config_.name == EnvName::CorridorPass) {
      for (int p = 0; p < 2; ++p) {
        PlayerState& pl = n.players[p];
        const double hw = half_width();
        if (pl.position.y() > hw || pl.position.y() < -hw) {
          pl.position.y() = std::clamp(pl.position.y(), -hw, hw);
          pl.velocity.y() = 0.0;
        }
        const double xmax = p == 0 ? std::numeric_limits<double>::infinity() : length();
        if (pl.position.x() < 0.0 || pl.position.x() > xmax) {
          pl.position.x() = std::clamp(pl.position.x(), 0.0, xmax);
          pl.velocity.x() = 0.0;
        }
      }
    } else {
      Eigen::Vector2d delta = n.players[1].position - n.players[0].position;
      const double d = delta.norm();
      const double c = contact_distance();
      if (d < c) {
        const Eigen::Vector2d normal = d > 1e-12 ? Eigen::Vector2d(delta / d) : Eigen::Vector2d(1.0, 0.0);
        const double push = 0.5 * (c - d);
        n.players[0].position -= push * normal;
        n.players[1].position += push * normal;
      }
    }
    return n;
  }

  State step(const State& s, const Eigen::VectorXd& a0, const Eigen::VectorXd& a1) const {
    if (is_terminal(s.status)) throw ConfigError("step called on a finished episode");
    State n = step_physics(s, a0, a1);
    n.status = judge(n);
    return n;
  }

  Eigen::VectorXd observe(const State& s, int player) const {
    Eigen::VectorXd o(static_cast<Eigen::Index>(layout_.total_dim));
    const PlayerState& me = s.players[player];
    const PlayerState& them = s.players[1 - player];
    auto put = [&o](const Slice& sl, const auto& v) {
      if (sl.size > 0) o.segment(static_cast<Eigen::Index>(sl.offset), static_cast<Eigen::Index>(sl.size)) = v;
    };
    put(layout_.own_position, me.position);
    put(layout_.own_velocity, me.velocity);
    put(layout_.own_pose, me.pose);
    put(layout_.opponent_position, them.position);
    put(layout_.opponent_pose, them.pose);
    put(layout_.opponent_velocity, them.velocity);
    return o;
  }

  Eigen::VectorXd observe(const State& s, int player, const MaskSpec& mask) const {
    return apply_mask(layout_, observe(s, player), mask);
  }

  /// Dense warm-up shaping used only by self-play. CorridorPass pays the runner
  /// its progress and the blocker its approach to the runner; DiskSumo pays
  /// each player the opponent's outward drift minus its own.
  double shaping(const State& prev, const State& next, int player) const {
    if (config_.name == EnvName::CorridorPass) {
      if (player == 0) return (next.players[0].position.x() - prev.players[0].position.x()) / length();
      const double before = (prev.players[0].position - prev.players[1].position).norm();
      const double after = (next.players[0].position - next.players[1].position).norm();
      return (before - after) / length();
    }
    const int other = 1 - player;
    const double own = next.players[player].position.norm() - prev.players[player].position.norm();
    const double opp = next.players[other].position.norm() - prev.players[other].position.norm();
    return (opp - own) / disk_radius();
  }

 private:
  template <class V>
  Eigen::VectorXd squash(const V& v) const {
    if (config_.squash == ActionSquash::Tanh) return v.array().tanh().matrix();
    return v.cwiseMax(-1.0).cwiseMin(1.0);
  }

  Status judge(const State& n) const {
    if (config_.name == EnvName::CorridorPass) {
      if (n.players[0].position.x() >= length()) return Status::Player0Wins;
      if ((n.players[0].position - n.players[1].position).norm() < contact_distance())
        return Status::Player1Wins;
      if (n.clock >= config_.time_limit) return Status::Player1Wins;
      return Status::Ongoing;
    }
    const bool out0 = n.players[0].position.norm() > disk_radius();
    const bool out1 = n.players[1].position.norm() > disk_radius();
    if (out0 && out1) return Status::Tie;
    if (out0) return Status::Player1Wins;
    if (out1) return Status::Player0Wins;
    if (n.clock >= config_.time_limit) return Status::Tie;
    return Status::Ongoing;
  }

  EnvConfig config_;
  ObservationLayout layout_;
  CounterNoise noise_;
};

inline PointMassGame make_env(const EnvConfig& config) { return PointMassGame(config); }

static_assert(MarkovGame<PointMassGame>);

}  // namespace advpol
