#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "advpol/binio.hpp"
#include "advpol/digest.hpp"
#include "advpol/envs.hpp"
#include "advpol/errors.hpp"
#include "advpol/game.hpp"
#include "advpol/neural.hpp"
#include "advpol/rng.hpp"

namespace advpol {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Log density of a diagonal Gaussian.
inline double gaussian_log_prob(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std,
                                const Eigen::VectorXd& action) {
  const Eigen::ArrayXd z = (action - mean).array() / log_std.array().exp();
  return -0.5 * z.square().sum() - log_std.sum() - 0.5 * static_cast<double>(mean.size()) * kLog2Pi;
}

/// Partial derivatives of gaussian_log_prob with respect to the mean and log_std.
inline void gaussian_log_prob_grad(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std,
                                   const Eigen::VectorXd& action, Eigen::VectorXd& d_mean,
                                   Eigen::VectorXd& d_log_std) {
  const Eigen::ArrayXd inv_var = (-2.0 * log_std.array()).exp();
  const Eigen::ArrayXd diff = (action - mean).array();
  d_mean = (diff * inv_var).matrix();
  d_log_std = (diff.square() * inv_var - 1.0).matrix();
}

/// Entropy of a diagonal Gaussian (does not depend on the mean).
inline double gaussian_entropy(const Eigen::VectorXd& log_std) {
  return log_std.sum() + 0.5 * static_cast<double>(log_std.size()) * (kLog2Pi + 1.0);
}

struct ActionSample {
  Eigen::VectorXd action;  // unsquashed; the environment clips at its boundary
  double log_prob = 0.0;
  double value = 0.0;
  std::optional<ActivationTrace> trace;
};

/// Diagonal-Gaussian policy with a state-independent log_std and a separate
/// value network.
class GaussianPolicy {
 public:
  GaussianPolicy() = default;

  GaussianPolicy(std::size_t obs_dim, std::size_t action_dim, Rng& rng,
                 const std::vector<std::size_t>& hidden = {64, 64}, double initial_log_std = 0.0) {
    std::vector<std::size_t> pi_sizes{obs_dim};
    pi_sizes.insert(pi_sizes.end(), hidden.begin(), hidden.end());
    std::vector<std::size_t> vf_sizes = pi_sizes;
    pi_sizes.push_back(action_dim);
    vf_sizes.push_back(1);
    net_ = Mlp::orthogonal(pi_sizes, std::sqrt(2.0), 0.01, rng);
    value_net_ = Mlp::orthogonal(vf_sizes, std::sqrt(2.0), 1.0, rng);
    log_std_ = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(action_dim), initial_log_std);
  }

  GaussianPolicy(Mlp net, Eigen::VectorXd log_std, Mlp value_net)
      : net_(std::move(net)), log_std_(std::move(log_std)), value_net_(std::move(value_net)) {
    if (static_cast<std::size_t>(log_std_.size()) != net_.output_dim())
      throw ConfigError("log_std size does not match policy output");
    if (value_net_.output_dim() != 1 || value_net_.input_dim() != net_.input_dim())
      throw ConfigError("value network shape does not match policy");
  }

  std::size_t obs_dim() const noexcept { return net_.input_dim(); }
  std::size_t action_dim() const noexcept { return net_.output_dim(); }

  const Mlp& net() const noexcept { return net_; }
  Mlp& net() noexcept { return net_; }
  const Mlp& value_net() const noexcept { return value_net_; }
  Mlp& value_net() noexcept { return value_net_; }
  const Eigen::VectorXd& log_std() const noexcept { return log_std_; }
  Eigen::VectorXd& log_std() noexcept { return log_std_; }

  Eigen::VectorXd mean(const Eigen::VectorXd& obs, ActivationTrace* trace = nullptr) const {
    return net_.forward(obs, trace);
  }
  double value(const Eigen::VectorXd& obs) const { return value_net_.forward(obs, nullptr)(0); }

  ActionSample sample_action(const Eigen::VectorXd& obs, Rng& rng, bool capture = false) const {
    check_obs(obs);
    ActionSample s;
    if (capture) s.trace.emplace();
    const Eigen::VectorXd mu = mean(obs, capture ? &*s.trace : nullptr);
    Eigen::VectorXd eps(mu.size());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = standard_normal(rng);
    s.action = mu + (log_std_.array().exp() * eps.array()).matrix();
    s.log_prob = gaussian_log_prob(mu, log_std_, s.action);
    s.value = value(obs);
    return s;
  }

  double log_prob(const Eigen::VectorXd& obs, const Eigen::VectorXd& action) const {
    if (static_cast<std::size_t>(action.size()) != action_dim()) throw ConfigError("action dimension mismatch");
    return gaussian_log_prob(mean(obs), log_std_, action);
  }

  /// Flat parameter vector: policy net, log_std, value net.
  std::size_t num_params() const noexcept {
    return net_.num_params() + static_cast<std::size_t>(log_std_.size()) + value_net_.num_params();
  }

  Eigen::VectorXd flat() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(num_params()));
    v << net_.params(), log_std_, value_net_.params();
    return v;
  }

  void set_flat(const Eigen::VectorXd& v) {
    if (static_cast<std::size_t>(v.size()) != num_params()) throw ConfigError("flat parameter size mismatch");
    const auto a = static_cast<Eigen::Index>(net_.num_params());
    const auto b = log_std_.size();
    net_.params() = v.head(a);
    log_std_ = v.segment(a, b);
    value_net_.params() = v.tail(static_cast<Eigen::Index>(value_net_.num_params()));
  }

  std::string digest() const {
    const Eigen::VectorXd v = flat();
    return Sha256().update(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double)).hex();
  }

 private:
  void check_obs(const Eigen::VectorXd& obs) const {
    if (static_cast<std::size_t>(obs.size()) != obs_dim())
      throw ConfigError("observation dim " + std::to_string(obs.size()) + " does not match policy input " +
                        std::to_string(obs_dim()));
    if (!obs.allFinite()) throw NumericalFault("non-finite observation", 0);
  }

  Mlp net_;
  Eigen::VectorXd log_std_;
  Mlp value_net_;
};

/// Checkpoint metadata. `side` is the player index the policy controls.
struct PolicyMeta {
  std::string env = "CorridorPass";
  std::size_t pose_dim = 0;
  std::size_t step = 0;
  std::string role = "victim";  // victim | adversary
  int side = 0;

  nlohmann::json to_json() const {
    return {{"env", env}, {"pose_dim", pose_dim}, {"step", step}, {"role", role}, {"side", side}};
  }
  static PolicyMeta from_json(const nlohmann::json& j) {
    PolicyMeta m;
    m.env = j.at("env").get<std::string>();
    m.pose_dim = j.at("pose_dim").get<std::size_t>();
    m.step = j.at("step").get<std::size_t>();
    m.role = j.at("role").get<std::string>();
    m.side = j.at("side").get<int>();
    return m;
  }
};

/// Immutable snapshot of a GaussianPolicy. Stochastic by default; the
/// deterministic flag makes it act with the mean.
class FrozenPolicy final : public ActionSampler {
 public:
  explicit FrozenPolicy(GaussianPolicy policy, PolicyMeta meta = {}, bool deterministic = false)
      : policy_(std::make_shared<const GaussianPolicy>(std::move(policy))), meta_(std::move(meta)),
        deterministic_(deterministic), digest_(policy_->digest()) {}

  std::size_t obs_dim() const override { return policy_->obs_dim(); }
  std::size_t action_dim() const override { return policy_->action_dim(); }

  Eigen::VectorXd sample(const Eigen::VectorXd& obs, Rng& rng) const override {
    return sample_traced(obs, rng, nullptr);
  }

  /// Same draw as sample() but also captures hidden activations. Only for
  /// forensics on the victim side, never handed to an attacker.
  Eigen::VectorXd sample_traced(const Eigen::VectorXd& obs, Rng& rng, ActivationTrace* trace) const {
    if (!obs.allFinite()) throw NumericalFault("non-finite observation", 0);
    Eigen::VectorXd mu = policy_->mean(obs, trace);
    if (deterministic_) return mu;
    for (Eigen::Index i = 0; i < mu.size(); ++i) mu(i) += std::exp(policy_->log_std()(i)) * standard_normal(rng);
    return mu;
  }

  const GaussianPolicy& policy() const noexcept { return *policy_; }
  const PolicyMeta& meta() const noexcept { return meta_; }
  bool deterministic() const noexcept { return deterministic_; }
  /// Digest taken at construction.
  const std::string& digest() const noexcept { return digest_; }

 private:
  std::shared_ptr<const GaussianPolicy> policy_;
  PolicyMeta meta_;
  bool deterministic_;
  std::string digest_;
};

/// A frozen policy tagged with the training step it was taken at.
struct PolicySnapshot {
  std::size_t step = 0;
  std::shared_ptr<const FrozenPolicy> policy;
};

enum class BaselineKind : std::uint8_t { Rand, Zero };

/// Exerts zero control.
class ZeroPolicy final : public ActionSampler {
 public:
  explicit ZeroPolicy(std::size_t action_dim) : action_dim_(action_dim) {}
  std::size_t obs_dim() const override { return 0; }
  std::size_t action_dim() const override { return action_dim_; }
  Eigen::VectorXd sample(const Eigen::VectorXd&, Rng&) const override {
    return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(action_dim_));
  }

 private:
  std::size_t action_dim_;
};

/// Uniform actions over the box [-1, 1]^d.
class RandPolicy final : public ActionSampler {
 public:
  explicit RandPolicy(std::size_t action_dim) : action_dim_(action_dim) {}
  std::size_t obs_dim() const override { return 0; }
  std::size_t action_dim() const override { return action_dim_; }
  Eigen::VectorXd sample(const Eigen::VectorXd&, Rng& rng) const override {
    Eigen::VectorXd a(static_cast<Eigen::Index>(action_dim_));
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = uniform(rng, -1.0, 1.0);
    return a;
  }

 private:
  std::size_t action_dim_;
};

inline SamplerPtr make_baseline(BaselineKind kind, std::size_t action_dim) {
  if (action_dim < 1) throw ConfigError("baseline action_dim must be >= 1");
  if (kind == BaselineKind::Zero) return std::make_shared<ZeroPolicy>(action_dim);
  return std::make_shared<RandPolicy>(action_dim);
}

/// Victim wrapper that sees a masked observation.
class MaskedPolicy final : public ActionSampler {
 public:
  MaskedPolicy(SamplerPtr inner, ObservationLayout layout, MaskSpec mask)
      : inner_(std::move(inner)), layout_(layout), mask_(std::move(mask)) {}
  std::size_t obs_dim() const override { return inner_->obs_dim(); }
  std::size_t action_dim() const override { return inner_->action_dim(); }
  Eigen::VectorXd sample(const Eigen::VectorXd& obs, Rng& rng) const override {
    return inner_->sample(apply_mask(layout_, obs, mask_), rng);
  }
  const ActionSampler& inner() const noexcept { return *inner_; }
  const MaskSpec& mask() const noexcept { return mask_; }

 private:
  SamplerPtr inner_;
  ObservationLayout layout_;
  MaskSpec mask_;
};

struct PolicyCheckpoint {
  GaussianPolicy policy;
  PolicyMeta meta;
};

inline constexpr std::uint32_t kPolicyFormatVersion = 1;

/// Binary policy checkpoint: "APOL", u32 version, metadata JSON (length
/// prefixed), policy MLP record, u64 n + f64 log_std[n], value MLP record.
inline void write_policy(std::ostream& os, const GaussianPolicy& p, const PolicyMeta& meta) {
  os.write("APOL", 4);
  binio::write<std::uint32_t>(os, kPolicyFormatVersion);
  binio::write_string(os, meta.to_json().dump());
  p.net().write_binary(os);
  binio::write<std::uint64_t>(os, static_cast<std::uint64_t>(p.log_std().size()));
  os.write(reinterpret_cast<const char*>(p.log_std().data()),
           static_cast<std::streamsize>(p.log_std().size() * sizeof(double)));
  p.value_net().write_binary(os);
}

inline PolicyCheckpoint read_policy(std::istream& is) {
  binio::expect_magic(is, "APOL");
  const auto version = binio::read<std::uint32_t>(is);
  if (version != kPolicyFormatVersion) throw ConfigError("unsupported policy format version");
  PolicyMeta meta = PolicyMeta::from_json(nlohmann::json::parse(binio::read_string(is)));
  Mlp net = Mlp::read_binary(is);
  const auto n = binio::read<std::uint64_t>(is);
  if (n != net.output_dim()) throw ConfigError("log_std length does not match policy output");
  Eigen::VectorXd log_std(static_cast<Eigen::Index>(n));
  is.read(reinterpret_cast<char*>(log_std.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw ConfigError("truncated policy record");
  Mlp value = Mlp::read_binary(is);
  return {GaussianPolicy(std::move(net), std::move(log_std), std::move(value)), meta};
}

inline void save_policy(const std::filesystem::path& path, const GaussianPolicy& p, const PolicyMeta& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  write_policy(os, p, meta);
}

inline PolicyCheckpoint load_policy(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("checkpoint not found: " + path.string());
  return read_policy(is);
}

}  // namespace advpol
