#pragma once

#include <yaml-cpp/yaml.h>
#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "advpol/analysis/gmm.hpp"
#include "advpol/envs.hpp"
#include "advpol/errors.hpp"
#include "advpol/policy.hpp"
#include "advpol/rl.hpp"

namespace advpol {

inline constexpr int kConfigVersion = 1;

/// A policy reference in a config: a checkpoint path or a baseline.
struct EntrantSpec {
  std::string label;
  std::string checkpoint;
  std::optional<BaselineKind> baseline;
};

struct EvaluateSpec {
  std::size_t n_episodes = 1000;
  std::vector<EntrantSpec> victims;
  std::vector<EntrantSpec> opponents;
  std::vector<bool> masks{false, true};
};

struct AnalysisSpec {
  std::string victim;
  EntrantSpec normal;
  std::vector<EntrantSpec> opponents;
  std::size_t n_steps = 5000;
  double train_fraction = 0.8;
  std::vector<std::size_t> k_list{5, 10, 20, 40, 80};
  std::vector<analysis::CovarianceType> cov_types{analysis::CovarianceType::Full,
                                                  analysis::CovarianceType::Diagonal};
  std::size_t gmm_max_iters = 100;
  double gmm_tol = 1e-3;
  std::size_t gmm_inits = 3;
  double perplexity = 250.0;
  std::size_t tsne_iters = 1000;
  std::size_t tsne_points = 100;
  bool include_value_net = false;
};

struct SweepSpec {
  std::vector<std::size_t> pose_dims{2, 8, 24};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

/// Parsed and validated experiment configuration.
struct ExperimentConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 0;
  EnvConfig env;
  SelfPlayConfig victim;
  AdversaryConfig adversary;
  int victim_side = 0;
  std::string victim_checkpoint;
  std::string resume;
  std::size_t eval_episodes = 1000;  // curves and sweep grids
  EvaluateSpec evaluate;
  AnalysisSpec analysis;
  SweepSpec sweep;
  std::size_t threads = 1;

  void validate() const;
};

namespace detail {

class YamlReader {
 public:
  explicit YamlReader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& at, const std::string& msg) const {
    const auto m = at.Mark();
    const std::string line = m.line >= 0 ? ":" + std::to_string(m.line + 1) : "";
    throw ConfigError(source_ + line + ": " + msg);
  }

  void only_keys(const YAML::Node& map, const std::string& prefix, const std::set<std::string>& allowed) const {
    if (!map.IsMap()) fail(map, "'" + prefix + "' must be a mapping");
    for (const auto& kv : map) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) fail(kv.first, "unknown key '" + join(prefix, key) + "'");
    }
  }

  template <class T>
  void read(const YAML::Node& map, const std::string& prefix, const std::string& key, T& out) const {
    const YAML::Node n = map[key];
    if (!n) return;
    convert(n, join(prefix, key), out);
  }

  template <class T>
  void require(const YAML::Node& map, const std::string& prefix, const std::string& key, T& out) const {
    if (!map[key]) fail(map, "missing required key '" + join(prefix, key) + "'");
    read(map, prefix, key, out);
  }

  static std::string join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
  }

  void convert(const YAML::Node& n, const std::string& name, std::size_t& out) const {
    long long v = 0;
    if (!n.IsScalar() || !YAML::convert<long long>::decode(n, v) || v < 0)
      fail(n, "key '" + name + "' expects a non-negative integer");
    out = static_cast<std::size_t>(v);
  }
  void convert(const YAML::Node& n, const std::string& name, int& out) const {
    if (!n.IsScalar() || !YAML::convert<int>::decode(n, out)) fail(n, "key '" + name + "' expects an integer");
  }
  void convert(const YAML::Node& n, const std::string& name, double& out) const {
    if (!n.IsScalar() || !YAML::convert<double>::decode(n, out)) fail(n, "key '" + name + "' expects a number");
  }
  void convert(const YAML::Node& n, const std::string& name, bool& out) const {
    if (!n.IsScalar() || !YAML::convert<bool>::decode(n, out)) fail(n, "key '" + name + "' expects true or false");
  }
  void convert(const YAML::Node& n, const std::string& name, std::string& out) const {
    if (!n.IsScalar()) fail(n, "key '" + name + "' expects a string");
    out = n.Scalar();
  }
  template <class T>
  void convert(const YAML::Node& n, const std::string& name, std::vector<T>& out) const {
    if (!n.IsSequence()) fail(n, "key '" + name + "' expects a list");
    out.clear();
    for (std::size_t i = 0; i < n.size(); ++i) {
      T v{};
      convert(n[i], name + "[" + std::to_string(i) + "]", v);
      out.push_back(v);
    }
  }
  void convert(const YAML::Node& n, const std::string& name, std::vector<bool>& out) const {
    if (!n.IsSequence()) fail(n, "key '" + name + "' expects a list");
    out.clear();
    for (std::size_t i = 0; i < n.size(); ++i) {
      bool v = false;
      convert(n[i], name + "[" + std::to_string(i) + "]", v);
      out.push_back(v);
    }
  }

  /// Runs f, re-raising its ConfigError at the node's line.
  template <class F>
  void at(const YAML::Node& n, F&& f) const {
    try {
      f();
    } catch (const ConfigError& e) {
      fail(n, e.what());
    }
  }

 private:
  std::string source_;
};

inline void read_ppo(const YamlReader& r, const YAML::Node& n, const std::string& p, PpoConfig& c) {
  r.only_keys(n, p,
              {"n_envs", "minibatches", "epochs", "learning_rate", "gamma", "gae_lambda", "clip_range", "vf_coef",
               "ent_coef", "max_grad_norm", "clip_value"});
  r.read(n, p, "n_envs", c.n_envs);
  r.read(n, p, "minibatches", c.minibatches);
  r.read(n, p, "epochs", c.epochs_per_update);
  r.read(n, p, "learning_rate", c.learning_rate);
  r.read(n, p, "gamma", c.gamma);
  r.read(n, p, "gae_lambda", c.gae_lambda);
  r.read(n, p, "clip_range", c.clip_range);
  r.read(n, p, "vf_coef", c.vf_coef);
  r.read(n, p, "ent_coef", c.ent_coef);
  r.read(n, p, "max_grad_norm", c.max_grad_norm);
  r.read(n, p, "clip_value", c.clip_value);
}

inline EntrantSpec read_entrant(const YamlReader& r, const YAML::Node& n, const std::string& p) {
  r.only_keys(n, p, {"label", "checkpoint", "baseline"});
  EntrantSpec e;
  r.require(n, p, "label", e.label);
  r.read(n, p, "checkpoint", e.checkpoint);
  if (n["baseline"]) {
    std::string b;
    r.read(n, p, "baseline", b);
    if (b == "rand" || b == "Rand")
      e.baseline = BaselineKind::Rand;
    else if (b == "zero" || b == "Zero")
      e.baseline = BaselineKind::Zero;
    else
      r.fail(n["baseline"], "key '" + p + ".baseline' must be rand or zero");
  }
  if (e.checkpoint.empty() == !e.baseline.has_value())
    r.fail(n, "'" + p + "' needs exactly one of checkpoint or baseline");
  return e;
}

inline std::vector<EntrantSpec> read_entrants(const YamlReader& r, const YAML::Node& n, const std::string& p) {
  if (!n.IsSequence()) r.fail(n, "key '" + p + "' expects a list");
  std::vector<EntrantSpec> out;
  for (std::size_t i = 0; i < n.size(); ++i) out.push_back(read_entrant(r, n[i], p + "[" + std::to_string(i) + "]"));
  return out;
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  if (version != kConfigVersion) throw ConfigError("unsupported config version " + std::to_string(version));
  env.validate();
  victim.ppo.validate();
  adversary.ppo.validate();
  if (victim_side != 0 && victim_side != 1) throw ConfigError("adversary.victim_side must be 0 or 1");
  if (eval_episodes == 0 || evaluate.n_episodes == 0) throw ConfigError("episode counts must be >= 1");
  if (evaluate.masks.empty()) throw ConfigError("evaluate.masks must not be empty");
  if (analysis.k_list.empty() || analysis.cov_types.empty()) throw ConfigError("analysis GMM grid must not be empty");
  for (auto k : analysis.k_list)
    if (k == 0) throw ConfigError("analysis.k_list entries must be >= 1");
  if (!(analysis.train_fraction > 0.0 && analysis.train_fraction < 1.0))
    throw ConfigError("analysis.train_fraction must lie in (0, 1)");
  if (!(analysis.perplexity > 0.0)) throw ConfigError("analysis.perplexity must be > 0");
  if (sweep.pose_dims.empty() || sweep.seeds.empty()) throw ConfigError("sweep lists must not be empty");
  for (std::size_t i = 1; i < sweep.pose_dims.size(); ++i)
    if (sweep.pose_dims[i] < sweep.pose_dims[i - 1]) throw ConfigError("sweep.pose_dims must be sorted ascending");
  if (threads == 0) throw ConfigError("threads must be >= 1");
}

/// Parses YAML text. Every key is checked against the schema; errors carry
/// `source:line` and the dotted key name.
inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  using detail::YamlReader;
  const YamlReader r(source);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  if (!root.IsMap()) throw ConfigError(source + ": top level must be a mapping");
  ExperimentConfig c;
  r.only_keys(root, "",
              {"version", "seed", "threads", "env", "ppo", "victim", "adversary", "evaluate", "analysis", "sweep"});
  r.require(root, "", "version", c.version);
  if (c.version != kConfigVersion)
    r.fail(root["version"], "unsupported config version " + std::to_string(c.version));
  r.read(root, "", "seed", c.seed);
  r.read(root, "", "threads", c.threads);

  if (!root["env"]) r.fail(root, "missing required key 'env'");
  {
    const YAML::Node n = root["env"];
    r.only_keys(n, "env",
                {"name", "pose_dim", "arena_scale", "time_limit", "dt", "max_speed", "accel", "pose_lag",
                 "contact_radius", "corridor_half_width", "blocker_speed_ratio", "force_noise", "action_squash",
                 "observe_opponent_velocity"});
    std::string name;
    r.require(n, "env", "name", name);
    r.at(n["name"], [&] { c.env.name = env_name_from_string(name); });
    r.read(n, "env", "pose_dim", c.env.pose_dim);
    r.read(n, "env", "arena_scale", c.env.arena_scale);
    r.read(n, "env", "time_limit", c.env.time_limit);
    r.read(n, "env", "dt", c.env.dt);
    r.read(n, "env", "max_speed", c.env.max_speed);
    r.read(n, "env", "accel", c.env.accel);
    r.read(n, "env", "pose_lag", c.env.pose_lag);
    r.read(n, "env", "contact_radius", c.env.contact_radius);
    r.read(n, "env", "corridor_half_width", c.env.corridor_half_width);
    r.read(n, "env", "blocker_speed_ratio", c.env.blocker_speed_ratio);
    r.read(n, "env", "force_noise", c.env.force_noise);
    r.read(n, "env", "observe_opponent_velocity", c.env.observe_opponent_velocity);
    if (n["action_squash"]) {
      std::string sq;
      r.read(n, "env", "action_squash", sq);
      if (sq == "clip")
        c.env.squash = ActionSquash::Clip;
      else if (sq == "tanh")
        c.env.squash = ActionSquash::Tanh;
      else
        r.fail(n["action_squash"], "key 'env.action_squash' must be clip or tanh");
    }
    r.at(n, [&] { c.env.validate(); });
  }

  PpoConfig shared;
  if (root["ppo"]) {
    detail::read_ppo(r, root["ppo"], "ppo", shared);
  }
  c.victim.ppo = shared;
  c.adversary.ppo = shared;
  c.victim.ppo.total_steps = 2'000'000;
  c.adversary.ppo.total_steps = 500'000;
  c.victim.ppo.batch_size = 512;
  c.adversary.ppo.batch_size = 512;
  if (root["victim"]) {
    const YAML::Node n = root["victim"];
    r.only_keys(n, "victim",
                {"total_steps", "batch_size", "pool_interval", "checkpoint_interval", "shaping_coef",
                 "shaping_fraction"});
    r.read(n, "victim", "total_steps", c.victim.ppo.total_steps);
    r.read(n, "victim", "batch_size", c.victim.ppo.batch_size);
    r.read(n, "victim", "pool_interval", c.victim.pool_interval);
    r.read(n, "victim", "checkpoint_interval", c.victim.checkpoint_interval);
    r.read(n, "victim", "shaping_coef", c.victim.shaping_coef);
    r.read(n, "victim", "shaping_fraction", c.victim.shaping_fraction);
    r.at(n, [&] {
      c.victim.ppo.validate();
      if (c.victim.pool_interval == 0 || c.victim.checkpoint_interval == 0)
        throw ConfigError("victim intervals must be >= 1");
    });
  }
  if (root["adversary"]) {
    const YAML::Node n = root["adversary"];
    r.only_keys(n, "adversary",
                {"total_steps", "batch_size", "checkpoint_interval", "victim_checkpoint", "victim_side", "resume",
                 "eval_episodes"});
    r.read(n, "adversary", "total_steps", c.adversary.ppo.total_steps);
    r.read(n, "adversary", "batch_size", c.adversary.ppo.batch_size);
    r.read(n, "adversary", "checkpoint_interval", c.adversary.checkpoint_interval);
    r.read(n, "adversary", "victim_checkpoint", c.victim_checkpoint);
    r.read(n, "adversary", "victim_side", c.victim_side);
    r.read(n, "adversary", "resume", c.resume);
    r.read(n, "adversary", "eval_episodes", c.eval_episodes);
    r.at(n, [&] {
      c.adversary.ppo.validate();
      if (c.adversary.checkpoint_interval == 0) throw ConfigError("adversary.checkpoint_interval must be >= 1");
    });
  }
  if (root["evaluate"]) {
    const YAML::Node n = root["evaluate"];
    r.only_keys(n, "evaluate", {"n_episodes", "victims", "opponents", "masks"});
    r.read(n, "evaluate", "n_episodes", c.evaluate.n_episodes);
    r.read(n, "evaluate", "masks", c.evaluate.masks);
    if (n["victims"]) c.evaluate.victims = detail::read_entrants(r, n["victims"], "evaluate.victims");
    if (n["opponents"]) c.evaluate.opponents = detail::read_entrants(r, n["opponents"], "evaluate.opponents");
  }
  if (root["analysis"]) {
    const YAML::Node n = root["analysis"];
    auto& a = c.analysis;
    r.only_keys(n, "analysis",
                {"victim", "normal", "opponents", "n_steps", "train_fraction", "k_list", "cov_types", "gmm_max_iters",
                 "gmm_tol", "gmm_inits", "perplexity", "tsne_iters", "tsne_points", "include_value_net"});
    r.read(n, "analysis", "victim", a.victim);
    if (n["normal"]) a.normal = detail::read_entrant(r, n["normal"], "analysis.normal");
    if (n["opponents"]) a.opponents = detail::read_entrants(r, n["opponents"], "analysis.opponents");
    r.read(n, "analysis", "n_steps", a.n_steps);
    r.read(n, "analysis", "train_fraction", a.train_fraction);
    r.read(n, "analysis", "k_list", a.k_list);
    if (n["cov_types"]) {
      std::vector<std::string> names;
      r.read(n, "analysis", "cov_types", names);
      a.cov_types.clear();
      for (std::size_t i = 0; i < names.size(); ++i)
        r.at(n["cov_types"][i], [&] { a.cov_types.push_back(analysis::covariance_type_from_string(names[i])); });
    }
    r.read(n, "analysis", "gmm_max_iters", a.gmm_max_iters);
    r.read(n, "analysis", "gmm_tol", a.gmm_tol);
    r.read(n, "analysis", "gmm_inits", a.gmm_inits);
    r.read(n, "analysis", "perplexity", a.perplexity);
    r.read(n, "analysis", "tsne_iters", a.tsne_iters);
    r.read(n, "analysis", "tsne_points", a.tsne_points);
    r.read(n, "analysis", "include_value_net", a.include_value_net);
  }
  if (root["sweep"]) {
    const YAML::Node n = root["sweep"];
    r.only_keys(n, "sweep", {"pose_dims", "seeds"});
    r.read(n, "sweep", "pose_dims", c.sweep.pose_dims);
    r.read(n, "sweep", "seeds", c.sweep.seeds);
  }
  c.victim.ppo.threads = c.threads;
  c.adversary.ppo.threads = c.threads;
  r.at(root, [&] { c.validate(); });
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path.string());
}

inline nlohmann::json to_json(const EntrantSpec& e) {
  nlohmann::json j{{"label", e.label}};
  if (e.baseline)
    j["baseline"] = *e.baseline == BaselineKind::Rand ? "rand" : "zero";
  else
    j["checkpoint"] = e.checkpoint;
  return j;
}

/// Canonical JSON form; its digest identifies the configuration.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  auto entrants = [](const std::vector<EntrantSpec>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : v) a.push_back(to_json(e));
    return a;
  };
  auto ppo = [](const PpoConfig& p) {
    return nlohmann::json{{"n_envs", p.n_envs},             {"minibatches", p.minibatches},
                          {"epochs", p.epochs_per_update},  {"learning_rate", p.learning_rate},
                          {"gamma", p.gamma},               {"gae_lambda", p.gae_lambda},
                          {"clip_range", p.clip_range},     {"vf_coef", p.vf_coef},
                          {"ent_coef", p.ent_coef},         {"max_grad_norm", p.max_grad_norm},
                          {"clip_value", p.clip_value}};
  };
  std::vector<std::string> cov;
  for (auto t : c.analysis.cov_types) cov.push_back(analysis::to_string(t));
  const auto& e = c.env;
  nlohmann::json j{
      {"version", c.version},
      {"seed", c.seed},
      {"env",
       {{"name", to_string(e.name)},
        {"pose_dim", e.pose_dim},
        {"arena_scale", e.arena_scale},
        {"time_limit", e.time_limit},
        {"dt", e.dt},
        {"max_speed", e.max_speed},
        {"accel", e.accel},
        {"pose_lag", e.pose_lag},
        {"contact_radius", e.contact_radius},
        {"corridor_half_width", e.corridor_half_width},
        {"blocker_speed_ratio", e.blocker_speed_ratio},
        {"force_noise", e.force_noise},
        {"action_squash", e.squash == ActionSquash::Clip ? "clip" : "tanh"},
        {"observe_opponent_velocity", e.observe_opponent_velocity}}},
      {"ppo", ppo(c.victim.ppo)},
      {"victim",
       {{"total_steps", c.victim.ppo.total_steps},
        {"batch_size", c.victim.ppo.batch_size},
        {"pool_interval", c.victim.pool_interval},
        {"checkpoint_interval", c.victim.checkpoint_interval},
        {"shaping_coef", c.victim.shaping_coef},
        {"shaping_fraction", c.victim.shaping_fraction}}},
      {"adversary",
       {{"total_steps", c.adversary.ppo.total_steps},
        {"batch_size", c.adversary.ppo.batch_size},
        {"checkpoint_interval", c.adversary.checkpoint_interval},
        {"victim_checkpoint", c.victim_checkpoint},
        {"victim_side", c.victim_side},
        {"resume", c.resume},
        {"eval_episodes", c.eval_episodes}}},
      {"evaluate",
       {{"n_episodes", c.evaluate.n_episodes},
        {"victims", entrants(c.evaluate.victims)},
        {"opponents", entrants(c.evaluate.opponents)},
        {"masks", c.evaluate.masks}}},
      {"analysis",
       {{"victim", c.analysis.victim},
        {"opponents", entrants(c.analysis.opponents)},
        {"n_steps", c.analysis.n_steps},
        {"train_fraction", c.analysis.train_fraction},
        {"k_list", c.analysis.k_list},
        {"cov_types", cov},
        {"gmm_max_iters", c.analysis.gmm_max_iters},
        {"gmm_tol", c.analysis.gmm_tol},
        {"gmm_inits", c.analysis.gmm_inits},
        {"perplexity", c.analysis.perplexity},
        {"tsne_iters", c.analysis.tsne_iters},
        {"tsne_points", c.analysis.tsne_points},
        {"include_value_net", c.analysis.include_value_net}}},
      {"sweep", {{"pose_dims", c.sweep.pose_dims}, {"seeds", c.sweep.seeds}}},
  };
  if (!c.analysis.normal.checkpoint.empty() || c.analysis.normal.baseline)
    j["analysis"]["normal"] = to_json(c.analysis.normal);
  return j;
}

}  // namespace advpol
