#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "advpol/binio.hpp"
#include "advpol/envs.hpp"
#include "advpol/errors.hpp"
#include "advpol/eval.hpp"
#include "advpol/policy.hpp"
#include "advpol/rng.hpp"

namespace advpol::analysis {

enum class Split : std::uint8_t { Train, Validation, Probe };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Probe: return "probe";
  }
  return "probe";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "validation") return Split::Validation;
  if (s == "probe") return Split::Probe;
  throw ConfigError("unknown split '" + s + "'");
}

/// Victim activations, one row per victim decision in time order, together
/// with the observation that produced each row.
struct ActivationDataset {
  Eigen::MatrixXd rows;          // n x width
  Eigen::MatrixXd observations;  // n x obs_dim
  std::string victim;
  std::string opponent;
  Split split = Split::Probe;
  std::uint64_t seed = 0;
  bool includes_value_net = false;

  std::size_t size() const noexcept { return static_cast<std::size_t>(rows.rows()); }
  std::size_t width() const noexcept { return static_cast<std::size_t>(rows.cols()); }
};

struct RecordOptions {
  std::size_t n_steps = 20000;
  /// Append the value network's hidden layers after the policy network's.
  bool include_value_net = false;
};

/// Concatenated hidden activations for one observation.
inline Eigen::VectorXd activation_row(const GaussianPolicy& policy, const Eigen::VectorXd& obs,
                                      bool include_value_net) {
  ActivationTrace pi;
  policy.mean(obs, &pi);
  if (!include_value_net) return pi.concatenated();
  ActivationTrace vf;
  policy.value_net().forward(obs, &vf);
  const Eigen::VectorXd a = pi.concatenated();
  const Eigen::VectorXd b = vf.concatenated();
  Eigen::VectorXd out(a.size() + b.size());
  out << a, b;
  return out;
}

/// Plays episodes of `victim` against `opponent` until n_steps victim
/// decisions are captured. The victim must be a FrozenPolicy; any other
/// sampler cannot expose activations.
inline ActivationDataset record_activations(const PointMassGame& game, const ActionSampler& victim, int victim_index,
                                            const ActionSampler& opponent, const MaskSpec& mask,
                                            const RecordOptions& opt, std::uint64_t seed) {
  const auto* frozen = dynamic_cast<const FrozenPolicy*>(&victim);
  if (frozen == nullptr) throw ConfigError("victim does not support activation capture");
  const int opp = 1 - victim_index;
  if (frozen->obs_dim() != game.obs_dim(victim_index) || frozen->action_dim() != game.action_dim(victim_index))
    throw ConfigError("victim shape does not match the environment");
  if (opponent.action_dim() != game.action_dim(opp)) throw ConfigError("opponent action dim does not match");

  const auto n = static_cast<Eigen::Index>(opt.n_steps);
  const auto width = static_cast<Eigen::Index>(
      activation_row(frozen->policy(), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(frozen->obs_dim())),
                     opt.include_value_net)
          .size());
  ActivationDataset ds;
  ds.rows.resize(n, width);
  ds.observations.resize(n, static_cast<Eigen::Index>(frozen->obs_dim()));
  ds.seed = seed;
  ds.includes_value_net = opt.include_value_net;

  const std::uint64_t stream = derive_seed(seed, tag("activations"));
  Eigen::Index row = 0;
  for (std::size_t e = 0; row < n; ++e) {
    Rng opp_rng(derive_seed(stream, tag("opponent"), e));
    Rng vic_rng(derive_seed(stream, tag("victim"), e));
    GameState s = game.reset(eval_episode_id(stream, e));
    while (!is_terminal(s.status) && row < n) {
      const Eigen::VectorXd obs = game.observe(s, victim_index, mask);
      ActivationTrace trace;
      const Eigen::VectorXd a_vic = frozen->sample_traced(obs, vic_rng, &trace);
      ds.observations.row(row) = obs.transpose();
      if (opt.include_value_net)
        ds.rows.row(row) = activation_row(frozen->policy(), obs, true).transpose();
      else
        ds.rows.row(row) = trace.concatenated().transpose();
      ++row;
      const Eigen::VectorXd a_opp = opponent.sample(game.observe(s, opp), opp_rng);
      s = victim_index == 0 ? game.step(s, a_vic, a_opp) : game.step(s, a_opp, a_vic);
    }
  }
  return ds;
}

/// Splits a dataset into a leading train block and a trailing validation
/// block, so temporally adjacent rows stay together.
inline std::pair<ActivationDataset, ActivationDataset> split_blocks(const ActivationDataset& ds,
                                                                    double train_fraction = 0.8) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  const auto n = static_cast<Eigen::Index>(ds.size());
  const auto cut = static_cast<Eigen::Index>(static_cast<double>(n) * train_fraction);
  if (cut < 1 || cut >= n) throw ConfigError("dataset too small to split");
  ActivationDataset train = ds;
  ActivationDataset val = ds;
  train.rows = ds.rows.topRows(cut);
  train.observations = ds.observations.topRows(cut);
  train.split = Split::Train;
  val.rows = ds.rows.bottomRows(n - cut);
  val.observations = ds.observations.bottomRows(n - cut);
  val.split = Split::Validation;
  return {std::move(train), std::move(val)};
}

/// Mean Euclidean distance over all unordered pairs of rows.
inline double dispersion(const Eigen::MatrixXd& x) {
  const auto n = x.rows();
  if (n < 2) return 0.0;
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  constexpr Eigen::Index kBlock = 512;
  double total = 0.0;
  for (Eigen::Index b = 0; b < n; b += kBlock) {
    const Eigen::Index m = std::min(kBlock, n - b);
    const Eigen::MatrixXd cross = x.middleRows(b, m) * x.transpose();
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = b + i + 1; j < n; ++j)
        total += std::sqrt(std::max(0.0, sq(b + i) + sq(j) - 2.0 * cross(i, j)));
  }
  return total / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

// Binary matrix: magic "AMAT", u32 version, u64 rows, u64 cols, then
// row-major little-endian doubles.
inline constexpr std::uint32_t kMatrixVersion = 1;

inline void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  os.write("AMAT", 4);
  binio::write(os, kMatrixVersion);
  binio::write(os, static_cast<std::uint64_t>(m.rows()));
  binio::write(os, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) binio::write(os, m(i, j));
}

inline Eigen::MatrixXd read_matrix(std::istream& is) {
  binio::expect_magic(is, "AMAT");
  const auto version = binio::read<std::uint32_t>(is);
  if (version != kMatrixVersion) throw ConfigError("unsupported matrix version " + std::to_string(version));
  const auto r = binio::read<std::uint64_t>(is);
  const auto c = binio::read<std::uint64_t>(is);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = binio::read<double>(is);
  return m;
}

inline nlohmann::json sidecar(const ActivationDataset& ds) {
  return {{"format", "advpol-activations"},
          {"version", kMatrixVersion},
          {"victim", ds.victim},
          {"opponent", ds.opponent},
          {"split", to_string(ds.split)},
          {"seed", ds.seed},
          {"rows", ds.size()},
          {"cols", ds.width()},
          {"obs_dim", ds.observations.cols()},
          {"includes_value_net", ds.includes_value_net}};
}

/// Writes <stem>.bin (activations), <stem>.obs.bin (observations) and
/// <stem>.json (sidecar). Returns the paths written.
inline std::vector<std::filesystem::path> save_dataset(const ActivationDataset& ds, const std::filesystem::path& stem) {
  std::vector<std::filesystem::path> out{stem.string() + ".bin", stem.string() + ".obs.bin", stem.string() + ".json"};
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  {
    std::ofstream f(out[0], std::ios::binary);
    write_matrix(f, ds.rows);
  }
  {
    std::ofstream f(out[1], std::ios::binary);
    write_matrix(f, ds.observations);
  }
  std::ofstream f(out[2]);
  f << sidecar(ds).dump(2) << '\n';
  for (const auto& p : out)
    if (!std::filesystem::exists(p)) throw ConfigError("could not write " + p.string());
  return out;
}

inline ActivationDataset load_dataset(const std::filesystem::path& stem) {
  const std::filesystem::path bin = stem.string() + ".bin";
  const std::filesystem::path obs = stem.string() + ".obs.bin";
  const std::filesystem::path js = stem.string() + ".json";
  for (const auto& p : {bin, obs, js})
    if (!std::filesystem::exists(p)) throw ConfigError("dataset file not found: " + p.string());
  ActivationDataset ds;
  {
    std::ifstream f(bin, std::ios::binary);
    ds.rows = read_matrix(f);
  }
  {
    std::ifstream f(obs, std::ios::binary);
    ds.observations = read_matrix(f);
  }
  std::ifstream f(js);
  const auto meta = nlohmann::json::parse(f);
  ds.victim = meta.at("victim").get<std::string>();
  ds.opponent = meta.at("opponent").get<std::string>();
  ds.split = split_from_string(meta.at("split").get<std::string>());
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.includes_value_net = meta.value("includes_value_net", false);
  return ds;
}

}  // namespace advpol::analysis
