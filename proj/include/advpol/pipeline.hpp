#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "advpol/analysis/report.hpp"
#include "advpol/config.hpp"
#include "advpol/digest.hpp"
#include "advpol/eval.hpp"
#include "advpol/experiment.hpp"
#include "advpol/io.hpp"
#include "advpol/policy.hpp"
#include "advpol/rl.hpp"
#include "advpol/svg.hpp"

namespace advpol {

/// Shared state for one CLI command.
struct RunContext {
  ExperimentConfig config;
  std::filesystem::path out;
  bool deterministic = false;
  bool plots = true;
  std::string command;
  std::function<void(const std::string&)> log;

  void info(const std::string& s) const {
    if (log) log(s);
  }
  std::size_t threads() const { return deterministic ? 1 : config.threads; }
};

namespace detail {

inline io::RunManifest start_manifest(const RunContext& ctx) {
  io::RunManifest m;
  m.command = ctx.command;
  m.config = to_json(ctx.config);
  m.config_digest = sha256_hex(m.config.dump());
  m.seed = ctx.config.seed;
  m.deterministic = ctx.deterministic;
  return m;
}

inline std::string padded(std::size_t step) {
  std::string s = std::to_string(step);
  return std::string(s.size() < 10 ? 10 - s.size() : 0, '0') + s;
}

inline void save_checkpoint(io::ArtifactSink& sink, const std::string& rel, const FrozenPolicy& p) {
  sink.write_with(rel, [&](std::ostream& os) { write_policy(os, p.policy(), p.meta()); });
}

inline io::Table metrics_table(const std::vector<MetricsRow>& rows) {
  io::Table t{{"step", "win_rate", "policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl"}, {}};
  for (const auto& r : rows)
    t.rows.push_back({io::num(r.step), io::num(r.win_rate), io::num(r.policy_loss), io::num(r.value_loss),
                      io::num(r.entropy), io::num(r.clip_fraction), io::num(r.approx_kl)});
  return t;
}

inline io::Table curve_table(const std::vector<CurvePoint>& pts) {
  io::Table t{{"step", "win_rate", "ci_low", "ci_high"}, {}};
  for (const auto& p : pts)
    t.rows.push_back({io::num(p.step), io::num(p.win_rate), io::num(p.ci_low), io::num(p.ci_high)});
  return t;
}

inline SamplerPtr load_entrant(const EntrantSpec& e, const PointMassGame& game, int side) {
  if (e.baseline) return make_baseline(*e.baseline, game.action_dim(side));
  auto ck = load_policy(e.checkpoint);
  if (ck.policy.obs_dim() != game.obs_dim(side) || ck.policy.action_dim() != game.action_dim(side))
    throw ConfigError("checkpoint " + e.checkpoint + " does not fit side " + std::to_string(side) +
                      " of the configured environment");
  return std::make_shared<const FrozenPolicy>(std::move(ck.policy), ck.meta);
}

inline std::shared_ptr<const FrozenPolicy> load_victim(const std::string& path, const ExperimentConfig& cfg) {
  if (path.empty()) throw ConfigError("no victim checkpoint given (adversary.victim_checkpoint or --victim)");
  auto ck = load_policy(path);
  if (ck.meta.role != "victim")
    throw ConfigError("checkpoint " + path + " has role '" + ck.meta.role + "', expected 'victim'");
  if (ck.meta.side != cfg.victim_side)
    throw ConfigError("checkpoint " + path + " controls side " + std::to_string(ck.meta.side) +
                      " but adversary.victim_side is " + std::to_string(cfg.victim_side));
  if (ck.meta.env != to_string(cfg.env.name) || ck.meta.pose_dim != cfg.env.pose_dim)
    throw ConfigError("checkpoint " + path + " was trained on " + ck.meta.env + " with pose_dim " +
                      std::to_string(ck.meta.pose_dim) + ", config says " + std::string(to_string(cfg.env.name)) +
                      " with pose_dim " + std::to_string(cfg.env.pose_dim));
  return std::make_shared<const FrozenPolicy>(std::move(ck.policy), ck.meta);
}

inline io::Table grid_table(const ScoreGrid& g) {
  io::Table t{{"victim", "masked", "opponent", "n_episodes", "opponent_wins", "victim_wins", "ties",
               "opponent_win_rate", "ci_low", "ci_high", "mean_episode_length", "seed"},
              {}};
  for (const auto& c : g.cells)
    t.rows.push_back({c.victim, c.masked ? "true" : "false", c.opponent, io::num(c.stats.n_episodes),
                      io::num(c.stats.wins_opponent), io::num(c.stats.wins_victim), io::num(c.stats.ties),
                      io::num(c.stats.opponent_win_rate()), io::num(c.stats.opponent_ci.low),
                      io::num(c.stats.opponent_ci.high), io::num(c.stats.mean_episode_length),
                      std::to_string(c.stats.seed)});
  return t;
}

inline nlohmann::json grid_json(const ScoreGrid& g) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : g.cells)
    cells.push_back({{"victim", c.victim},
                     {"masked", c.masked},
                     {"opponent", c.opponent},
                     {"n_episodes", c.stats.n_episodes},
                     {"opponent_wins", c.stats.wins_opponent},
                     {"victim_wins", c.stats.wins_victim},
                     {"ties", c.stats.ties},
                     {"opponent_win_rate", c.stats.opponent_win_rate()},
                     {"ci_low", c.stats.opponent_ci.low},
                     {"ci_high", c.stats.opponent_ci.high},
                     {"mean_episode_length", c.stats.mean_episode_length},
                     {"seed", c.stats.seed}});
  return {{"victims", g.victims},
          {"opponents", g.opponents},
          {"mask_variants", g.mask_variants},
          {"n_episodes", g.n_episodes},
          {"seed", g.seed},
          {"cells", cells}};
}

inline std::string grid_svg(const ScoreGrid& g) {
  std::vector<std::string> rows;
  std::vector<std::vector<double>> vals;
  for (const auto& v : g.victims)
    for (bool m : g.mask_variants) {
      rows.push_back(m ? v + " (masked)" : v);
      std::vector<double> r;
      for (const auto& o : g.opponents) r.push_back(g.at(v, m, o).stats.opponent_win_rate());
      vals.push_back(std::move(r));
    }
  return svg::heatmap(rows, g.opponents, vals, "Opponent win rate (%)");
}

inline void write_grid(io::ArtifactSink& sink, const ScoreGrid& g, bool plots, const std::string& stem = "grid") {
  sink.write_text(stem + ".csv", grid_table(g).csv());
  sink.write_json(stem + ".json", grid_json(g));
  if (plots) sink.write_text(stem + ".svg", grid_svg(g));
}

}  // namespace detail

/// Self-play victim training: checkpoints and pools for both sides, metrics
/// per side, and the final policies as victim.apol / opponent.apol.
inline io::RunManifest cmd_train_victim(const RunContext& ctx) {
  auto m = detail::start_manifest(ctx);
  io::ArtifactSink sink(ctx.out, m);
  const auto& cfg = ctx.config;
  SelfPlayConfig sp = cfg.victim;
  sp.ppo.threads = ctx.threads();
  const std::uint64_t seed = derive_seed(cfg.seed, tag("victim"));
  m.seed_schedule["selfplay"] = seed;
  ctx.info("training victim by self-play for " + std::to_string(sp.ppo.total_steps) + " steps");
  std::size_t next_report = 0;
  auto res = train_selfplay(cfg.env, sp, seed, [&](std::size_t step) {
    if (step >= next_report) {
      ctx.info("  step " + std::to_string(step));
      next_report = step + sp.ppo.total_steps / 10;
    }
  });
  for (int p = 0; p < 2; ++p) {
    const std::string side = "side" + std::to_string(p);
    for (const auto& c : res.checkpoints[static_cast<std::size_t>(p)])
      detail::save_checkpoint(sink, "checkpoints/" + side + "_" + detail::padded(c.step) + ".apol", *c.policy);
    nlohmann::json pool = nlohmann::json::array();
    for (const auto& s : res.pools[static_cast<std::size_t>(p)].snapshots()) {
      const std::string rel = "pool/" + side + "_" + detail::padded(s.step) + ".apol";
      detail::save_checkpoint(sink, rel, *s.policy);
      pool.push_back({{"step", s.step}, {"path", rel}});
    }
    sink.write_json("pool/" + side + ".json", pool);
    sink.write_text("metrics_" + side + ".csv", detail::metrics_table(res.metrics[static_cast<std::size_t>(p)]).csv());
  }
  detail::save_checkpoint(sink, "victim.apol",
                          *res.checkpoints[static_cast<std::size_t>(cfg.victim_side)].back().policy);
  detail::save_checkpoint(sink, "opponent.apol",
                          *res.checkpoints[static_cast<std::size_t>(1 - cfg.victim_side)].back().policy);
  sink.finish();
  return m;
}

/// Attacks a frozen victim checkpoint; writes adversary checkpoints, metrics
/// and the win-rate curve over checkpoints.
inline io::RunManifest cmd_train_adversary(const RunContext& ctx, const std::string& victim_override = {}) {
  auto m = detail::start_manifest(ctx);
  const auto& cfg = ctx.config;
  const std::string victim_path = victim_override.empty() ? cfg.victim_checkpoint : victim_override;
  auto victim = detail::load_victim(victim_path, cfg);
  const std::string victim_file_digest = sha256_file(victim_path);
  std::optional<PolicyCheckpoint> resume;
  if (!cfg.resume.empty()) resume = load_policy(cfg.resume);
  m.config["adversary"]["victim_checkpoint"] = victim_path;
  m.config["adversary"]["victim_digest"] = victim_file_digest;
  io::ArtifactSink sink(ctx.out, m);

  AdversaryConfig ac = cfg.adversary;
  ac.ppo.threads = ctx.threads();
  const std::uint64_t seed = derive_seed(cfg.seed, tag("adversary"));
  m.seed_schedule["adversary"] = seed;
  ctx.info("training adversary for " + std::to_string(ac.ppo.total_steps) + " steps against " + victim_path);
  auto res = train_adversary(cfg.env, victim, cfg.victim_side, ac, seed, resume ? &*resume : nullptr);
  if (victim->policy().digest() != victim->digest() || sha256_file(victim_path) != victim_file_digest)
    throw NumericalFault("victim changed during the attack", res.steps);
  for (const auto& c : res.checkpoints)
    detail::save_checkpoint(sink, "checkpoints/adversary_" + detail::padded(c.step) + ".apol", *c.policy);
  detail::save_checkpoint(sink, "adversary.apol", *res.checkpoints.back().policy);
  sink.write_text("metrics.csv", detail::metrics_table(res.metrics).csv());

  const PointMassGame game(cfg.env);
  const std::uint64_t curve_seed = derive_seed(cfg.seed, tag("curve"));
  m.seed_schedule["curve"] = curve_seed;
  const auto curve =
      win_rate_curve(game, res.checkpoints, *victim, cfg.victim_side, MaskSpec{}, cfg.eval_episodes, curve_seed,
                     ctx.threads());
  sink.write_text("curve.csv", detail::curve_table(curve).csv());
  if (ctx.plots) {
    svg::Series s{"Adv", {}, {}, {}, {}};
    for (const auto& p : curve) {
      s.x.push_back(static_cast<double>(p.step));
      s.y.push_back(p.win_rate);
      s.lo.push_back(p.ci_low);
      s.hi.push_back(p.ci_high);
    }
    sink.write_text("curve.svg", svg::line_plot({s}, "Adversary win rate", "adversary steps", "win rate"));
  }
  ctx.info("final adversary win rate " + io::num(curve.back().win_rate));
  sink.finish();
  return m;
}

/// Score grid over configured victims and opponents, with Rand and Zero
/// always present and each mask variant as a separate victim row.
inline io::RunManifest cmd_evaluate(const RunContext& ctx) {
  auto m = detail::start_manifest(ctx);
  const auto& cfg = ctx.config;
  if (cfg.evaluate.victims.empty()) throw ConfigError("evaluate.victims must list at least one victim");
  const PointMassGame game(cfg.env);
  const int opp = 1 - cfg.victim_side;
  std::vector<Entrant> victims, opponents;
  for (const auto& v : cfg.evaluate.victims)
    victims.push_back({v.label, detail::load_entrant(v, game, cfg.victim_side)});
  for (const auto& o : cfg.evaluate.opponents) opponents.push_back({o.label, detail::load_entrant(o, game, opp)});
  if (opponents.empty()) opponents.push_back({kZeroLabel, make_baseline(BaselineKind::Zero, game.action_dim(opp))});
  io::ArtifactSink sink(ctx.out, m);
  const std::uint64_t seed = derive_seed(cfg.seed, tag("evaluate"));
  m.seed_schedule["grid"] = seed;
  const auto grid = build_score_grid(game, victims, cfg.victim_side, opponents, cfg.evaluate.masks,
                                     cfg.evaluate.n_episodes, seed, ctx.threads());
  detail::write_grid(sink, grid, ctx.plots);
  sink.finish();
  return m;
}

/// Activation forensics for one victim against the configured opponents.
inline io::RunManifest cmd_analyze(const RunContext& ctx, std::vector<EntrantSpec> extra_opponents = {},
                                   const std::string& victim_override = {}) {
  auto m = detail::start_manifest(ctx);
  const auto& cfg = ctx.config;
  const auto& a = cfg.analysis;
  const PointMassGame game(cfg.env);
  const int opp = 1 - cfg.victim_side;
  const std::string victim_path = victim_override.empty() ? a.victim : victim_override;
  auto victim = detail::load_victim(victim_path, cfg);
  if (a.normal.label.empty()) throw ConfigError("missing required key 'analysis.normal'");
  const Entrant normal{a.normal.label, detail::load_entrant(a.normal, game, opp)};
  std::vector<Entrant> opponents;
  auto specs = a.opponents;
  specs.insert(specs.end(), extra_opponents.begin(), extra_opponents.end());
  for (const auto& o : specs) opponents.push_back({o.label, detail::load_entrant(o, game, opp)});

  analysis::ReportConfig rc;
  rc.record.n_steps = a.n_steps;
  rc.record.include_value_net = a.include_value_net;
  rc.train_fraction = a.train_fraction;
  rc.k_list = a.k_list;
  rc.cov_types = a.cov_types;
  rc.gmm.max_iters = a.gmm_max_iters;
  rc.gmm.tol = a.gmm_tol;
  rc.gmm.n_init = a.gmm_inits;
  rc.tsne.perplexity = a.perplexity;
  rc.tsne.n_iters = a.tsne_iters;
  rc.tsne_points_per_opponent = a.tsne_points;
  const std::uint64_t seed = derive_seed(cfg.seed, tag("analysis"));
  m.seed_schedule["analysis"] = seed;
  ctx.info("recording activations and fitting " +
           std::to_string(rc.k_list.size() * rc.cov_types.size()) + " mixture models");
  const auto rep = analysis::activation_report(game, *victim, cfg.victim_side, normal, opponents, rc, seed);
  for (const auto& w : rep.warnings) ctx.info("warning: " + w);

  io::ArtifactSink sink(ctx.out, m);
  io::Table lik{{"opponent", "split", "mean_loglik", "ci_low", "ci_high", "n"}, {}};
  for (const auto& e : rep.likelihood)
    lik.rows.push_back({e.label, analysis::to_string(e.split), io::num(e.loglik.mean), io::num(e.loglik.ci_low),
                        io::num(e.loglik.ci_high), io::num(e.loglik.n)});
  sink.write_text("likelihood.csv", lik.csv());
  io::Table sel{{"k", "cov_type", "free_parameters", "train_loglik", "bic", "validation_loglik", "validation_se",
                 "iterations", "converged", "selected"},
                {}};
  for (const auto& r : rep.selection)
    sel.rows.push_back({io::num(r.k), analysis::to_string(r.cov_type), io::num(r.free_parameters),
                        io::num(r.train_loglik), io::num(r.bic), io::num(r.validation_loglik),
                        io::num(r.validation_se), io::num(r.iterations), r.converged ? "true" : "false",
                        r.selected ? "true" : "false"});
  sink.write_text("selection.csv", sel.csv());
  io::Table ts{{"opponent", "x", "y"}, {}};
  for (const auto& p : rep.tsne) ts.rows.push_back({p.label, io::num(p.x), io::num(p.y)});
  sink.write_text("tsne.csv", ts.csv());
  io::Table disp{{"opponent", "mean_pairwise_distance", "n"}, {}};
  for (const auto& d : rep.dispersion) disp.rows.push_back({d.label, io::num(d.mean_pairwise_distance), io::num(d.n)});
  sink.write_text("dispersion.csv", disp.csv());
  for (const auto& ds : rep.datasets) {
    const std::string stem = "datasets/" + ds.opponent + "_" + analysis::to_string(ds.split);
    for (const auto& p : analysis::save_dataset(ds, sink.root() / stem))
      sink.record(std::filesystem::relative(p, sink.root()).string());
  }
  sink.write_json("report.json", {{"normal", rep.normal_label},
                                  {"tsne_perplexity", rep.tsne_perplexity},
                                  {"tsne_kl", rep.tsne_kl},
                                  {"warnings", rep.warnings}});
  if (ctx.plots) {
    std::vector<std::string> labels;
    std::vector<double> v, lo, hi;
    for (const auto& e : rep.likelihood) {
      labels.push_back(e.split == analysis::Split::Validation ? e.label + " (val)" : e.label);
      v.push_back(e.loglik.mean);
      lo.push_back(e.loglik.ci_low);
      hi.push_back(e.loglik.ci_high);
    }
    sink.write_text("likelihood.svg", svg::bars(labels, v, lo, hi, "Mean log-likelihood of victim activations"));
    std::vector<std::string> tl;
    std::vector<double> tx, ty;
    for (const auto& p : rep.tsne) {
      tl.push_back(p.label);
      tx.push_back(p.x);
      ty.push_back(p.y);
    }
    sink.write_text("tsne.svg", svg::scatter(tl, tx, ty, "t-SNE of victim activations"));
  }
  sink.finish();
  return m;
}

inline TrialConfig trial_config(const RunContext& ctx) {
  TrialConfig t;
  t.victim = ctx.config.victim;
  t.adversary = ctx.config.adversary;
  t.victim.ppo.threads = ctx.threads();
  t.adversary.ppo.threads = ctx.threads();
  t.victim_index = ctx.config.victim_side;
  t.eval_episodes = ctx.config.eval_episodes;
  t.threads = ctx.threads();
  return t;
}

/// Victim and adversary per (pose_dim, seed); writes per-trial grids, the
/// sweep table and per-dimension medians.
inline io::RunManifest cmd_sweep_dim(const RunContext& ctx) {
  auto m = detail::start_manifest(ctx);
  const auto& cfg = ctx.config;
  io::ArtifactSink sink(ctx.out, m);
  for (auto s : cfg.sweep.seeds) m.seed_schedule["trial-" + std::to_string(s)] = s;
  const auto rows = dimensionality_sweep(
      cfg.env, cfg.sweep.pose_dims, cfg.sweep.seeds, trial_config(ctx),
      [&](const TrialResult& t) {
        const std::string dir = "trials/pose" + std::to_string(t.pose_dim) + "_seed" + std::to_string(t.seed) + "/";
        detail::save_checkpoint(sink, dir + "victim.apol", *t.victim);
        detail::save_checkpoint(sink, dir + "adversary.apol", *t.adversary);
        detail::write_grid(sink, t.grid, ctx.plots, dir + "grid");
        ctx.info("pose_dim " + std::to_string(t.pose_dim) + " seed " + std::to_string(t.seed) + ": adversary wins " +
                 io::num(t.grid.at("Victim", false, kAdvLabel).stats.opponent_win_rate()));
      });
  io::Table t{{"pose_dim", "seed", "adversary_win_rate", "ci_low", "ci_high", "normal_win_rate", "rand_win_rate",
               "zero_win_rate", "n_episodes"},
              {}};
  for (const auto& r : rows)
    t.rows.push_back({io::num(r.pose_dim), std::to_string(r.seed), io::num(r.adversary_win_rate), io::num(r.ci_low),
                      io::num(r.ci_high), io::num(r.normal_win_rate), io::num(r.rand_win_rate),
                      io::num(r.zero_win_rate), io::num(r.n_episodes)});
  sink.write_text("sweep.csv", t.csv());
  io::Table med{{"pose_dim", "median_adversary_win_rate", "median_normal_win_rate", "n_seeds"}, {}};
  svg::Series s{"median Adv", {}, {}, {}, {}};
  for (auto d : cfg.sweep.pose_dims) {
    std::vector<double> adv, normal;
    for (const auto& r : rows)
      if (r.pose_dim == d) {
        adv.push_back(r.adversary_win_rate);
        normal.push_back(r.normal_win_rate);
      }
    med.rows.push_back({io::num(d), io::num(median(adv)), io::num(median(normal)), io::num(adv.size())});
    s.x.push_back(static_cast<double>(d));
    s.y.push_back(median(adv));
  }
  sink.write_text("summary.csv", med.csv());
  if (ctx.plots) sink.write_text("sweep.svg", svg::line_plot({s}, "Adversary win rate by pose_dim", "pose_dim", "win rate"));
  sink.finish();
  return m;
}

}  // namespace advpol
