#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "advpol/analysis/activations.hpp"
#include "advpol/analysis/gmm.hpp"
#include "advpol/analysis/tsne.hpp"
#include "advpol/envs.hpp"
#include "advpol/eval.hpp"
#include "advpol/policy.hpp"

namespace advpol::analysis {

struct ReportConfig {
  RecordOptions record;
  double train_fraction = 0.8;
  std::vector<std::size_t> k_list{5, 10, 20, 40, 80};
  std::vector<CovarianceType> cov_types{CovarianceType::Full, CovarianceType::Diagonal};
  GmmFitOptions gmm;
  TsneConfig tsne;
  /// Rows per opponent fed to t-SNE, evenly spaced in time; 0 skips t-SNE.
  std::size_t tsne_points_per_opponent = 100;
};

struct LikelihoodEntry {
  std::string label;
  Split split = Split::Probe;
  LoglikSummary loglik;
};

struct DispersionEntry {
  std::string label;
  double mean_pairwise_distance = 0.0;
  std::size_t n = 0;
};

struct TsnePoint {
  std::string label;
  double x = 0.0;
  double y = 0.0;
};

struct ActivationReport {
  std::string normal_label;
  std::vector<LikelihoodEntry> likelihood;  // validation split first, then one per opponent
  std::vector<SelectionRow> selection;
  GmmModel model;
  std::vector<TsnePoint> tsne;
  double tsne_perplexity = 0.0;
  double tsne_kl = 0.0;
  std::vector<DispersionEntry> dispersion;  // normal opponent first
  std::vector<ActivationDataset> datasets;  // normal train, normal validation, then probes
  std::vector<std::string> warnings;

  const LikelihoodEntry& likelihood_of(const std::string& label, Split split = Split::Probe) const {
    for (const auto& e : likelihood)
      if (e.label == label && e.split == split) return e;
    throw ConfigError("no likelihood entry for '" + label + "'");
  }
  double dispersion_of(const std::string& label) const {
    for (const auto& e : dispersion)
      if (e.label == label) return e.mean_pairwise_distance;
    throw ConfigError("no dispersion entry for '" + label + "'");
  }
};

/// Records victim activations against the normal opponent and each probe
/// opponent, fits a GMM on the leading block of normal activations (selected
/// over the k / covariance grid by validation likelihood), scores the
/// held-out block and every opponent, and embeds a subsample with t-SNE.
inline ActivationReport activation_report(const PointMassGame& game, const FrozenPolicy& victim, int victim_index,
                                          const Entrant& normal, const std::vector<Entrant>& opponents,
                                          const ReportConfig& cfg, std::uint64_t seed) {
  ActivationReport rep;
  rep.normal_label = normal.label;
  auto record = [&](const Entrant& opp, std::size_t index) {
    ActivationDataset ds = record_activations(game, victim, victim_index, *opp.policy, MaskSpec{}, cfg.record,
                                              derive_seed(seed, tag("record"), index));
    ds.victim = victim.meta().role + "-side" + std::to_string(victim.meta().side);
    ds.opponent = opp.label;
    return ds;
  };

  const ActivationDataset normal_ds = record(normal, 0);
  auto [train, validation] = split_blocks(normal_ds, cfg.train_fraction);
  GmmFitOptions gopt = cfg.gmm;
  gopt.seed = derive_seed(seed, tag("gmm"));
  auto sel = select_gmm(train.rows, validation.rows, cfg.k_list, cfg.cov_types, gopt);
  rep.selection = sel.table;
  rep.model = std::move(sel.best);

  rep.likelihood.push_back({normal.label, Split::Validation, score_loglik(rep.model, validation.rows)});
  rep.dispersion.push_back({normal.label, dispersion(normal_ds.rows), normal_ds.size()});
  std::vector<const ActivationDataset*> for_tsne{&normal_ds};
  rep.datasets.push_back(std::move(train));
  rep.datasets.push_back(std::move(validation));
  rep.datasets.reserve(2 + opponents.size());
  for (std::size_t i = 0; i < opponents.size(); ++i) {
    ActivationDataset ds = record(opponents[i], i + 1);
    rep.likelihood.push_back({opponents[i].label, Split::Probe, score_loglik(rep.model, ds.rows)});
    rep.dispersion.push_back({opponents[i].label, dispersion(ds.rows), ds.size()});
    rep.datasets.push_back(std::move(ds));
  }
  for (std::size_t i = 2; i < rep.datasets.size(); ++i) for_tsne.push_back(&rep.datasets[i]);

  if (cfg.tsne_points_per_opponent > 0) {
    std::vector<std::string> labels;
    std::vector<Eigen::VectorXd> rows;
    for (const auto* ds : for_tsne) {
      const std::size_t m = std::min(cfg.tsne_points_per_opponent, ds->size());
      for (std::size_t j = 0; j < m; ++j) {
        const auto r = static_cast<Eigen::Index>(j * ds->size() / m);
        rows.push_back(ds->rows.row(r).transpose());
        labels.push_back(ds->opponent);
      }
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    TsneConfig tc = cfg.tsne;
    tc.auto_reduce = true;
    tc.seed = derive_seed(seed, tag("tsne"));
    const auto emb = tsne(x, tc, [&](const std::string& w) { rep.warnings.push_back(w); });
    rep.tsne_perplexity = emb.perplexity;
    rep.tsne_kl = emb.kl;
    for (std::size_t i = 0; i < labels.size(); ++i)
      rep.tsne.push_back({labels[i], emb.coords(static_cast<Eigen::Index>(i), 0),
                          emb.coords(static_cast<Eigen::Index>(i), 1)});
  }
  return rep;
}

}  // namespace advpol::analysis
