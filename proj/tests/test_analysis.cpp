#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "advpol/analysis/activations.hpp"
#include "advpol/analysis/gmm.hpp"
#include "advpol/analysis/tsne.hpp"
#include "synthetic.hpp"

using namespace advpol;
using namespace advpol::analysis;

namespace {

Eigen::MatrixXd gaussian_rows(std::size_t n, std::size_t d, Rng& rng) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = standard_normal(rng);
  return x;
}

double brute_dispersion(const Eigen::MatrixXd& x) {
  double s = 0.0;
  std::size_t pairs = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j, ++pairs) s += (x.row(i) - x.row(j)).norm();
  return s / static_cast<double>(pairs);
}

}  // namespace

TEST(Gmm, SingleComponentMatchesClosedForm) {
  Rng rng(1);
  Eigen::MatrixXd x = gaussian_rows(500, 3, rng);
  x.col(1) += 0.5 * x.col(0);
  x.col(2) = 3.0 * x.col(2).array() + 2.0;
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mu;
  const Eigen::MatrixXd cov = c.transpose() * c / 500.0;
  GmmFitOptions opt;
  opt.jitter = 0.0;
  const GmmModel full = fit_gmm(x, 1, CovarianceType::Full, opt);
  EXPECT_LT((full.means.row(0) - mu).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((full.chol[0] * full.chol[0].transpose() - cov).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(full.weights(0), 1.0, 1e-12);
  const GmmModel diag = fit_gmm(x, 1, CovarianceType::Diagonal, opt);
  EXPECT_LT((diag.variances.row(0).transpose() - cov.diagonal()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Gmm, RecoversThreeComponents) {
  Rng rng(2);
  const Eigen::Matrix<double, 3, 2> centers = (Eigen::Matrix<double, 3, 2>() << -6, 0, 0, 6, 6, -1).finished();
  const Eigen::Vector3d w(0.2, 0.3, 0.5);
  Eigen::MatrixXd x(3000, 2);
  for (Eigen::Index i = 0; i < 3000; ++i) {
    const double u = uniform01(rng);
    const int j = u < 0.2 ? 0 : (u < 0.5 ? 1 : 2);
    x.row(i) = centers.row(j) + Eigen::RowVector2d(standard_normal(rng), standard_normal(rng));
  }
  GmmFitOptions opt;
  opt.seed = 4;
  const GmmModel g = fit_gmm(x, 3, CovarianceType::Full, opt);
  for (int j = 0; j < 3; ++j) {
    Eigen::Index best = 0;
    (g.means.rowwise() - centers.row(j)).rowwise().norm().minCoeff(&best);
    EXPECT_NEAR(g.weights(best), w(j), 0.05);
    EXPECT_LT((g.means.row(best) - centers.row(j)).norm(), 0.2);
  }
}

TEST(Gmm, EmIsMonotoneAndResponsibilitiesNormalized) {
  advpol::testing::SyntheticMixture mix(6, 3, 11, 5.0);
  const Eigen::MatrixXd x = mix.sample(3000);
  for (auto cov : {CovarianceType::Full, CovarianceType::Diagonal}) {
    GmmFitOptions opt;
    opt.tol = 0.0;
    opt.max_iters = 60;
    opt.kmeans_iters = 1;
    const GmmModel g = fit_gmm(x, 6, cov, opt);
    ASSERT_GE(g.loglik_history.size(), 2u);
    for (std::size_t i = 1; i < g.loglik_history.size(); ++i)
      EXPECT_GE(g.loglik_history[i] - g.loglik_history[i - 1], -1e-9) << "iteration " << i;
    EXPECT_LT(g.max_responsibility_error, 1e-10);
  }
}

TEST(Gmm, FreeParameterCount) {
  EXPECT_EQ(GmmModel::free_parameters(2, 3, CovarianceType::Full), 19u);
  EXPECT_EQ(GmmModel::free_parameters(2, 3, CovarianceType::Diagonal), 13u);
  EXPECT_EQ(GmmModel::free_parameters(20, 128, CovarianceType::Full), 20u * (128 + 128 * 129 / 2) + 19);
}

TEST(Gmm, LogDensityMatchesHandCodedPdf) {
  GmmModel g;
  g.cov_type = CovarianceType::Full;
  g.weights = Eigen::Vector2d(0.3, 0.7);
  g.means = (Eigen::Matrix2d() << 0.0, 1.0, -2.0, 0.5).finished();
  const Eigen::Matrix2d s0 = (Eigen::Matrix2d() << 2.0, 0.3, 0.3, 1.0).finished();
  const Eigen::Matrix2d s1 = (Eigen::Matrix2d() << 0.5, -0.1, -0.1, 0.8).finished();
  g.chol = {s0.llt().matrixL(), s1.llt().matrixL()};
  auto pdf = [](const Eigen::Vector2d& x, const Eigen::Vector2d& m, const Eigen::Matrix2d& s) {
    const Eigen::Vector2d d = x - m;
    return std::exp(-0.5 * d.dot(s.inverse() * d)) / (2.0 * std::numbers::pi * std::sqrt(s.determinant()));
  };
  const Eigen::MatrixXd x = (Eigen::MatrixXd(3, 2) << 0.1, 0.2, -1.0, 1.5, 3.0, -2.0).finished();
  const Eigen::VectorXd ld = g.log_density(x);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const Eigen::Vector2d xi = x.row(i).transpose();
    const double expect =
        std::log(0.3 * pdf(xi, g.means.row(0).transpose(), s0) + 0.7 * pdf(xi, g.means.row(1).transpose(), s1));
    EXPECT_NEAR(ld(i), expect, 1e-12);
  }
  EXPECT_THROW(g.log_density(Eigen::MatrixXd::Zero(2, 3)), ConfigError);
}

TEST(Gmm, StandardNormalAtMean) {
  for (std::size_t d : {1u, 5u, 128u}) {
    GmmModel g;
    g.cov_type = CovarianceType::Diagonal;
    g.weights = Eigen::VectorXd::Ones(1);
    g.means = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(d));
    g.variances = Eigen::MatrixXd::Ones(1, static_cast<Eigen::Index>(d));
    EXPECT_NEAR(g.log_density(g.means)(0), -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi), 1e-10);
  }
}

TEST(Gmm, RejectsTooFewRows) {
  Rng rng(1);
  EXPECT_THROW(fit_gmm(gaussian_rows(50, 2, rng), 6, CovarianceType::Full, {}), ConfigError);
  EXPECT_THROW(covariance_type_from_string("spherical"), ConfigError);
  EXPECT_EQ(covariance_type_from_string("diag"), CovarianceType::Diagonal);
}

TEST(Gmm, SelectionPrefersTrueStructure) {
  advpol::testing::SyntheticMixture mix(5, 3, 21, 15.0);
  const Eigen::MatrixXd train = mix.sample(2500), val = mix.sample(800);
  GmmFitOptions opt;
  opt.seed = 2;
  const GmmSelection sel = select_gmm(train, val, {2, 5, 10}, {CovarianceType::Full, CovarianceType::Diagonal}, opt);
  EXPECT_EQ(sel.table.size(), 6u);
  EXPECT_EQ(sel.best.k(), 5u);
  EXPECT_EQ(sel.best.cov_type, CovarianceType::Full);
  EXPECT_EQ(std::count_if(sel.table.begin(), sel.table.end(), [](const SelectionRow& r) { return r.selected; }), 1);
  const auto summary = score_loglik(sel.best, val);
  EXPECT_LT(summary.ci_low, summary.mean);
  EXPECT_GT(summary.ci_high, summary.mean);
  EXPECT_EQ(summary.n, 800u);
}

TEST(Tsne, PerplexityCalibration) {
  Rng rng(3);
  const Eigen::MatrixXd x = gaussian_rows(200, 5, rng);
  for (double perp : {5.0, 30.0, 60.0}) {
    const ConditionalP c = conditional_probabilities(squared_distances(x), perp);
    for (Eigen::Index i = 0; i < 200; ++i) {
      EXPECT_NEAR(c.p.row(i).sum(), 1.0, 1e-12);
      EXPECT_EQ(c.p(i, i), 0.0);
      double h = 0.0;
      for (Eigen::Index j = 0; j < 200; ++j)
        if (c.p(i, j) > 0.0) h -= c.p(i, j) * std::log2(c.p(i, j));
      EXPECT_LT(std::abs(std::exp2(h) - perp) / perp, 1e-3);
    }
  }
  EXPECT_THROW(conditional_probabilities(squared_distances(x), 500.0), ConfigError);
}

TEST(Tsne, JointProbabilitiesAreSymmetric) {
  Rng rng(4);
  const Eigen::MatrixXd x = gaussian_rows(50, 3, rng);
  const Eigen::MatrixXd p = joint_probabilities(conditional_probabilities(squared_distances(x), 10.0).p);
  EXPECT_LT((p - p.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(p.sum() - p.diagonal().sum(), 1.0, 1e-12);
}

TEST(Tsne, KlGradientMatchesFiniteDifferences) {
  Rng rng(5);
  const Eigen::MatrixXd x = gaussian_rows(12, 4, rng);
  const Eigen::MatrixXd p = joint_probabilities(conditional_probabilities(squared_distances(x), 3.0).p);
  const Eigen::MatrixXd y0 = gaussian_rows(12, 2, rng);
  Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(y0.data(), y0.size());
  const DifferentiableLoss f = [&](const Eigen::VectorXd& t, Eigen::VectorXd* g) {
    const Eigen::MatrixXd y = Eigen::Map<const Eigen::MatrixXd>(t.data(), 12, 2);
    Eigen::MatrixXd gm;
    const double kl = tsne_kl(p, y, g ? &gm : nullptr);
    if (g) *g = Eigen::Map<const Eigen::VectorXd>(gm.data(), gm.size());
    return kl;
  };
  const auto rep = grad_check(theta, f, 1e-5);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(Tsne, SeparatesClustersAndReducesPerplexity) {
  advpol::testing::SyntheticMixture mix(3, 10, 6, 30.0);
  const Eigen::MatrixXd x = mix.sample(90);
  TsneConfig cfg;
  cfg.perplexity = 250.0;
  cfg.seed = 1;
  EXPECT_THROW(tsne(x, cfg), ConfigError);
  cfg.auto_reduce = true;
  std::vector<std::string> warnings;
  const TsneEmbedding e = tsne(x, cfg, [&](const std::string& w) { warnings.push_back(w); });
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_NEAR(e.perplexity, 89.0 / 3.0, 1e-12);
  EXPECT_EQ(e.coords.rows(), 90);
  EXPECT_EQ(e.coords.cols(), 2);
  EXPECT_LT(((e.row_perplexity.array() - e.perplexity).abs() / e.perplexity).maxCoeff(), 1e-3);
  // Every point sits closest to the embedded centroid of its own cluster.
  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(3, 2);
  for (Eigen::Index i = 0; i < 90; ++i) centroids.row(i % 3) += e.coords.row(i) / 30.0;
  for (Eigen::Index i = 0; i < 90; ++i) {
    Eigen::Index c = 0;
    (centroids.rowwise() - e.coords.row(i)).rowwise().squaredNorm().minCoeff(&c);
    EXPECT_EQ(c, i % 3) << "point " << i;
  }
  const TsneEmbedding again = tsne(x, cfg);
  EXPECT_EQ(again.coords, e.coords);
}

TEST(Dispersion, MatchesBruteForceAndIsInvariant) {
  Rng rng(7);
  const Eigen::MatrixXd x = gaussian_rows(700, 6, rng);
  const double d = dispersion(x);
  EXPECT_NEAR(d, brute_dispersion(x), 1e-9 * d);
  std::vector<int> perm(700);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  Eigen::MatrixXd shuffled(700, 6);
  for (int i = 0; i < 700; ++i) shuffled.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
  EXPECT_NEAR(dispersion(shuffled), d, 1e-9 * d);
  EXPECT_NEAR(dispersion(-2.5 * x), 2.5 * d, 1e-9 * d);
  EXPECT_NEAR(dispersion(x.rowwise() + Eigen::RowVectorXd::Constant(6, 100.0)), d, 1e-6 * d);
  EXPECT_EQ(dispersion(x.topRows(1)), 0.0);
}

namespace {

struct Recorded {
  PointMassGame game{[] {
    EnvConfig c;
    c.pose_dim = 2;
    return c;
  }()};
  std::shared_ptr<const FrozenPolicy> victim;
  SamplerPtr opponent;
  Recorded() {
    Rng rng(9);
    victim = std::make_shared<const FrozenPolicy>(GaussianPolicy(game.obs_dim(0), game.action_dim(0), rng));
    opponent = make_baseline(BaselineKind::Rand, game.action_dim(1));
  }
};

}  // namespace

TEST(Activations, RecordingReplaysExactly) {
  Recorded r;
  RecordOptions opt;
  opt.n_steps = 300;
  const auto ds = record_activations(r.game, *r.victim, 0, *r.opponent, {}, opt, 4);
  ASSERT_EQ(ds.size(), 300u);
  EXPECT_EQ(ds.width(), 128u);
  for (Eigen::Index i = 0; i < 300; ++i)
    EXPECT_EQ(activation_row(r.victim->policy(), ds.observations.row(i).transpose(), false),
              ds.rows.row(i).transpose());
  const auto again = record_activations(r.game, *r.victim, 0, *r.opponent, {}, opt, 4);
  EXPECT_EQ(again.rows, ds.rows);
  opt.include_value_net = true;
  EXPECT_EQ(record_activations(r.game, *r.victim, 0, *r.opponent, {}, opt, 4).width(), 256u);
  EXPECT_THROW(record_activations(r.game, *r.opponent, 0, *r.opponent, {}, opt, 4), ConfigError);
}

TEST(Activations, SplitAndRoundTrip) {
  Recorded r;
  RecordOptions opt;
  opt.n_steps = 100;
  auto ds = record_activations(r.game, *r.victim, 0, *r.opponent, {}, opt, 5);
  ds.victim = "V";
  ds.opponent = "Rand";
  const auto [train, val] = split_blocks(ds, 0.8);
  EXPECT_EQ(train.size(), 80u);
  EXPECT_EQ(val.size(), 20u);
  EXPECT_EQ(train.rows.row(79), ds.rows.row(79));
  EXPECT_EQ(val.rows.row(0), ds.rows.row(80));
  EXPECT_EQ(val.split, Split::Validation);

  const auto dir = std::filesystem::temp_directory_path() / "advpol_test_activations";
  std::filesystem::create_directories(dir);
  const auto paths = save_dataset(val, dir / "val");
  EXPECT_EQ(paths.size(), 3u);
  const auto back = load_dataset(dir / "val");
  EXPECT_EQ(back.rows, val.rows);
  EXPECT_EQ(back.observations, val.observations);
  EXPECT_EQ(back.opponent, "Rand");
  EXPECT_EQ(back.split, Split::Validation);
  EXPECT_THROW(load_dataset(dir / "missing"), ConfigError);
  std::filesystem::remove_all(dir);
}
