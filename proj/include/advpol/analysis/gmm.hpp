#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "advpol/errors.hpp"
#include "advpol/rng.hpp"

namespace advpol::analysis {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

enum class CovarianceType : std::uint8_t { Full, Diagonal };

inline std::string to_string(CovarianceType c) { return c == CovarianceType::Full ? "full" : "diagonal"; }

inline CovarianceType covariance_type_from_string(const std::string& s) {
  if (s == "full") return CovarianceType::Full;
  if (s == "diagonal" || s == "diag") return CovarianceType::Diagonal;
  throw ConfigError("unknown covariance type '" + s + "'");
}

/// Row-wise log-sum-exp of an n x k matrix.
inline Eigen::VectorXd logsumexp_rows(const Eigen::MatrixXd& a) {
  Eigen::VectorXd out(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double m = a.row(i).maxCoeff();
    out(i) = std::isfinite(m) ? m + std::log((a.row(i).array() - m).exp().sum()) : m;
  }
  return out;
}

/// Gaussian mixture. Full covariances are kept as lower Cholesky factors
/// (Sigma = L L^T); diagonal ones as per-dimension variances.
struct GmmModel {
  CovarianceType cov_type = CovarianceType::Full;
  Eigen::VectorXd weights;               // k
  Eigen::MatrixXd means;                 // k x d
  std::vector<Eigen::MatrixXd> chol;     // k factors, d x d (full)
  Eigen::MatrixXd variances;             // k x d (diagonal)

  // Fit metadata.
  std::size_t iterations = 0;
  bool converged = false;
  double jitter = 1e-6;
  std::size_t reseeds = 0;
  /// Mean per-row training log-likelihood at each E-step.
  std::vector<double> loglik_history;
  /// Largest deviation of an E-step responsibility row sum from 1.
  double max_responsibility_error = 0.0;

  std::size_t k() const noexcept { return static_cast<std::size_t>(weights.size()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(means.cols()); }
  double final_log_likelihood() const { return loglik_history.empty() ? -INFINITY : loglik_history.back(); }

  /// Free parameters: k-1 weights, k*d means, and k*d(d+1)/2 (full) or k*d
  /// (diagonal) covariance entries.
  static std::size_t free_parameters(std::size_t k, std::size_t d, CovarianceType c) {
    const std::size_t cov = c == CovarianceType::Full ? d * (d + 1) / 2 : d;
    return k * (d + cov) + (k - 1);
  }
  std::size_t free_parameters() const { return free_parameters(k(), dim(), cov_type); }

  /// n x k matrix of log(w_j) + log N(x_i | mu_j, Sigma_j); x are rows.
  Eigen::MatrixXd weighted_log_prob(const Eigen::MatrixXd& x) const {
    if (static_cast<std::size_t>(x.cols()) != dim())
      throw ConfigError("data dimension " + std::to_string(x.cols()) + " does not match model dimension " +
                        std::to_string(dim()));
    const auto n = x.rows();
    const auto d = static_cast<double>(dim());
    Eigen::MatrixXd out(n, static_cast<Eigen::Index>(k()));
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(k()); ++j) {
      Eigen::VectorXd maha(n);
      double log_det = 0.0;
      if (cov_type == CovarianceType::Full) {
        const Eigen::MatrixXd centered = (x.rowwise() - means.row(j)).transpose();
        const Eigen::MatrixXd z = chol[static_cast<std::size_t>(j)].triangularView<Eigen::Lower>().solve(centered);
        maha = z.colwise().squaredNorm().transpose();
        log_det = 2.0 * chol[static_cast<std::size_t>(j)].diagonal().array().log().sum();
      } else {
        const Eigen::RowVectorXd inv = variances.row(j).cwiseInverse();
        maha = ((x.rowwise() - means.row(j)).array().square().rowwise() * inv.array()).rowwise().sum().matrix();
        log_det = variances.row(j).array().log().sum();
      }
      out.col(j) = (std::log(weights(j)) - 0.5 * (d * kLog2Pi + log_det)) - 0.5 * maha.array();
    }
    return out;
  }

  /// Per-row mixture log density.
  Eigen::VectorXd log_density(const Eigen::MatrixXd& x) const { return logsumexp_rows(weighted_log_prob(x)); }
};

struct GmmFitOptions {
  std::size_t max_iters = 100;
  double tol = 1e-3;  // on the mean per-row log-likelihood
  double jitter = 1e-6;
  std::size_t kmeans_iters = 100;
  /// Independent initialisations; the fit with the best final training
  /// log-likelihood is kept.
  std::size_t n_init = 3;
  std::uint64_t seed = 0;
};

namespace detail {

/// Greedy k-means++ seeding (2 + ln k candidates per centre, keeping the one
/// that lowers the potential most) followed by Lloyd iterations; returns hard
/// labels.
inline std::vector<std::size_t> kmeans_labels(const Eigen::MatrixXd& x, std::size_t k, std::size_t iters, Rng& rng) {
  const auto n = x.rows();
  const auto trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  auto draw_index = [&](const Eigen::VectorXd& w) {
    const double total = w.sum();
    if (!(total > 0.0)) return std::min<Eigen::Index>(static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n)), n - 1);
    double r = uniform01(rng) * total;
    for (Eigen::Index i = 0; i < n; ++i) {
      r -= w(i);
      if (r < 0.0) return i;
    }
    return n - 1;
  };
  Eigen::MatrixXd centers(static_cast<Eigen::Index>(k), x.cols());
  Eigen::VectorXd best = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  centers.row(0) = x.row(draw_index(Eigen::VectorXd::Ones(n)));
  best = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (std::size_t c = 1; c < k; ++c) {
    Eigen::VectorXd chosen_dist;
    double chosen_pot = std::numeric_limits<double>::infinity();
    Eigen::Index chosen = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const Eigen::Index cand = draw_index(best);
      Eigen::VectorXd dist = best.cwiseMin((x.rowwise() - x.row(cand)).rowwise().squaredNorm());
      const double pot = dist.sum();
      if (pot < chosen_pot) {
        chosen_pot = pot;
        chosen = cand;
        chosen_dist = std::move(dist);
      }
    }
    centers.row(static_cast<Eigen::Index>(c)) = x.row(chosen);
    best = std::move(chosen_dist);
  }
  std::vector<std::size_t> labels(static_cast<std::size_t>(n), 0);
  for (std::size_t it = 0; it <= iters; ++it) {
    // assignment
    const Eigen::VectorXd cn = centers.rowwise().squaredNorm();
    const Eigen::MatrixXd cross = x * centers.transpose();
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index arg = 0;
      (cn.transpose() - 2.0 * cross.row(i)).minCoeff(&arg);
      if (labels[static_cast<std::size_t>(i)] != static_cast<std::size_t>(arg)) changed = true;
      labels[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arg);
    }
    if (it == iters || (!changed && it > 0)) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(centers.rows(), centers.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(centers.rows());
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])) += x.row(i);
      counts(static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])) += 1.0;
    }
    for (Eigen::Index c = 0; c < centers.rows(); ++c)
      if (counts(c) > 0) centers.row(c) = sums.row(c) / counts(c);
  }
  return labels;
}

/// M-step from responsibilities (n x k).
inline void m_step(GmmModel& g, const Eigen::MatrixXd& x, const Eigen::MatrixXd& resp) {
  const auto n = static_cast<double>(x.rows());
  const auto d = x.cols();
  const auto k = resp.cols();
  const Eigen::VectorXd nk = resp.colwise().sum().transpose();
  g.weights = nk / n;
  g.means.resize(k, d);
  for (Eigen::Index j = 0; j < k; ++j) g.means.row(j) = (resp.col(j).transpose() * x) / std::max(nk(j), 1e-300);
  if (g.cov_type == CovarianceType::Full) {
    g.chol.resize(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::MatrixXd c = x.rowwise() - g.means.row(j);
      Eigen::MatrixXd cov = (c.array().colwise() * resp.col(j).array()).matrix().transpose() * c;
      cov /= std::max(nk(j), 1e-300);
      cov.diagonal().array() += g.jitter;
      Eigen::LLT<Eigen::MatrixXd> llt(cov);
      if (llt.info() != Eigen::Success) throw NumericalFault("covariance not positive definite", g.iterations);
      g.chol[static_cast<std::size_t>(j)] = llt.matrixL();
    }
  } else {
    g.variances.resize(k, d);
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::MatrixXd c = x.rowwise() - g.means.row(j);
      g.variances.row(j) =
          (c.array().square().colwise() * resp.col(j).array()).colwise().sum() / std::max(nk(j), 1e-300);
      g.variances.row(j).array() += g.jitter;
    }
  }
}

inline GmmModel fit_once(const Eigen::MatrixXd& x, std::size_t k, CovarianceType cov_type, const GmmFitOptions& opt,
                         std::size_t init) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (k < 1) throw ConfigError("GMM needs k >= 1");
  if (n < 10 * k) throw ConfigError("GMM fit needs at least 10*k rows (" + std::to_string(n) + " < " +
                                    std::to_string(10 * k) + ")");
  Rng rng(derive_seed(opt.seed, tag("gmm"), k, static_cast<std::uint64_t>(cov_type), init));
  GmmModel g;
  g.cov_type = cov_type;
  g.jitter = opt.jitter;

  const auto labels = detail::kmeans_labels(x, k, opt.kmeans_iters, rng);
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(x.rows(), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < n; ++i) resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i])) = 1.0;
  // Empty k-means clusters get a uniform sliver so the first M-step is defined.
  for (Eigen::Index j = 0; j < resp.cols(); ++j)
    if (resp.col(j).sum() == 0.0) resp.col(j).setConstant(1.0 / static_cast<double>(n));
  detail::m_step(g, x, resp);

  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    const Eigen::MatrixXd wlp = g.weighted_log_prob(x);
    const Eigen::VectorXd lse = logsumexp_rows(wlp);
    const double ll = lse.mean();
    if (!std::isfinite(ll)) throw NumericalFault("non-finite GMM log-likelihood", it);
    g.loglik_history.push_back(ll);
    resp = (wlp.colwise() - lse).array().exp().matrix();
    g.max_responsibility_error =
        std::max(g.max_responsibility_error, (resp.rowwise().sum().array() - 1.0).abs().maxCoeff());
    if (ll - prev < opt.tol && it > 0) {
      g.converged = true;
      break;
    }
    prev = ll;

    const Eigen::VectorXd nk = resp.colwise().sum().transpose();
    for (Eigen::Index j = 0; j < nk.size(); ++j) {
      if (nk(j) / static_cast<double>(n) >= 1e-8) continue;
      if (g.reseeds > 0) throw NumericalFault("GMM component collapsed twice", it);
      ++g.reseeds;
      Eigen::Index worst = 0;
      lse.minCoeff(&worst);
      resp.col(j).setZero();
      resp(worst, j) = 1.0;
      // A lone point would give a zero covariance; borrow its neighbours by
      // sharing the row's responsibility with the nearest rows.
      const Eigen::VectorXd dist = (x.rowwise() - x.row(worst)).rowwise().squaredNorm();
      std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
      for (Eigen::Index i = 0; i < x.rows(); ++i) order[static_cast<std::size_t>(i)] = i;
      const std::size_t take = std::min<std::size_t>(n, std::max<std::size_t>(x.cols() + 1, 10));
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                        [&](Eigen::Index a, Eigen::Index b) { return dist(a) < dist(b); });
      for (std::size_t t = 0; t < take; ++t) resp(order[t], j) = 1.0;
    }
    detail::m_step(g, x, resp);
    g.iterations = it + 1;
  }
  return g;
}

}  // namespace detail

/// EM for a Gaussian mixture from a k-means++ initialisation. Stops when the
/// mean per-row log-likelihood improves by less than tol, or at max_iters. A
/// component whose weight drops below 1e-8 is re-seeded once at the worst
/// explained row; a second collapse is a NumericalFault.
inline GmmModel fit_gmm(const Eigen::MatrixXd& x, std::size_t k, CovarianceType cov_type,
                        const GmmFitOptions& opt = {}) {
  GmmModel best = detail::fit_once(x, k, cov_type, opt, 0);
  for (std::size_t i = 1; i < opt.n_init; ++i) {
    GmmModel g = detail::fit_once(x, k, cov_type, opt, i);
    if (g.final_log_likelihood() > best.final_log_likelihood()) best = std::move(g);
  }
  return best;
}

struct LoglikSummary {
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n = 0;
};

/// Mean per-row log-likelihood with a normal-approximation 95% interval.
inline LoglikSummary summarize_loglik(const Eigen::VectorXd& per_row) {
  LoglikSummary s;
  s.n = static_cast<std::size_t>(per_row.size());
  if (s.n == 0) return s;
  s.mean = per_row.mean();
  const double var = s.n > 1 ? (per_row.array() - s.mean).square().sum() / static_cast<double>(s.n - 1) : 0.0;
  const double half = 1.959963984540054 * std::sqrt(var / static_cast<double>(s.n));
  s.ci_low = s.mean - half;
  s.ci_high = s.mean + half;
  return s;
}

inline LoglikSummary score_loglik(const GmmModel& model, const Eigen::MatrixXd& probe) {
  return summarize_loglik(model.log_density(probe));
}

struct SelectionRow {
  std::size_t k = 0;
  CovarianceType cov_type = CovarianceType::Full;
  std::size_t free_parameters = 0;
  double train_loglik = 0.0;       // mean per row
  double bic = 0.0;
  double validation_loglik = 0.0;  // mean per row
  double validation_se = 0.0;      // standard error of the paired difference to the best model
  std::size_t iterations = 0;
  bool converged = false;
  bool selected = false;
};

struct GmmSelection {
  GmmModel best;
  std::vector<SelectionRow> table;
};

/// BIC = p ln n - 2 ln L on the training rows.
inline double bic(const GmmModel& m, const Eigen::MatrixXd& train) {
  const double n = static_cast<double>(train.rows());
  const double total = m.log_density(train).sum();
  return static_cast<double>(m.free_parameters()) * std::log(n) - 2.0 * total;
}

/// Fits every (k, covariance type) pair and selects by mean validation
/// log-likelihood. Models within two standard errors (of the paired per-row
/// difference) of the best validation score count as tied; among tied models
/// the lowest BIC wins.
inline GmmSelection select_gmm(const Eigen::MatrixXd& train, const Eigen::MatrixXd& validation,
                               const std::vector<std::size_t>& k_list,
                               const std::vector<CovarianceType>& cov_types, const GmmFitOptions& opt = {}) {
  if (k_list.empty() || cov_types.empty()) throw ConfigError("GMM selection grid is empty");
  std::vector<GmmModel> models;
  std::vector<Eigen::VectorXd> val_rows;
  GmmSelection sel;
  for (auto c : cov_types) {
    for (auto k : k_list) {
      GmmModel m = fit_gmm(train, k, c, opt);
      SelectionRow row;
      row.k = k;
      row.cov_type = c;
      row.free_parameters = m.free_parameters();
      row.train_loglik = m.log_density(train).mean();
      row.bic = bic(m, train);
      val_rows.push_back(m.log_density(validation));
      row.validation_loglik = val_rows.back().mean();
      row.iterations = m.iterations;
      row.converged = m.converged;
      sel.table.push_back(row);
      models.push_back(std::move(m));
    }
  }
  std::size_t best_val = 0;
  for (std::size_t i = 1; i < sel.table.size(); ++i)
    if (sel.table[i].validation_loglik > sel.table[best_val].validation_loglik) best_val = i;
  std::size_t chosen = best_val;
  for (std::size_t i = 0; i < sel.table.size(); ++i) {
    const Eigen::VectorXd diff = val_rows[best_val] - val_rows[i];
    const double nn = static_cast<double>(diff.size());
    const double var = nn > 1 ? (diff.array() - diff.mean()).square().sum() / (nn - 1.0) : 0.0;
    sel.table[i].validation_se = std::sqrt(var / nn);
    const bool tied = diff.mean() <= 2.0 * sel.table[i].validation_se;
    if (tied && sel.table[i].bic < sel.table[chosen].bic) chosen = i;
  }
  sel.table[chosen].selected = true;
  sel.best = std::move(models[chosen]);
  return sel;
}

}  // namespace advpol::analysis
