#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>

#include "advpol/errors.hpp"
#include "advpol/rng.hpp"

namespace advpol::analysis {

struct TsneConfig {
  double perplexity = 250.0;
  std::size_t n_iters = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  std::size_t exaggeration_iters = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  std::size_t momentum_switch = 250;
  /// Reduce an infeasible perplexity to (n-1)/3 instead of failing.
  bool auto_reduce = false;
  std::uint64_t seed = 0;
};

struct ConditionalP {
  Eigen::MatrixXd p;           // row-stochastic, zero diagonal
  Eigen::VectorXd beta;        // precision 1/(2 sigma^2) per row
  Eigen::VectorXd perplexity;  // achieved 2^H per row
};

/// Largest perplexity usable with n points.
inline double max_perplexity(std::size_t n) { return n < 2 ? 0.0 : static_cast<double>(n - 1) / 3.0; }

/// Squared Euclidean distances between rows.
inline Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Eigen::MatrixXd d = (-2.0 * x * x.transpose()).colwise() + sq;
  d.rowwise() += sq.transpose();
  d = d.cwiseMax(0.0);
  d.diagonal().setZero();
  return d;
}

/// Per-row Gaussian conditionals calibrated by bisection on the precision so
/// that each row's perplexity matches the target to within tol (relative).
inline ConditionalP conditional_probabilities(const Eigen::MatrixXd& d2, double perplexity, double tol = 1e-5,
                                              std::size_t max_steps = 200) {
  const auto n = d2.rows();
  if (perplexity <= 0.0 || perplexity > static_cast<double>(n - 1))
    throw ConfigError("perplexity " + std::to_string(perplexity) + " is infeasible for " + std::to_string(n) +
                      " points");
  ConditionalP out{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Ones(n), Eigen::VectorXd::Zero(n)};
  const double target = std::log(perplexity);  // entropy in nats
  Eigen::VectorXd row(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    // Shift by the nearest-neighbour distance so exp() never underflows the whole row.
    double dmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, d2(i, j));
    double h = 0.0;
    for (std::size_t step = 0; step < max_steps; ++step) {
      double sum = 0.0;
      double dot = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) {
          row(j) = 0.0;
          continue;
        }
        row(j) = std::exp(-beta * (d2(i, j) - dmin));
        sum += row(j);
        dot += row(j) * (d2(i, j) - dmin);
      }
      h = std::log(sum) + beta * dot / sum;
      if (std::abs(h - target) < tol) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    out.p.row(i) = row / row.sum();
    out.beta(i) = beta;
    out.perplexity(i) = std::exp(h);
  }
  return out;
}

/// Symmetrised joint affinities (P + P^T) / 2n.
inline Eigen::MatrixXd joint_probabilities(const Eigen::MatrixXd& conditional) {
  const auto n = static_cast<double>(conditional.rows());
  Eigen::MatrixXd p = (conditional + conditional.transpose()) / (2.0 * n);
  return p.cwiseMax(1e-300);
}

namespace detail {

/// Unnormalised Student-t kernel with a zero diagonal.
inline Eigen::MatrixXd student_kernel(const Eigen::MatrixXd& y) {
  Eigen::MatrixXd num = (1.0 + squared_distances(y).array()).inverse().matrix();
  num.diagonal().setZero();
  return num;
}

inline Eigen::MatrixXd kl_gradient(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y, const Eigen::MatrixXd& num) {
  const double z = num.sum();
  Eigen::MatrixXd w = ((p.array() - num.array() / z) * num.array()).matrix();
  w.diagonal().setZero();
  const Eigen::VectorXd rs = w.rowwise().sum();
  return 4.0 * (rs.asDiagonal() * y - w * y);
}

}  // namespace detail

/// KL(P || Q(Y)) with the Student-t kernel; writes dKL/dY when grad is set.
inline double tsne_kl(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y, Eigen::MatrixXd* grad = nullptr) {
  const auto n = y.rows();
  const Eigen::MatrixXd num = detail::student_kernel(y);
  const double z = num.sum();
  double kl = 0.0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      if (i != j) kl += p(i, j) * std::log(p(i, j) / std::max(num(i, j) / z, 1e-300));
  if (grad != nullptr) *grad = detail::kl_gradient(p, y, num);
  return kl;
}

struct TsneEmbedding {
  Eigen::MatrixXd coords;  // n x 2
  double perplexity = 0.0;
  double kl = 0.0;
  std::size_t iterations = 0;
  Eigen::VectorXd row_perplexity;
};

using TsneWarning = std::function<void(const std::string&)>;

/// Exact t-SNE to two dimensions.
inline TsneEmbedding tsne(const Eigen::MatrixXd& x, TsneConfig cfg, const TsneWarning& warn = {}) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < 4) throw ConfigError("t-SNE needs at least 4 points");
  if (cfg.perplexity > max_perplexity(n)) {
    if (!cfg.auto_reduce)
      throw ConfigError("perplexity " + std::to_string(cfg.perplexity) + " exceeds (n-1)/3 = " +
                        std::to_string(max_perplexity(n)));
    if (warn)
      warn("t-SNE perplexity reduced from " + std::to_string(cfg.perplexity) + " to " +
           std::to_string(max_perplexity(n)) + " for " + std::to_string(n) + " points");
    cfg.perplexity = max_perplexity(n);
  }
  const auto cond = conditional_probabilities(squared_distances(x), cfg.perplexity);
  const Eigen::MatrixXd p = joint_probabilities(cond.p);

  Rng rng(derive_seed(cfg.seed, tag("tsne")));
  const auto rows = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd y(rows, 2);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < 2; ++c) y(i, c) = 1e-4 * standard_normal(rng);
  Eigen::MatrixXd update = Eigen::MatrixXd::Zero(rows, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(rows, 2);
  Eigen::MatrixXd grad;
  for (std::size_t it = 0; it < cfg.n_iters; ++it) {
    const double exag = it < cfg.exaggeration_iters ? cfg.early_exaggeration : 1.0;
    grad = detail::kl_gradient(exag * p, y, detail::student_kernel(y));
    if (!grad.allFinite()) throw NumericalFault("non-finite t-SNE gradient", it);
    const double momentum = it < cfg.momentum_switch ? cfg.initial_momentum : cfg.final_momentum;
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index c = 0; c < 2; ++c) {
        const bool same = (grad(i, c) > 0.0) == (update(i, c) > 0.0);
        gains(i, c) = std::max(same ? gains(i, c) * 0.8 : gains(i, c) + 0.2, 0.01);
      }
    update = momentum * update - cfg.learning_rate * gains.cwiseProduct(grad);
    y += update;
    y.rowwise() -= y.colwise().mean();
  }
  TsneEmbedding out;
  out.coords = y;
  out.perplexity = cfg.perplexity;
  out.kl = tsne_kl(p, y);
  out.iterations = cfg.n_iters;
  out.row_perplexity = cond.perplexity;
  return out;
}

}  // namespace advpol::analysis
