#include "nudge/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "nudge/parallel.hpp"
#include "nudge/rng.hpp"

namespace nudge {

namespace {

// Conditional p_{j|i} for one point at a given precision beta; returns the
// achieved perplexity 2^H.
double fill_conditional(const Eigen::VectorXd& d2_row, Eigen::Index i, double beta,
                        Eigen::VectorXd& p_row) {
  const Eigen::Index n = d2_row.size();
  double min_d2 = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < n; ++j)
    if (j != i) min_d2 = std::min(min_d2, d2_row[j]);
  double sum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == i) {
      p_row[j] = 0.0;
      continue;
    }
    p_row[j] = std::exp(-beta * (d2_row[j] - min_d2));
    sum += p_row[j];
  }
  p_row /= sum;
  double h_bits = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (p_row[j] > 0.0) h_bits -= p_row[j] * std::log2(p_row[j]);
  }
  return std::exp2(h_bits);
}

}  // namespace

TsneResult tsne_embed(const Eigen::MatrixXd& X_in, const TsneOptions& options) {
  const Eigen::Index n = X_in.rows();
  if (n < 5) throw TooFewPoints("tsne_embed: need at least 5 points");

  Eigen::MatrixXd X = X_in;

  // Jitter exact duplicate rows so bandwidth bisection stays well posed.
  {
    std::map<std::vector<double>, int> seen;
    Rng rng = Rng::stream(options.seed, "tsne-jitter");
    double scale = std::sqrt((X.rowwise() - X.colwise().mean()).squaredNorm() /
                             std::max<double>(1.0, static_cast<double>(X.size())));
    if (!(scale > 0.0)) scale = 1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      std::vector<double> key(X.row(i).begin(), X.row(i).end());
      if (seen[key]++ > 0) {
        for (Eigen::Index c = 0; c < X.cols(); ++c) X(i, c) += 1e-8 * scale * rng.normal();
      }
    }
  }

  TsneResult result;
  result.effective_perplexity =
      std::min(options.perplexity, static_cast<double>(n - 1) / 3.0);

  Eigen::MatrixXd d2(n, n);
  {
    Eigen::VectorXd sq = X.rowwise().squaredNorm();
    d2 = sq.replicate(1, n) + sq.transpose().replicate(n, 1) - 2.0 * X * X.transpose();
    d2 = d2.cwiseMax(0.0);
  }

  // Per-point bandwidths by bisection on the precision beta.
  Eigen::MatrixXd P_cond(n, n);
  std::vector<double> perp_err(static_cast<size_t>(n), 0.0);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t ui) {
    Eigen::Index i = static_cast<Eigen::Index>(ui);
    Eigen::VectorXd row(n);
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double perp = 0.0;
    for (int iter = 0; iter < 200; ++iter) {
      perp = fill_conditional(d2.row(i), i, beta, row);
      double err = perp - result.effective_perplexity;
      if (std::fabs(err) < 1e-4) break;
      if (err > 0.0) {  // too spread out -> increase precision
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = lo > 0.0 ? 0.5 * (beta + lo) : beta / 2.0;
      }
    }
    perp_err[ui] = std::fabs(perp - result.effective_perplexity);
    P_cond.row(i) = row;
  });
  result.perplexity_max_error = *std::max_element(perp_err.begin(), perp_err.end());

  Eigen::MatrixXd P = (P_cond + P_cond.transpose()) / (2.0 * static_cast<double>(n));

  Rng rng = Rng::stream(options.seed, "tsne-init");
  Eigen::MatrixXd Y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < 2; ++c) Y(i, c) = 1e-2 * rng.normal();

  auto kl_divergence = [&](const Eigen::MatrixXd& Ycur) {
    double z = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        z += 1.0 / (1.0 + (Ycur.row(i) - Ycur.row(j)).squaredNorm());
      }
    double kl = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j || P(i, j) <= 0.0) continue;
        double q = (1.0 / (1.0 + (Ycur.row(i) - Ycur.row(j)).squaredNorm())) / z;
        kl += P(i, j) * std::log(P(i, j) / q);
      }
    return kl;
  };
  result.kl_initial = kl_divergence(Y);

  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd W(n, n);
  Eigen::MatrixXd grad(n, 2);

  for (int iter = 0; iter < options.iterations; ++iter) {
    double exaggeration = iter < options.exaggeration_iters ? options.early_exaggeration : 1.0;
    double momentum =
        iter < options.momentum_switch_iter ? options.momentum_start : options.momentum_final;

    parallel_for(static_cast<std::size_t>(n), [&](std::size_t ui) {
      Eigen::Index i = static_cast<Eigen::Index>(ui);
      for (Eigen::Index j = 0; j < n; ++j)
        W(i, j) = i == j ? 0.0 : 1.0 / (1.0 + (Y.row(i) - Y.row(j)).squaredNorm());
    });
    double z = W.sum();

    parallel_for(static_cast<std::size_t>(n), [&](std::size_t ui) {
      Eigen::Index i = static_cast<Eigen::Index>(ui);
      Eigen::RowVector2d g = Eigen::RowVector2d::Zero();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        double q = W(i, j) / z;
        g += 4.0 * (exaggeration * P(i, j) - q) * W(i, j) * (Y.row(i) - Y.row(j));
      }
      grad.row(i) = g;
    });

    velocity = momentum * velocity - options.learning_rate * grad;
    Y += velocity;
    Y.rowwise() -= Y.colwise().mean();
  }

  result.kl_final = kl_divergence(Y);
  result.embedding = std::move(Y);
  return result;
}

}  // namespace nudge
