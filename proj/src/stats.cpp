#include "nudge/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nudge {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

// Acklam's rational approximation refined with one Halley step.
double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error("normal_quantile: p must lie in (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double q, x;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement.
  double e = normal_cdf(x) - p;
  double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  x = x - u / (1.0 + 0.5 * x * u);
  return x;
}

namespace {

// Lentz continued fraction for the regularized incomplete beta.
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta_reg(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                    b * std::log(1.0 - x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (df <= 0.0) throw Error("student_t_cdf: df must be positive");
  double x = df / (df + t * t);
  double tail = 0.5 * incomplete_beta_reg(0.5 * df, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) throw Error("student_t_quantile: p must lie in (0,1)");
  if (p == 0.5) return 0.0;
  // Bracketed bisection seeded by the normal quantile.
  double z = normal_quantile(p);
  double lo = z - 1.0, hi = z + 1.0;
  while (student_t_cdf(lo, df) > p) lo = lo * 2.0 - 1.0;
  while (student_t_cdf(hi, df) < p) hi = hi * 2.0 + 1.0;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (student_t_cdf(mid, df) < p)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-13 * (1.0 + std::fabs(hi))) break;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Welch t-test

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // sample variance (n-1)
  double n = 0.0;
};

Moments moments(std::span<const double> xs) {
  Moments m;
  m.n = static_cast<double>(xs.size());
  for (double x : xs) {
    if (!std::isfinite(x)) throw Error("welch_ttest: non-finite sample value");
    m.mean += x;
  }
  m.mean /= m.n;
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.var = ss / (m.n - 1.0);
  return m;
}

}  // namespace

double ttest_power(double cohen_d, double n_a, double n_b, double alpha) {
  double lambda = std::fabs(cohen_d) * std::sqrt(n_a * n_b / (n_a + n_b));
  double z = normal_quantile(1.0 - alpha / 2.0);
  return normal_cdf(lambda - z) + normal_cdf(-lambda - z);
}

double solve_power_n(double cohen_d, double target_power, double alpha) {
  double lo = 2.0, hi = 4.0;
  while (ttest_power(cohen_d, hi, hi, alpha) < target_power && hi < 1e12) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (ttest_power(cohen_d, mid, mid, alpha) < target_power)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

TestResult welch_ttest(std::span<const double> a, std::span<const double> b, double alpha) {
  if (a.size() < 2 || b.size() < 2)
    throw DegenerateSample("welch_ttest: each sample needs at least 2 values");
  Moments ma = moments(a), mb = moments(b);
  double sea = ma.var / ma.n, seb = mb.var / mb.n;
  double se2 = sea + seb;
  if (se2 <= 0.0) throw DegenerateSample("welch_ttest: both samples are constant");

  TestResult r;
  r.alpha = alpha;
  r.mean_diff = ma.mean - mb.mean;
  r.t = r.mean_diff / std::sqrt(se2);
  r.df = se2 * se2 / (sea * sea / (ma.n - 1.0) + seb * seb / (mb.n - 1.0));
  r.p = 2.0 * (1.0 - student_t_cdf(std::fabs(r.t), r.df));
  r.p = std::clamp(r.p, 0.0, 1.0);

  double pooled_var = ((ma.n - 1.0) * ma.var + (mb.n - 1.0) * mb.var) / (ma.n + mb.n - 2.0);
  r.cohen_d = pooled_var > 0.0 ? r.mean_diff / std::sqrt(pooled_var) : 0.0;
  r.power = ttest_power(r.cohen_d, ma.n, mb.n, alpha);

  double tcrit = student_t_quantile(1.0 - alpha / 2.0, r.df);
  r.ci_lo = r.mean_diff - tcrit * std::sqrt(se2);
  r.ci_hi = r.mean_diff + tcrit * std::sqrt(se2);
  r.significant = r.p < alpha;
  return r;
}

// ---------------------------------------------------------------------------
// Logistic regression via IRLS

LogitFit fit_logit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int max_iter) {
  const auto n = X.rows();
  const auto p = X.cols();
  if (y.size() != n) throw Error("fit_logit: X and y disagree on rows");
  double ymin = y.minCoeff(), ymax = y.maxCoeff();
  if (ymin < 0.0 || ymax > 1.0) throw Error("fit_logit: y must be 0/1");
  if (y.sum() == 0.0 || y.sum() == static_cast<double>(n))
    throw Error("fit_logit: both outcome classes must be present");

  // Rescale columns to unit max-abs for the solve; report on the raw scale.
  // Scaling only (no centering) keeps the model identical without touching
  // the intercept column.
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(p);
  Eigen::MatrixXd Z = X;
  for (Eigen::Index j = 0; j < p; ++j) {
    double s = X.col(j).cwiseAbs().maxCoeff();
    if (s > 0.0) {
      scale[j] = s;
      Z.col(j) = X.col(j) / s;
    }
  }

  Eigen::VectorXd beta_z = Eigen::VectorXd::Zero(p);
  LogitFit fit;
  for (int iter = 1; iter <= max_iter; ++iter) {
    Eigen::VectorXd eta = Z * beta_z;
    Eigen::VectorXd prob = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
    Eigen::VectorXd resid = y - prob;
    double score_raw = (X.transpose() * resid).cwiseAbs().maxCoeff();
    fit.iterations = iter;
    fit.max_score = score_raw;
    if (score_raw < 1e-8) {
      fit.converged = true;
    } else if (eta.cwiseAbs().maxCoeff() > 30.0) {
      throw SeparationDetected("fit_logit: linear predictor diverged (separated data)");
    }
    if (fit.converged) {
      Eigen::VectorXd w = prob.array() * (1.0 - prob.array());
      Eigen::MatrixXd info = Z.transpose() * w.asDiagonal() * Z;
      Eigen::MatrixXd cov_z = info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
      fit.beta = beta_z.cwiseQuotient(scale);
      fit.se = cov_z.diagonal().cwiseMax(0.0).cwiseSqrt().cwiseQuotient(scale);
      return fit;
    }

    Eigen::VectorXd w = prob.array() * (1.0 - prob.array());
    Eigen::MatrixXd info = Z.transpose() * w.asDiagonal() * Z;
    Eigen::VectorXd step = info.ldlt().solve(Z.transpose() * resid);
    if (!step.allFinite())
      throw SeparationDetected("fit_logit: singular information matrix (separated data)");
    beta_z += step;
  }
  throw NonConvergence("fit_logit: IRLS did not converge");
}

// ---------------------------------------------------------------------------
// Random-intercept LMM by profiled REML

namespace {

struct GroupedDesign {
  std::vector<std::vector<int>> rows_of;  // rows per group
  int n_groups = 0;
};

GroupedDesign group_rows(const std::vector<int>& group, Eigen::Index n) {
  GroupedDesign g;
  int max_g = -1;
  for (int gi : group) max_g = std::max(max_g, gi);
  g.n_groups = max_g + 1;
  g.rows_of.resize(static_cast<size_t>(g.n_groups));
  for (Eigen::Index i = 0; i < n; ++i) {
    int gi = group[static_cast<size_t>(i)];
    if (gi < 0) throw Error("fit_lmm: negative group index");
    g.rows_of[static_cast<size_t>(gi)].push_back(static_cast<int>(i));
  }
  return g;
}

struct RemlEval {
  double objective;
  Eigen::VectorXd beta;
  Eigen::MatrixXd info;  // X^T V0^-1 X
  double quad;           // r^T V0^-1 r
};

RemlEval reml_eval(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GroupedDesign& g,
                   double gamma) {
  const auto p = X.cols();
  const double n = static_cast<double>(X.rows());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
  double log_det_v0 = 0.0;

  for (const auto& rows : g.rows_of) {
    if (rows.empty()) continue;
    double nu = static_cast<double>(rows.size());
    double shrink = gamma / (1.0 + gamma * nu);
    Eigen::MatrixXd Xu(rows.size(), p);
    Eigen::VectorXd yu(rows.size());
    for (size_t k = 0; k < rows.size(); ++k) {
      Xu.row(static_cast<Eigen::Index>(k)) = X.row(rows[k]);
      yu[static_cast<Eigen::Index>(k)] = y[rows[k]];
    }
    Eigen::VectorXd su = Xu.colwise().sum();
    double tu = yu.sum();
    A += Xu.transpose() * Xu - shrink * (su * su.transpose());
    c += Xu.transpose() * yu - shrink * su * tu;
    log_det_v0 += std::log(1.0 + gamma * nu);
  }

  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw RankDeficientDesign("fit_lmm: X^T V^-1 X is not positive definite");
  Eigen::VectorXd beta = llt.solve(c);

  double quad = 0.0;
  for (const auto& rows : g.rows_of) {
    if (rows.empty()) continue;
    double nu = static_cast<double>(rows.size());
    double shrink = gamma / (1.0 + gamma * nu);
    double sum_r = 0.0, ss_r = 0.0;
    for (int ri : rows) {
      double r = y[ri] - X.row(ri).dot(beta);
      sum_r += r;
      ss_r += r * r;
    }
    quad += ss_r - shrink * sum_r * sum_r;
  }
  quad = std::max(quad, 1e-300);

  double log_det_a = 0.0;
  for (Eigen::Index j = 0; j < p; ++j) log_det_a += 2.0 * std::log(llt.matrixL()(j, j));

  RemlEval ev;
  ev.objective = -0.5 * ((n - static_cast<double>(p)) * std::log(quad) + log_det_v0 + log_det_a);
  ev.beta = std::move(beta);
  ev.info = std::move(A);
  ev.quad = quad;
  return ev;
}

}  // namespace

double lmm_profile_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const std::vector<int>& group, double gamma) {
  if (gamma < 0.0) throw Error("lmm_profile_objective: gamma must be >= 0");
  GroupedDesign g = group_rows(group, X.rows());
  return reml_eval(X, y, g, gamma).objective;
}

LmmFit fit_lmm(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<int>& group,
               std::vector<std::string> terms, double alpha) {
  const auto n = X.rows();
  const auto p = X.cols();
  if (y.size() != n || static_cast<Eigen::Index>(group.size()) != n)
    throw Error("fit_lmm: X, y and group disagree on rows");
  if (static_cast<Eigen::Index>(terms.size()) != p)
    throw Error("fit_lmm: one term name per column required");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < p) throw RankDeficientDesign("fit_lmm: design matrix is rank deficient");

  GroupedDesign g = group_rows(group, n);
  int evals = 0;
  auto objective = [&](double gamma) {
    ++evals;
    return reml_eval(X, y, g, gamma).objective;
  };

  // Coarse scan over gamma (0 plus log-spaced), then golden-section refine.
  std::vector<double> grid = {0.0};
  for (double lg = -4.0; lg <= 4.01; lg += 0.25) grid.push_back(std::pow(10.0, lg));
  size_t best = 0;
  double best_obj = -std::numeric_limits<double>::infinity();
  std::vector<double> objs(grid.size());
  for (size_t i = 0; i < grid.size(); ++i) {
    objs[i] = objective(grid[i]);
    if (objs[i] > best_obj) {
      best_obj = objs[i];
      best = i;
    }
  }
  double lo = grid[best > 0 ? best - 1 : 0];
  double hi = best + 1 < grid.size() ? grid[best + 1] : grid[best] * 10.0;

  // Golden section on u = log1p(gamma); u=0 keeps the OLS boundary reachable.
  double ulo = std::log1p(lo), uhi = std::log1p(hi);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double u1 = uhi - phi * (uhi - ulo), u2 = ulo + phi * (uhi - ulo);
  double f1 = objective(std::expm1(u1)), f2 = objective(std::expm1(u2));
  bool converged = false;
  for (int iter = 0; iter < 200; ++iter) {
    if (uhi - ulo < 1e-10 * (1.0 + uhi)) {
      converged = true;
      break;
    }
    if (f1 < f2) {
      ulo = u1;
      u1 = u2;
      f1 = f2;
      u2 = ulo + phi * (uhi - ulo);
      f2 = objective(std::expm1(u2));
    } else {
      uhi = u2;
      u2 = u1;
      f2 = f1;
      u1 = uhi - phi * (uhi - ulo);
      f1 = objective(std::expm1(u1));
    }
  }
  if (!converged) throw NonConvergence("fit_lmm: variance-ratio search did not converge");

  double gamma = std::expm1(0.5 * (ulo + uhi));
  if (gamma < 1e-12) gamma = 0.0;
  // Keep the boundary if it is at least as good.
  if (objective(0.0) >= objective(gamma)) gamma = 0.0;

  RemlEval ev = reml_eval(X, y, g, gamma);
  double sigma2_e = ev.quad / (static_cast<double>(n) - static_cast<double>(p));

  LmmFit fit;
  fit.terms = std::move(terms);
  fit.beta = ev.beta;
  Eigen::MatrixXd cov = sigma2_e * ev.info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  fit.se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  fit.var_resid = sigma2_e;
  fit.var_user = gamma * sigma2_e;
  fit.gamma = gamma;
  fit.reml = ev.objective;
  fit.objective_evals = evals;
  fit.converged = true;
  fit.alpha = alpha;
  double zcrit = normal_quantile(1.0 - alpha / 2.0);
  fit.significant.resize(static_cast<size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j)
    fit.significant[static_cast<size_t>(j)] =
        fit.se[j] > 0.0 && std::fabs(fit.beta[j] / fit.se[j]) > zcrit;
  return fit;
}

}  // namespace nudge
