#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nudge/events.hpp"

namespace nudge {

struct DegenerateSample : Error {
  using Error::Error;
};
struct SeparationDetected : Error {
  using Error::Error;
};
struct NonConvergence : Error {
  using Error::Error;
};
struct RankDeficientDesign : Error {
  using Error::Error;
};

// --- special functions -----------------------------------------------------

double normal_cdf(double x);
double normal_pdf(double x);
double normal_quantile(double p);                 // p in (0,1)
double incomplete_beta_reg(double a, double b, double x);
double student_t_cdf(double t, double df);
double student_t_quantile(double p, double df);   // p in (0,1)

// --- Welch t-test ------------------------------------------------------------

struct TestResult {
  int day = -1;  // filled by evolution_tests
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;              // two-sided
  double cohen_d = 0.0;        // pooled-SD standardized difference
  double power = 0.0;          // post-hoc, two-sided normal approximation
  double mean_diff = 0.0;
  double ci_lo = 0.0;          // (1 - alpha) CI for the mean difference
  double ci_hi = 0.0;
  double alpha = 0.10;
  bool significant = false;
  bool degenerate = false;     // set by evolution_tests on skipped days
};

// Welch statistic with Satterthwaite df; throws DegenerateSample when a
// sample has < 2 values or both samples are constant.
TestResult welch_ttest(std::span<const double> a, std::span<const double> b, double alpha = 0.10);

// Two-sided power at standardized effect d and group sizes na / nb:
//   lambda = |d| sqrt(na nb / (na + nb))
//   power  = Phi(lambda - z) + Phi(-lambda - z),  z = Phi^-1(1 - alpha/2)
double ttest_power(double cohen_d, double n_a, double n_b, double alpha);

// Smallest real per-arm n with ttest_power(d, n, n, alpha) >= target.
double solve_power_n(double cohen_d, double target_power, double alpha);

// --- logistic regression (IRLS) ---------------------------------------------

struct LogitFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  int iterations = 0;
  double max_score = 0.0;  // max |X^T (y - p)| at the optimum
  bool converged = false;
};

// X must include an intercept column. Converged when max |X^T(y-p)| < 1e-8.
// Throws SeparationDetected when the linear predictor diverges, Error when a
// class is missing, NonConvergence at the iteration cap.
LogitFit fit_logit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int max_iter = 100);

// --- linear mixed model (random intercept, REML) ------------------------------

struct LmmFit {
  std::vector<std::string> terms;
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  std::vector<bool> significant;  // Wald, two-sided at alpha
  double var_user = 0.0;          // random-intercept variance
  double var_resid = 0.0;
  double gamma = 0.0;             // var_user / var_resid at the optimum
  double reml = 0.0;              // profiled REML objective at the optimum
  int objective_evals = 0;
  bool converged = false;
  double alpha = 0.10;
};

// Profiled REML objective in the variance ratio gamma (to be maximized);
// exposed so tests can grid-check the optimizer.
double lmm_profile_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const std::vector<int>& group, double gamma);

// groups index rows by user; X includes the intercept column.
LmmFit fit_lmm(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<int>& group,
               std::vector<std::string> terms, double alpha = 0.10);

}  // namespace nudge
