#include "nudge/bandit.hpp"

#include <cmath>

#include "nudge/stats.hpp"

namespace nudge {

ArmPosterior ArmPosterior::from_prior(std::size_t dim, const NigPrior& prior) {
  ArmPosterior p;
  p.mean = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim), prior.mean);
  p.precision = prior.precision *
                Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim),
                                          static_cast<Eigen::Index>(dim));
  p.a = prior.shape;
  p.b = prior.rate;
  p.n_obs = 0;
  return p;
}

void ArmPosterior::validate() const {
  if (!(a > 0.0) || !(b > 0.0)) throw Error("arm posterior: a and b must be positive");
  if (precision.rows() != precision.cols() || precision.rows() != mean.size())
    throw DimensionMismatch("arm posterior: inconsistent dimensions");
  double asym = (precision - precision.transpose()).cwiseAbs().maxCoeff();
  if (asym >= 1e-10) throw Error("arm posterior: precision asymmetry " + std::to_string(asym));
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success)
    throw CholeskyFailure("arm posterior: precision is not positive definite");
}

double ArmPosterior::plugin_noise_variance() const {
  if (a <= 1.0) throw ShapeTooSmall("plug-in noise variance needs shape a > 1");
  return b / (a - 1.0);
}

BanditState BanditState::fresh(std::size_t dim, const NigPrior& prior) {
  BanditState s;
  s.prior = prior;
  s.control = ArmPosterior::from_prior(dim, prior);
  s.treat = ArmPosterior::from_prior(dim, prior);
  return s;
}

ArmPosterior posterior_update(const ArmPosterior& posterior, const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& y) {
  if (X.rows() != y.size()) throw DimensionMismatch("posterior_update: X rows != y size");
  if (X.rows() == 0) return posterior;
  if (X.cols() != posterior.mean.size())
    throw DimensionMismatch("posterior_update: context dimension mismatch");
  if (!X.allFinite() || !y.allFinite())
    throw NonFiniteInput("posterior_update: non-finite inputs");

  const double n = static_cast<double>(X.rows());
  ArmPosterior next;
  next.precision = posterior.precision + X.transpose() * X;
  // Force exact symmetry against floating-point drift in X^T X.
  next.precision = 0.5 * (next.precision + next.precision.transpose()).eval();

  Eigen::LLT<Eigen::MatrixXd> llt(next.precision);
  if (llt.info() != Eigen::Success)
    throw CholeskyFailure("posterior_update: updated precision not positive definite");
  next.mean = llt.solve(posterior.precision * posterior.mean + X.transpose() * y);

  next.a = posterior.a + 0.5 * n;
  double fit = y.squaredNorm() + posterior.mean.dot(posterior.precision * posterior.mean) -
               next.mean.dot(next.precision * next.mean);
  next.b = posterior.b + 0.5 * fit;
  if (!(next.b > 0.0)) throw Error("posterior_update: rate b must stay positive");
  next.n_obs = posterior.n_obs + X.rows();
  return next;
}

namespace {

Eigen::Map<const Eigen::VectorXd> as_vec(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Sampled predicted reward for one arm.
double thompson_score(const ArmPosterior& arm, const Eigen::VectorXd& x, Rng& rng) {
  Eigen::LLT<Eigen::MatrixXd> llt(arm.precision);
  if (llt.info() != Eigen::Success)
    throw CholeskyFailure("thompson_assign: precision not positive definite");
  double s2 = rng.inverse_gamma(arm.a, arm.b);
  Eigen::VectorXd z(x.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  // precision = L L^T, so weights = mean + sqrt(s2) * L^-T z.
  Eigen::VectorXd w = arm.mean + std::sqrt(s2) * llt.matrixU().solve(z);
  return x.dot(w);
}

}  // namespace

AssignResult thompson_assign(const BanditState& state, std::span<const double> context, Rng& rng) {
  if (context.size() != state.dim())
    throw DimensionMismatch("thompson_assign: context dimension mismatch");
  Eigen::VectorXd x = as_vec(context);
  if (!x.allFinite()) throw NonFiniteInput("thompson_assign: non-finite context");
  AssignResult r;
  r.score_control = thompson_score(state.control, x, rng);
  r.score_treat = thompson_score(state.treat, x, rng);
  r.arm = r.score_treat > r.score_control ? Arm::treat : Arm::control;
  return r;
}

double arm_probability_analytic(const BanditState& state, std::span<const double> context) {
  if (context.size() != state.dim())
    throw DimensionMismatch("arm_probability: context dimension mismatch");
  Eigen::VectorXd x = as_vec(context);
  double delta = x.dot(state.treat.mean - state.control.mean);
  double s2 = 0.0;
  for (const ArmPosterior* arm : {&state.treat, &state.control}) {
    Eigen::LLT<Eigen::MatrixXd> llt(arm->precision);
    if (llt.info() != Eigen::Success)
      throw CholeskyFailure("arm_probability: precision not positive definite");
    s2 += arm->plugin_noise_variance() * x.dot(llt.solve(x));
  }
  if (s2 <= 0.0) return delta > 0.0 ? 1.0 : (delta < 0.0 ? 0.0 : 0.5);
  return normal_cdf(delta / std::sqrt(s2));
}

double arm_probability_mc(const BanditState& state, std::span<const double> context, int n,
                          Rng& rng) {
  if (n <= 0) throw Error("arm_probability_mc: n must be positive");
  long hits = 0;
  for (int i = 0; i < n; ++i) {
    if (thompson_assign(state, context, rng).arm == Arm::treat) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

Eigen::VectorXd arm_probability_jacobian(const BanditState& state,
                                         std::span<const double> context) {
  if (context.size() != state.dim())
    throw DimensionMismatch("arm_probability_jacobian: context dimension mismatch");
  Eigen::VectorXd x = as_vec(context);
  Eigen::VectorXd dmean = state.treat.mean - state.control.mean;
  double delta = x.dot(dmean);

  // s(x)^2 = x^T M x with M = sum_arms (b/(a-1)) P^-1.
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(x.size(), x.size());
  for (const ArmPosterior* arm : {&state.treat, &state.control}) {
    Eigen::LLT<Eigen::MatrixXd> llt(arm->precision);
    if (llt.info() != Eigen::Success)
      throw CholeskyFailure("arm_probability_jacobian: precision not positive definite");
    M += arm->plugin_noise_variance() *
         llt.solve(Eigen::MatrixXd::Identity(x.size(), x.size()));
  }
  Eigen::VectorXd Mx = M * x;
  double s = std::sqrt(x.dot(Mx));
  if (s <= 0.0) return Eigen::VectorXd::Zero(x.size());

  double g = delta / s;
  return normal_pdf(g) * (dmean / s - (delta / (s * s * s)) * Mx);
}

SensitivityReport sensitivity(const BanditState& state,
                              const std::vector<std::vector<double>>& contexts) {
  if (contexts.size() < 2)
    throw InsufficientSample("sensitivity: needs at least 2 participants");
  const std::size_t n = contexts.size();
  const std::size_t d = state.dim();

  Eigen::MatrixXd J(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t u = 0; u < n; ++u)
    J.row(static_cast<Eigen::Index>(u)) = arm_probability_jacobian(state, contexts[u]);

  SensitivityReport report;
  report.value.resize(d);
  report.raw_mean.resize(d);
  report.raw_std.resize(d);
  report.threshold.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    auto col = J.col(static_cast<Eigen::Index>(j));
    double mean = col.mean();
    double sd = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(n - 1));
    double tau = 0.5 * sd;
    double acc = 0.0;
    for (Eigen::Index u = 0; u < col.size(); ++u) {
      double v = col[u];
      double shrunk = std::max(std::fabs(v) - tau, 0.0);
      acc += (v >= 0.0 ? shrunk : -shrunk);
    }
    report.raw_mean[j] = mean;
    report.raw_std[j] = sd;
    report.threshold[j] = tau;
    report.value[j] = acc / static_cast<double>(n);
  }
  return report;
}

}  // namespace nudge
