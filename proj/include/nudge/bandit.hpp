#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nudge/events.hpp"
#include "nudge/rng.hpp"

namespace nudge {

struct DimensionMismatch : Error {
  using Error::Error;
};
struct NonFiniteInput : Error {
  using Error::Error;
};
struct CholeskyFailure : Error {
  using Error::Error;
};
struct ShapeTooSmall : Error {
  using Error::Error;
};
struct InsufficientSample : Error {
  using Error::Error;
};

// Normal-Inverse-Gamma prior hyperparameters, shared by both arms.
struct NigPrior {
  double mean = 0.0;        // every weight coordinate
  double precision = 1.0;   // diagonal of the prior precision
  double shape = 2.0;       // a > 1 so the plug-in noise variance exists
  double rate = 1.0;        // b
};

// Conjugate Bayesian linear-regression state of one arm:
//   weights | s2 ~ N(mean, s2 * precision^-1),  s2 ~ InvGamma(a, b)
struct ArmPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd precision;
  double a = 2.0;
  double b = 1.0;
  std::int64_t n_obs = 0;

  static ArmPosterior from_prior(std::size_t dim, const NigPrior& prior);

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  // Checks symmetry (max asymmetry < 1e-10), positive definiteness and a,b > 0.
  void validate() const;
  // Plug-in noise variance b / (a - 1); throws ShapeTooSmall when a <= 1.
  double plugin_noise_variance() const;
};

enum class Arm { control = 0, treat = 1 };

inline const char* to_string(Arm arm) { return arm == Arm::treat ? "treat" : "control"; }

struct BanditState {
  ArmPosterior control;
  ArmPosterior treat;
  NigPrior prior;

  static BanditState fresh(std::size_t dim, const NigPrior& prior = {});

  std::size_t dim() const { return control.dim(); }
  const ArmPosterior& arm(Arm a) const { return a == Arm::treat ? treat : control; }
  ArmPosterior& arm(Arm a) { return a == Arm::treat ? treat : control; }
};

// Batch conjugate update:
//   P' = P + X^T X
//   m' solves P' m' = P m + X^T y
//   a' = a + n/2
//   b' = b + (y^T y + m^T P m - m'^T P' m') / 2
ArmPosterior posterior_update(const ArmPosterior& posterior, const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& y);

struct AssignResult {
  Arm arm = Arm::control;
  double score_treat = 0.0;
  double score_control = 0.0;
};

// One Thompson draw per arm (noise variance from InvGamma, then weights);
// picks the larger sampled predicted reward, ties to control.
AssignResult thompson_assign(const BanditState& state, std::span<const double> context, Rng& rng);

// P(treat score > control score) via the normal approximation with plug-in
// noise variance. Exactly 0.5 for identical posteriors.
double arm_probability_analytic(const BanditState& state, std::span<const double> context);
// Monte Carlo estimate over n Thompson draws.
double arm_probability_mc(const BanditState& state, std::span<const double> context, int n,
                          Rng& rng);

// Closed-form gradient of arm_probability_analytic w.r.t. the context.
Eigen::VectorXd arm_probability_jacobian(const BanditState& state,
                                         std::span<const double> context);

struct SensitivityReport {
  std::vector<std::string> names;  // context slot names, set by the caller
  std::vector<double> value;       // soft-thresholded derivative, averaged over users
  std::vector<double> raw_mean;
  std::vector<double> raw_std;
  std::vector<double> threshold;   // tau_j = 0.5 * std_u(J_uj)
};

// Per-participant Jacobians of the treat probability, soft-thresholded at
// half the sample standard deviation, averaged across participants.
SensitivityReport sensitivity(const BanditState& state,
                              const std::vector<std::vector<double>>& contexts);

}  // namespace nudge
