#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "nudge/events.hpp"

namespace nudge {

struct TooFewPoints : Error {
  using Error::Error;
};

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  std::uint64_t seed = 0;
  double learning_rate = 200.0;
  double early_exaggeration = 4.0;
  int exaggeration_iters = 100;
  double momentum_start = 0.5;
  double momentum_final = 0.8;
  int momentum_switch_iter = 250;
};

struct TsneResult {
  Eigen::MatrixXd embedding;        // n x 2
  double kl_initial = 0.0;          // KL(P||Q) at the random start
  double kl_final = 0.0;            // KL(P||Q) after the last iteration
  double perplexity_max_error = 0;  // max |achieved - target| over points
  double effective_perplexity = 0;  // target, capped at (n-1)/3
};

// Exact O(n^2) t-SNE. Gaussian bandwidths are bisected per point until the
// achieved perplexity matches the target within 1e-3; duplicate input rows
// are jittered with 1e-8-scaled seeded noise. Throws TooFewPoints for n < 5.
TsneResult tsne_embed(const Eigen::MatrixXd& X, const TsneOptions& options = {});

}  // namespace nudge
