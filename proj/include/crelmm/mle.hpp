#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crelmm/loglik.hpp"

namespace crelmm {

struct FitOptions {
  int max_iterations = 500;
  // Convergence threshold on the max-norm of the unconstrained-space
  // gradient (invariant to the curvature distortions of the log-Cholesky
  // map, unlike parameter movement).
  double gradient_tolerance = 1e-6;
  // Starting point; method-of-moments initialization when absent.
  std::optional<ModelParams> init;
  std::uint64_t seed = 0;
};

struct FitResult {
  ModelParams params_hat;
  double loglik_at_optimum = 0.0;
  int iterations = 0;
  bool converged = false;
  double gradient_norm = 0.0;  // max-norm of the full unconstrained gradient
  std::vector<std::string> warnings;
  std::vector<double> loglik_trace;  // value at each accepted iterate
};

// Bijection between ModelParams and an unconstrained vector
// (beta_A, beta_B, phi(Sigma), phi(Sigma'), log sigma2) where phi is the
// lower Cholesky factor, columnwise, with log-transformed diagonal. The
// inverse always yields positive definite covariance blocks.
Eigen::VectorXd unconstrained_map(const ModelParams& params);
ModelParams inverse_map(const Eigen::VectorXd& v, int d_A, int d_B);

// Log-likelihood and its chain-ruled gradient as functions of the
// unconstrained vector.
double loglik_unconstrained(const CrossedDataset& data,
                            const Eigen::VectorXd& v);
Eigen::VectorXd score_unconstrained(const CrossedDataset& data,
                                    const Eigen::VectorXd& v);

// Generalized least squares coefficients (X^T V^{-1} X)^{-1} X^T V^{-1} y
// for X = [X_A X_B] at the given covariance parameters.
Eigen::VectorXd gls_beta(const VOperator& op);

// Maximum likelihood fit: BFGS ascent with backtracking line search over the
// covariance block of the unconstrained space, with the GLS profile solve as
// the beta update at every iterate.
FitResult fit_mle(const CrossedDataset& data, const FitOptions& opts = {});

}  // namespace crelmm
