#pragma once

#include <string>
#include <vector>

#include "crelmm/cov_struct.hpp"

namespace crelmm {

// Offsets of the parameter blocks in the stacked ordering
// (beta_A, beta_B, vech(Sigma), vech(Sigma'), sigma^2). vech blocks use the
// columnwise lower-triangle ordering (1,1),(2,1),...,(d_A,1),(2,2),...
struct ParamLayout {
  int d_A = 0;
  int d_B = 0;

  int h() const { return d_A * (d_A + 1) / 2; }
  int dim() const { return d_A + d_B + 2 * h() + 1; }
  int off_beta_A() const { return 0; }
  int off_beta_B() const { return d_A; }
  int off_Sigma() const { return d_A + d_B; }
  int off_Sigma_prime() const { return d_A + d_B + h(); }
  int off_sigma2() const { return d_A + d_B + 2 * h(); }

  // Human-readable name per coordinate, e.g. "beta_A[1]", "Sigma[2,1]".
  std::vector<std::string> names() const;
};

// Gradient of the conditional log-likelihood in the stacked ordering.
struct ScoreVector {
  Eigen::VectorXd grad_beta_A;
  Eigen::VectorXd grad_beta_B;
  Eigen::VectorXd grad_vech_Sigma;
  Eigen::VectorXd grad_vech_Sigma_prime;
  double grad_sigma2 = 0.0;

  Eigen::VectorXd stacked() const;
};

struct FisherMatrix {
  Eigen::MatrixXd mat;  // dim() x dim(), symmetric
  ParamLayout layout;
};

// Conditional log-likelihood
//   -(n/2) log 2 pi - (1/2) log|V| - (1/2) r^T V^{-1} r,
// r = y - X_A beta_A - X_B beta_B, evaluated through the structured solves.
double loglik(const VOperator& op, const Eigen::VectorXd& beta_A,
              const Eigen::VectorXd& beta_B);
double loglik(const CrossedDataset& data, const ModelParams& params);

// Analytic score. Beta blocks are X_A^T V^{-1} r and X_B^T V^{-1} r; the
// vech(Sigma) entry for (r, s) is
//   (1/2) tr(V^{-1} Lb_(r,s) V^{-1} r r^T - V^{-1} Lb_(r,s)),
// the Sigma' block is analogous, and the sigma^2 entry is
//   (1/2) tr(V^{-2} r r^T - V^{-1}).
// Every trace reduces to inner products of capacitance solves against
// sub-column selections of Z; no n x n intermediate is formed.
ScoreVector score(const VOperator& op, const Eigen::VectorXd& beta_A,
                  const Eigen::VectorXd& beta_B);
ScoreVector score(const CrossedDataset& data, const ModelParams& params);

// Expected (Fisher) information of the full parameter vector. The beta block
// is [X_A X_B]^T V^{-1} [X_A X_B]; covariance-parameter blocks come from
// (1/2) tr(V^{-1} dV/dtheta_a V^{-1} dV/dtheta_b); the beta x covariance
// cross blocks are exactly zero.
FisherMatrix fisher_exact(const VOperator& op);
FisherMatrix fisher_exact(const CrossedDataset& data,
                          const ModelParams& params);

}  // namespace crelmm
