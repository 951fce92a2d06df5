#pragma once

#include <Eigen/Dense>

#include "crelmm/model_data.hpp"

namespace crelmm {

// Dense materialization is refused above this many observations.
inline constexpr int kDenseVGuard = 4000;

// Exact dense assembly of the marginal covariance
//   V = blockdiag_i{blockmatrix_{i',~i'}(XA_ii' Sigma XA_i~i'^T)}
//     + blockmatrix_{i,~i}{blockdiag_i'(XA_ii' Sigma' XA_~ii'^T)}
//     + sigma^2 I.
// Test oracle; the operator path below is the production route.
SymMatrix build_V_dense(const CrossedDataset& data, const ModelParams& params,
                        int guard = kDenseVGuard);

// Applies V^{-1} and log|V| through the low-rank structure V = Z G Z^T +
// sigma^2 I with G = blockdiag(I_m (x) Sigma, I_m' (x) Sigma'). The
// (m + m') d_A capacitance matrix C = sigma^2 G^{-1} + Z^T Z is factorized
// once at construction; the n x n matrix is never formed. Immutable after
// construction; concurrent solve calls are safe.
class VOperator {
 public:
  VOperator(const CrossedDataset& data, const ModelParams& params);

  // V^{-1} rhs via (rhs - Z C^{-1} Z^T rhs) / sigma^2.
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;

  // log|V| = (n - q) log sigma^2 + log|G| + log|C|  with q = (m + m') d_A.
  double logdet() const;

  // Structured pieces used by the likelihood and Fisher computations.
  Eigen::MatrixXd z_mul(const Eigen::MatrixXd& u) const;   // Z u,   u is q x k
  Eigen::MatrixXd z_tmul(const Eigen::MatrixXd& v) const;  // Z^T v, v is n x k
  Eigen::MatrixXd capacitance_solve(const Eigen::MatrixXd& rhs) const;
  const Eigen::MatrixXd& ztz() const { return ztz_; }

  const CrossedDataset& data() const { return *data_; }
  const ModelParams& params() const { return params_; }
  double sigma2() const { return params_.sigma2; }
  int q() const { return static_cast<int>(ztz_.rows()); }

  double capacitance_rcond() const { return rcond_; }
  // True when the capacitance condition estimate exceeds 1e12.
  bool condition_warning() const { return rcond_ < 1e-12; }

 private:
  const CrossedDataset* data_;
  ModelParams params_;
  Eigen::MatrixXd ztz_;
  Eigen::LLT<Eigen::MatrixXd> cap_llt_;
  double logdet_G_;
  double logdet_cap_;
  double rcond_;
};

}  // namespace crelmm
