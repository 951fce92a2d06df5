#pragma once

#include <string>
#include <vector>

#include "crelmm/loglik.hpp"
#include "crelmm/mle.hpp"

namespace crelmm {

// Plug-in estimate of the pooled predictor second-moment matrix
// E(X X^T) over all rows of [X_A X_B].
struct MomentEstimates {
  Eigen::MatrixXd second_moment_matrix;  // (d_A + d_B) square, symmetric PSD
};

MomentEstimates estimate_moments(const CrossedDataset& data);

// Lower-right d_B x d_B block of the inverse pooled second-moment matrix;
// scales the asymptotic covariance of beta_B. Throws CollinearityError
// (naming the null direction) when the moment matrix is singular.
Eigen::MatrixXd c_beta_B_from_moments(const Eigen::MatrixXd& second_moment,
                                      int d_B);
Eigen::MatrixXd estimate_C_beta_B(const CrossedDataset& data);

// Per-coordinate inference row.
struct ParamInference {
  std::string name;
  std::string block;  // beta_A | beta_B | Sigma | Sigma_prime | sigma2
  double estimate = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double z = 0.0;
  double p = 1.0;        // two-sided
  double p_upper = 0.5;  // one-sided, H1: theta > theta0
};

// Asymptotic covariance of beta_A_hat: both factor terms, or the
// column-factor term alone for designs where m' grows much slower than m.
enum class BetaARegime { both_factors, column_factor_only };

struct AsymptoticReport {
  double m = 0, m_prime = 0, n_bar = 0;
  Eigen::MatrixXd asy_cov_beta_A;            // d_A x d_A
  Eigen::MatrixXd asy_cov_beta_B;            // d_B x d_B
  Eigen::MatrixXd asy_cov_vech_Sigma;        // h x h
  Eigen::MatrixXd asy_cov_vech_Sigma_prime;  // h x h
  double asy_var_sigma2 = 0.0;
  Eigen::MatrixXd C_beta_B_hat;  // the C matrix used for the beta_B block

  double alpha = 0.0;                 // set by wald_and_ci
  std::vector<ParamInference> params;  // set by wald_and_ci
};

// The five leading-term covariance blocks evaluated at the given parameters:
//   Cov(beta_A) = Sigma/m + Sigma'/m',     Cov(beta_B) = sigma^2 C/(m m' n),
//   Cov(vech Sigma) = 2 D+ (Sigma (x) Sigma) D+^T / m,  Sigma' analogue,
//   Var(sigma^2) = 2 sigma^4 / (m m' n),
// with every cross-block zero.
AsymptoticReport result1_covariances(
    const ModelParams& params, double m, double m_prime, double n_bar,
    const Eigen::MatrixXd& C_beta_B,
    BetaARegime regime = BetaARegime::both_factors);

// The block-diagonal inverse-information matrix with the report's five
// blocks placed in the (beta_A, beta_B, vech Sigma, vech Sigma', sigma^2)
// ordering.
Eigen::MatrixXd assemble_I_infinity_inv(const AsymptoticReport& report);

// Studentized inference: per-coordinate z = (theta_hat - theta0)/SE,
// two-sided and upper-tail p-values, and level-(1-alpha) intervals
// theta_hat +/- z_{1-alpha/2} SE. theta0 defaults to zero per coordinate.
AsymptoticReport wald_and_ci(const FitResult& fit, AsymptoticReport report,
                             double alpha,
                             const Eigen::VectorXd* theta0 = nullptr);

// Interpretable transforms for a 2 x 2 covariance block parameterized by
// (sigma_1, sigma_2, rho): SE(log sigma_1_hat) = 1/sqrt(2m),
// SE(atanh rho_hat) = 1/sqrt(m), with back-transformed intervals.
struct DeltaTransformReport {
  double sigma1_hat, sigma2_hat, rho_hat;
  double se_log_sigma, se_atanh_rho;
  double sigma1_ci_low, sigma1_ci_high;
  double sigma2_ci_low, sigma2_ci_high;
  double rho_ci_low, rho_ci_high;
};

DeltaTransformReport delta_transforms(const SymMatrix& Sigma_hat, double m,
                                      double alpha);

// Fit + Result-1 inference in one step. When use_exact_fisher is set the
// standard errors come from the inverse of the exact Fisher information at
// the fitted parameters instead of the leading-term blocks.
struct InferenceOptions {
  double alpha = 0.05;
  bool use_exact_fisher = false;
  BetaARegime regime = BetaARegime::both_factors;
};

AsymptoticReport infer(const CrossedDataset& data, const FitResult& fit,
                       const InferenceOptions& opts = {});

}  // namespace crelmm
