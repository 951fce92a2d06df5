#include "crelmm/asymptotics.hpp"

#include <cmath>

#include "crelmm/design_power.hpp"
#include "crelmm/matops.hpp"

namespace crelmm {

MomentEstimates estimate_moments(const CrossedDataset& data) {
  const int p = data.d_A() + data.d_B();
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < data.m(); ++i) {
    for (int ip = 0; ip < data.m_prime(); ++ip) {
      const CellBlock& c = data.cell(i, ip);
      Eigen::MatrixXd X(c.y.size(), p);
      X.leftCols(data.d_A()) = c.XA;
      if (data.d_B() > 0) X.rightCols(data.d_B()) = c.XB;
      M += X.transpose() * X;
    }
  }
  M /= static_cast<double>(data.n_total());
  return MomentEstimates{0.5 * (M + M.transpose())};
}

Eigen::MatrixXd c_beta_B_from_moments(const Eigen::MatrixXd& second_moment,
                                      int d_B) {
  const int p = static_cast<int>(second_moment.rows());
  if (d_B == 0) return Eigen::MatrixXd(0, 0);
  Eigen::LLT<Eigen::MatrixXd> llt(second_moment);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-13) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(second_moment);
    const Eigen::VectorXd dir = es.eigenvectors().col(0);
    std::string msg =
        "C_beta_B: pooled second-moment matrix is singular; null direction (";
    for (int j = 0; j < p; ++j)
      msg += (j ? ", " : "") + std::to_string(dir(j));
    msg += ")";
    throw CollinearityError(
        msg, std::vector<double>(dir.data(), dir.data() + p));
  }
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd block = inv.bottomRightCorner(d_B, d_B);
  return 0.5 * (block + block.transpose());
}

Eigen::MatrixXd estimate_C_beta_B(const CrossedDataset& data) {
  return c_beta_B_from_moments(estimate_moments(data).second_moment_matrix,
                               data.d_B());
}

AsymptoticReport result1_covariances(const ModelParams& params, double m,
                                     double m_prime, double n_bar,
                                     const Eigen::MatrixXd& C_beta_B,
                                     BetaARegime regime) {
  if (!(m >= 1 && m_prime >= 1 && n_bar > 0)) {
    throw Error("result1_covariances: m, m', n must be positive");
  }
  if (C_beta_B.rows() != params.d_B()) {
    throw Error("result1_covariances: C_beta_B dimension does not match d_B");
  }
  const int dA = params.d_A();
  const Eigen::MatrixXd Dpinv = matops::duplication_pinv(dA);
  const double cells = m * m_prime * n_bar;

  AsymptoticReport rep;
  rep.m = m;
  rep.m_prime = m_prime;
  rep.n_bar = n_bar;
  rep.asy_cov_beta_A =
      regime == BetaARegime::column_factor_only
          ? Eigen::MatrixXd(params.Sigma_prime.mat() / m_prime)
          : Eigen::MatrixXd(params.Sigma.mat() / m +
                            params.Sigma_prime.mat() / m_prime);
  rep.asy_cov_beta_B = params.sigma2 * C_beta_B / cells;
  rep.asy_cov_vech_Sigma =
      2.0 *
      (Dpinv * matops::kron(params.Sigma.mat(), params.Sigma.mat()) *
       Dpinv.transpose()) /
      m;
  rep.asy_cov_vech_Sigma_prime =
      2.0 *
      (Dpinv *
       matops::kron(params.Sigma_prime.mat(), params.Sigma_prime.mat()) *
       Dpinv.transpose()) /
      m_prime;
  rep.asy_var_sigma2 = 2.0 * params.sigma2 * params.sigma2 / cells;
  rep.C_beta_B_hat = C_beta_B;
  return rep;
}

Eigen::MatrixXd assemble_I_infinity_inv(const AsymptoticReport& report) {
  const int dA = static_cast<int>(report.asy_cov_beta_A.rows());
  const int dB = static_cast<int>(report.asy_cov_beta_B.rows());
  const ParamLayout L{dA, dB};
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(L.dim(), L.dim());
  M.block(L.off_beta_A(), L.off_beta_A(), dA, dA) = report.asy_cov_beta_A;
  if (dB > 0)
    M.block(L.off_beta_B(), L.off_beta_B(), dB, dB) = report.asy_cov_beta_B;
  M.block(L.off_Sigma(), L.off_Sigma(), L.h(), L.h()) =
      report.asy_cov_vech_Sigma;
  M.block(L.off_Sigma_prime(), L.off_Sigma_prime(), L.h(), L.h()) =
      report.asy_cov_vech_Sigma_prime;
  M(L.off_sigma2(), L.off_sigma2()) = report.asy_var_sigma2;
  return M;
}

namespace {

Eigen::VectorXd stacked_estimates(const ModelParams& p) {
  const int dA = p.d_A();
  const int h = matops::vech_len(dA);
  Eigen::VectorXd v(dA + p.d_B() + 2 * h + 1);
  v << p.beta_A, p.beta_B, matops::vech(p.Sigma), matops::vech(p.Sigma_prime),
      p.sigma2;
  return v;
}

}  // namespace

AsymptoticReport wald_and_ci(const FitResult& fit, AsymptoticReport report,
                             double alpha, const Eigen::VectorXd* theta0) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error("wald_and_ci: alpha must lie in (0, 1)");
  }
  const ModelParams& p = fit.params_hat;
  const ParamLayout L{p.d_A(), p.d_B()};
  const Eigen::VectorXd est = stacked_estimates(p);
  if (theta0 && theta0->size() != est.size()) {
    throw Error("wald_and_ci: theta0 length does not match parameter count");
  }

  Eigen::VectorXd var(L.dim());
  var.segment(L.off_beta_A(), L.d_A) = report.asy_cov_beta_A.diagonal();
  if (L.d_B > 0)
    var.segment(L.off_beta_B(), L.d_B) = report.asy_cov_beta_B.diagonal();
  var.segment(L.off_Sigma(), L.h()) = report.asy_cov_vech_Sigma.diagonal();
  var.segment(L.off_Sigma_prime(), L.h()) =
      report.asy_cov_vech_Sigma_prime.diagonal();
  var(L.off_sigma2()) = report.asy_var_sigma2;

  const double zcrit = normal_quantile(1.0 - alpha / 2.0);
  const std::vector<std::string> names = L.names();

  report.alpha = alpha;
  report.params.clear();
  report.params.reserve(L.dim());
  for (int j = 0; j < L.dim(); ++j) {
    if (!(var(j) > 0.0)) {
      throw DegenerateInferenceError("wald_and_ci: zero standard error for " +
                                     names[j]);
    }
    ParamInference row;
    row.name = names[j];
    if (j < L.off_beta_B()) row.block = "beta_A";
    else if (j < L.off_Sigma()) row.block = "beta_B";
    else if (j < L.off_Sigma_prime()) row.block = "Sigma";
    else if (j < L.off_sigma2()) row.block = "Sigma_prime";
    else row.block = "sigma2";
    row.estimate = est(j);
    row.se = std::sqrt(var(j));
    const double center = theta0 ? (*theta0)(j) : 0.0;
    row.z = (est(j) - center) / row.se;
    row.p = 2.0 * normal_cdf(-std::abs(row.z));
    row.p_upper = normal_cdf(-row.z);
    row.ci_low = est(j) - zcrit * row.se;
    row.ci_high = est(j) + zcrit * row.se;
    report.params.push_back(std::move(row));
  }
  return report;
}

DeltaTransformReport delta_transforms(const SymMatrix& Sigma_hat, double m,
                                      double alpha) {
  if (Sigma_hat.dim() != 2) {
    throw Error(
        "delta_transforms: stated for 2 x 2 covariance blocks; use the "
        "vech-scale intervals for other dimensions");
  }
  if (!is_positive_definite(Sigma_hat)) {
    throw Error("delta_transforms: covariance estimate must be positive "
                "definite");
  }
  if (!(m >= 1)) throw Error("delta_transforms: m must be >= 1");

  DeltaTransformReport out;
  out.sigma1_hat = std::sqrt(Sigma_hat(0, 0));
  out.sigma2_hat = std::sqrt(Sigma_hat(1, 1));
  out.rho_hat = Sigma_hat(1, 0) / (out.sigma1_hat * out.sigma2_hat);
  out.se_log_sigma = 1.0 / std::sqrt(2.0 * m);
  out.se_atanh_rho = 1.0 / std::sqrt(m);

  const double zcrit = normal_quantile(1.0 - alpha / 2.0);
  out.sigma1_ci_low = out.sigma1_hat * std::exp(-zcrit * out.se_log_sigma);
  out.sigma1_ci_high = out.sigma1_hat * std::exp(zcrit * out.se_log_sigma);
  out.sigma2_ci_low = out.sigma2_hat * std::exp(-zcrit * out.se_log_sigma);
  out.sigma2_ci_high = out.sigma2_hat * std::exp(zcrit * out.se_log_sigma);
  const double fz = std::atanh(out.rho_hat);
  out.rho_ci_low = std::tanh(fz - zcrit * out.se_atanh_rho);
  out.rho_ci_high = std::tanh(fz + zcrit * out.se_atanh_rho);
  return out;
}

AsymptoticReport infer(const CrossedDataset& data, const FitResult& fit,
                       const InferenceOptions& opts) {
  const ModelParams& p = fit.params_hat;
  const Eigen::MatrixXd C = estimate_C_beta_B(data);
  AsymptoticReport rep = result1_covariances(
      p, data.m(), data.m_prime(), data.n_bar(), C, opts.regime);

  if (opts.use_exact_fisher) {
    const FisherMatrix F = fisher_exact(data, p);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(F.mat);
    if (ldlt.info() != Eigen::Success) {
      throw IllConditionedError(
          "infer: exact Fisher information is not invertible", 0.0);
    }
    const Eigen::MatrixXd Finv =
        ldlt.solve(Eigen::MatrixXd::Identity(F.mat.rows(), F.mat.cols()));
    const ParamLayout& L = F.layout;
    rep.asy_cov_beta_A = Finv.block(L.off_beta_A(), L.off_beta_A(), L.d_A, L.d_A);
    if (L.d_B > 0)
      rep.asy_cov_beta_B =
          Finv.block(L.off_beta_B(), L.off_beta_B(), L.d_B, L.d_B);
    rep.asy_cov_vech_Sigma =
        Finv.block(L.off_Sigma(), L.off_Sigma(), L.h(), L.h());
    rep.asy_cov_vech_Sigma_prime = Finv.block(
        L.off_Sigma_prime(), L.off_Sigma_prime(), L.h(), L.h());
    rep.asy_var_sigma2 = Finv(L.off_sigma2(), L.off_sigma2());
  }
  return wald_and_ci(fit, std::move(rep), opts.alpha);
}

}  // namespace crelmm
