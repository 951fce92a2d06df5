#include "crelmm/mle.hpp"

#include <cmath>
#include <limits>

#include "crelmm/matops.hpp"

namespace crelmm {

namespace {

// Lower Cholesky entries, columnwise, diagonal log-transformed.
Eigen::VectorXd pack_chol(const SymMatrix& S) {
  const int d = S.dim();
  Eigen::LLT<Eigen::MatrixXd> llt(S.mat());
  if (llt.info() != Eigen::Success) {
    throw Error("unconstrained_map: covariance block is not positive definite");
  }
  const Eigen::MatrixXd L = llt.matrixL();
  Eigen::VectorXd v(matops::vech_len(d));
  int k = 0;
  for (int s = 0; s < d; ++s)
    for (int r = s; r < d; ++r, ++k) v(k) = r == s ? std::log(L(r, r)) : L(r, s);
  return v;
}

Eigen::MatrixXd unpack_chol_factor(const Eigen::VectorXd& v, int d) {
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(d, d);
  int k = 0;
  for (int s = 0; s < d; ++s)
    for (int r = s; r < d; ++r, ++k) L(r, s) = r == s ? std::exp(v(k)) : v(k);
  return L;
}

SymMatrix unpack_chol(const Eigen::VectorXd& v, int d) {
  const Eigen::MatrixXd L = unpack_chol_factor(v, d);
  return SymMatrix(Eigen::MatrixXd(L * L.transpose()), 1e-9);
}

// Chain rule from the vech-convention score to the log-Cholesky
// coordinates: with G the symmetric full-matrix gradient, dl/dL = 2 G L on
// the lower triangle, and the diagonal picks up a factor L_aa.
Eigen::VectorXd chol_chain_rule(const Eigen::VectorXd& score_vech,
                                const Eigen::MatrixXd& L) {
  const int d = static_cast<int>(L.rows());
  Eigen::MatrixXd G(d, d);
  int k = 0;
  for (int s = 0; s < d; ++s)
    for (int r = s; r < d; ++r, ++k) {
      const double full = r == s ? score_vech(k) : 0.5 * score_vech(k);
      G(r, s) = full;
      G(s, r) = full;
    }
  const Eigen::MatrixXd GL = 2.0 * G * L;
  Eigen::VectorXd out(score_vech.size());
  k = 0;
  for (int s = 0; s < d; ++s)
    for (int r = s; r < d; ++r, ++k)
      out(k) = r == s ? GL(r, r) * L(r, r) : GL(r, s);
  return out;
}

struct VectorLayout {
  int d_A, d_B, h;
  int dim() const { return d_A + d_B + 2 * h + 1; }
  int off_cov() const { return d_A + d_B; }
};

// Jacobian d vech(L L^T) / d phi for one log-Cholesky block:
// d Sigma_rs / d L_ab = delta_ra L_sb + delta_sa L_rb, diagonal phi
// coordinates carry the extra factor L_aa.
Eigen::MatrixXd chol_jacobian(const Eigen::MatrixXd& L) {
  const int d = static_cast<int>(L.rows());
  const int h = matops::vech_len(d);
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(h, h);
  int col = 0;
  for (int b = 0; b < d; ++b)
    for (int a = b; a < d; ++a, ++col) {
      int row = 0;
      for (int s = 0; s < d; ++s)
        for (int r = s; r < d; ++r, ++row) {
          double v = 0.0;
          if (r == a) v += L(s, b);
          if (s == a) v += L(r, b);
          if (a == b) v *= L(a, a);
          J(row, col) = v;
        }
    }
  return J;
}

}  // namespace

Eigen::VectorXd unconstrained_map(const ModelParams& params) {
  const int dA = params.d_A();
  const int h = matops::vech_len(dA);
  Eigen::VectorXd v(dA + params.d_B() + 2 * h + 1);
  v << params.beta_A, params.beta_B, pack_chol(params.Sigma),
      pack_chol(params.Sigma_prime), std::log(params.sigma2);
  return v;
}

ModelParams inverse_map(const Eigen::VectorXd& v, int d_A, int d_B) {
  const int h = matops::vech_len(d_A);
  if (v.size() != d_A + d_B + 2 * h + 1) {
    throw Error("inverse_map: vector length does not match (d_A, d_B)");
  }
  int off = d_A + d_B;
  return ModelParams(v.head(d_A), v.segment(d_A, d_B),
                     unpack_chol(v.segment(off, h), d_A),
                     unpack_chol(v.segment(off + h, h), d_A),
                     std::exp(v(off + 2 * h)));
}

double loglik_unconstrained(const CrossedDataset& data,
                            const Eigen::VectorXd& v) {
  const ModelParams p = inverse_map(v, data.d_A(), data.d_B());
  return loglik(data, p);
}

Eigen::VectorXd score_unconstrained(const CrossedDataset& data,
                                    const Eigen::VectorXd& v) {
  const int dA = data.d_A();
  const int dB = data.d_B();
  const int h = matops::vech_len(dA);
  const ModelParams p = inverse_map(v, dA, dB);
  const ScoreVector sv = score(data, p);

  const int off = dA + dB;
  Eigen::VectorXd g(v.size());
  g.head(dA) = sv.grad_beta_A;
  g.segment(dA, dB) = sv.grad_beta_B;
  g.segment(off, h) =
      chol_chain_rule(sv.grad_vech_Sigma, unpack_chol_factor(v.segment(off, h), dA));
  g.segment(off + h, h) = chol_chain_rule(
      sv.grad_vech_Sigma_prime, unpack_chol_factor(v.segment(off + h, h), dA));
  g(off + 2 * h) = p.sigma2 * sv.grad_sigma2;
  return g;
}

Eigen::VectorXd gls_beta(const VOperator& op) {
  const CrossedDataset& data = op.data();
  const StackedDesign sd = stack_designs(data);
  const int p = data.d_A() + data.d_B();
  Eigen::MatrixXd X(data.n_total(), p);
  X.leftCols(data.d_A()) = sd.XA;
  if (data.d_B() > 0) X.rightCols(data.d_B()) = sd.XB;
  const Eigen::MatrixXd VinvX = op.solve(X);
  const Eigen::MatrixXd A = X.transpose() * VinvX;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(0.5 * (A + A.transpose()));
  if (ldlt.info() != Eigen::Success) {
    throw IllConditionedError("gls_beta: X^T V^{-1} X factorization failed",
                              0.0);
  }
  return ldlt.solve(VinvX.transpose() * sd.y);
}

namespace {

// Method-of-moments starting point: OLS for beta and sigma^2, per-level OLS
// slopes of the OLS residuals for Sigma and Sigma', floored at
// 1e-4 sigma^2 I.
ModelParams default_init(const CrossedDataset& data) {
  const StackedDesign sd = stack_designs(data);
  const int dA = data.d_A();
  const int dB = data.d_B();
  const int p = dA + dB;
  Eigen::MatrixXd X(data.n_total(), p);
  X.leftCols(dA) = sd.XA;
  if (dB > 0) X.rightCols(dB) = sd.XB;

  const Eigen::VectorXd beta =
      (X.transpose() * X).ldlt().solve(X.transpose() * sd.y);
  const Eigen::VectorXd resid = sd.y - X * beta;
  const int dof = std::max(1, data.n_total() - p);
  double sigma2 = resid.squaredNorm() / dof;
  if (!(sigma2 > 0.0)) sigma2 = 1e-8;

  // per-level OLS slopes of the residuals on X_A
  auto level_cov = [&](bool by_row) {
    const int levels = by_row ? data.m() : data.m_prime();
    std::vector<Eigen::VectorXd> slopes;
    for (int l = 0; l < levels; ++l) {
      Eigen::MatrixXd G = Eigen::MatrixXd::Zero(dA, dA);
      Eigen::VectorXd b = Eigen::VectorXd::Zero(dA);
      const int outer = by_row ? data.m_prime() : data.m();
      for (int o = 0; o < outer; ++o) {
        const int i = by_row ? l : o;
        const int ip = by_row ? o : l;
        const CellBlock& c = data.cell(i, ip);
        G += c.XA.transpose() * c.XA;
        b += c.XA.transpose() *
             resid.segment(data.cell_offset(i, ip), c.y.size());
      }
      Eigen::LLT<Eigen::MatrixXd> llt(G);
      if (llt.info() == Eigen::Success) slopes.push_back(llt.solve(b));
    }
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dA, dA);
    if (slopes.size() >= 2) {
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(dA);
      for (const auto& s : slopes) mean += s;
      mean /= static_cast<double>(slopes.size());
      for (const auto& s : slopes) cov += (s - mean) * (s - mean).transpose();
      cov /= static_cast<double>(slopes.size() - 1);
    }
    // PD floor
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const double floor = 1e-4 * sigma2;
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
    return SymMatrix(Eigen::MatrixXd(es.eigenvectors() * ev.asDiagonal() *
                                     es.eigenvectors().transpose()),
                     1e-9);
  };

  return ModelParams(beta.head(dA), beta.tail(dB), level_cov(true),
                     level_cov(false), sigma2);
}

}  // namespace

FitResult fit_mle(const CrossedDataset& data, const FitOptions& opts) {
  const int dA = data.d_A();
  const int dB = data.d_B();
  const int h = matops::vech_len(dA);
  const VectorLayout lay{dA, dB, h};
  const int nc = 2 * h + 1;  // covariance block of the unconstrained space
  if (data.n_total() < lay.dim() - h) {
    throw Error("fit_mle: fewer observations than parameters");
  }

  const ModelParams start = opts.init ? *opts.init : default_init(data);
  Eigen::VectorXd v = unconstrained_map(start);
  Eigen::VectorXd psi = v.tail(nc);

  // profiled objective: beta set to its GLS value at each covariance iterate
  Eigen::VectorXd beta = v.head(dA + dB);
  auto eval = [&](const Eigen::VectorXd& psi_cur, bool want_grad,
                  Eigen::VectorXd* grad) {
    Eigen::VectorXd vfull(lay.dim());
    vfull.head(dA + dB) = beta;
    vfull.tail(nc) = psi_cur;
    const ModelParams p = inverse_map(vfull, dA, dB);
    if (!(p.sigma2 > 1e-290)) {
      throw Error("fit_mle: sigma2 underflow during line search");
    }
    const VOperator op(data, p);
    const Eigen::VectorXd b = gls_beta(op);
    const double value = loglik(op, b.head(dA), b.tail(dB));
    if (!std::isfinite(value) || std::abs(value) > 1e15) {
      throw Error("fit_mle: log-likelihood overflow during line search");
    }
    beta = b;
    if (want_grad) {
      vfull.head(dA + dB) = b;
      *grad = score_unconstrained(data, vfull).tail(nc);
    }
    return value;
  };

  FitResult out{start, 0.0, 0, false, 0.0, {}, {}};

  Eigen::VectorXd grad(nc);
  double f = eval(psi, true, &grad);
  out.loglik_trace.push_back(f);
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(nc, nc);

  int it = 0;
  bool line_search_failed = false;
  bool scaled = false;
  int stalled = 0;
  for (; it < opts.max_iterations; ++it) {
    if (grad.cwiseAbs().maxCoeff() <= opts.gradient_tolerance) break;
    if (stalled >= 2) break;  // hand the tail over to the scoring polish

    Eigen::VectorXd dir = H * grad;  // ascent direction
    if (grad.dot(dir) <= 0.0) {
      H.setIdentity();
      dir = grad;
    }
    const double slope = grad.dot(dir);

    // first iterates carry an unscaled Hessian guess; bound the move in the
    // log-parameter space so sigma2 cannot underflow in one jump
    double alpha = std::min(1.0, 2.0 / dir.cwiseAbs().maxCoeff());
    double f_new = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd psi_new;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      psi_new = psi + alpha * dir;
      bool ok = true;
      try {
        f_new = eval(psi_new, false, nullptr);
      } catch (const Error&) {
        ok = false;  // factorization failure along the path; shrink
      }
      if (ok && std::isfinite(f_new) && f_new >= f + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      line_search_failed = true;
      break;
    }

    Eigen::VectorXd grad_new(nc);
    eval(psi_new, true, &grad_new);

    const Eigen::VectorXd s = psi_new - psi;
    const Eigen::VectorXd y = grad_new - grad;  // note: ascent, y = g+ - g
    const double sty = -s.dot(y);               // curvature of -loglik
    if (sty > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        // standard initial scaling of the inverse Hessian guess
        H = (sty / y.squaredNorm()) * Eigen::MatrixXd::Identity(nc, nc);
        scaled = true;
      }
      // BFGS update of the inverse Hessian of -loglik
      const double rho = 1.0 / sty;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(nc, nc);
      H = (I + rho * s * y.transpose()) * H * (I + rho * y * s.transpose()) +
          rho * s * s.transpose();
    }
    stalled = f_new - f < 1e-11 * (1.0 + std::abs(f)) ? stalled + 1 : 0;
    psi = psi_new;
    f = f_new;
    grad = grad_new;
    out.loglik_trace.push_back(f);
  }

  // Expected-information (scoring) polish: near the optimum the norm of the
  // quasi-Newton gradient can stall at the objective's floating-point noise
  // floor; scoring steps with the exact information matrix close the last
  // decades to the stated tolerance.
  for (int polish = 0;
       polish < 20 && it < opts.max_iterations &&
       grad.cwiseAbs().maxCoeff() > opts.gradient_tolerance;
       ++polish) {
    Eigen::VectorXd vtmp(lay.dim());
    vtmp.head(dA + dB) = beta;
    vtmp.tail(nc) = psi;
    const ModelParams p = inverse_map(vtmp, dA, dB);
    const FisherMatrix F = fisher_exact(data, p);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(nc, nc);
    J.topLeftCorner(h, h) = chol_jacobian(unpack_chol_factor(psi.head(h), dA));
    J.block(h, h, h, h) =
        chol_jacobian(unpack_chol_factor(psi.segment(h, h), dA));
    J(2 * h, 2 * h) = p.sigma2;
    Eigen::MatrixXd I_psi = J.transpose() * F.mat.bottomRightCorner(nc, nc) * J;
    I_psi = 0.5 * (I_psi + I_psi.transpose());

    const Eigen::LDLT<Eigen::MatrixXd> ldlt(I_psi);
    Eigen::VectorXd dir =
        ldlt.info() == Eigen::Success ? ldlt.solve(grad).eval() : grad;
    if (!dir.allFinite() || grad.dot(dir) <= 0.0) dir = grad;

    double alpha = std::min(1.0, 2.0 / dir.cwiseAbs().maxCoeff());
    bool accepted = false;
    double f_new = f;
    Eigen::VectorXd psi_new;
    for (int ls = 0; ls < 40; ++ls) {
      psi_new = psi + alpha * dir;
      bool ok = true;
      try {
        f_new = eval(psi_new, false, nullptr);
      } catch (const Error&) {
        ok = false;
      }
      // accept non-decrease up to objective noise: scoring steps close to
      // the optimum improve the gradient more than the value
      if (ok && f_new >= f - 1e-12 * (1.0 + std::abs(f))) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    psi = psi_new;
    eval(psi, true, &grad);
    f = std::max(f, f_new);
    out.loglik_trace.push_back(f);
    ++it;
  }

  Eigen::VectorXd vfull(lay.dim());
  vfull.head(dA + dB) = beta;
  vfull.tail(nc) = psi;
  const Eigen::VectorXd full_grad = score_unconstrained(data, vfull);
  out.params_hat = inverse_map(vfull, dA, dB);
  out.loglik_at_optimum = f;
  out.iterations = it;
  out.gradient_norm = full_grad.cwiseAbs().maxCoeff();
  out.converged = out.gradient_norm <= opts.gradient_tolerance;

  if (!out.converged) {
    out.warnings.push_back(line_search_failed
                               ? "line search failed before reaching tolerance"
                               : "maximum iterations reached");
  }
  const double sigma_hat = std::sqrt(out.params_hat.sigma2);
  const double y_scale = [&] {
    double ss = 0.0;
    for (int i = 0; i < data.m(); ++i)
      for (int ip = 0; ip < data.m_prime(); ++ip)
        ss = std::max(ss, data.cell(i, ip).y.cwiseAbs().maxCoeff());
    return std::max(ss, 1.0);
  }();
  if (sigma_hat < 1e-8 * y_scale) {
    out.warnings.push_back("sigma2 estimate at the boundary (near zero)");
  }
  for (int which = 0; which < 2; ++which) {
    const Eigen::MatrixXd L = unpack_chol_factor(
        psi.segment(which * h, h), dA);
    if (L.diagonal().minCoeff() < 1e-6 * sigma_hat) {
      out.warnings.push_back(which == 0
                                 ? "Sigma estimate near the boundary"
                                 : "Sigma_prime estimate near the boundary");
    }
  }
  return out;
}

}  // namespace crelmm
