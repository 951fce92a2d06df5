#include "crelmm/loglik.hpp"

#include <cmath>

#include "crelmm/matops.hpp"

namespace crelmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Stacked residual y - X_A beta_A - X_B beta_B assembled cell by cell.
Eigen::VectorXd residual(const CrossedDataset& data,
                         const Eigen::VectorXd& beta_A,
                         const Eigen::VectorXd& beta_B) {
  Eigen::VectorXd r(data.n_total());
  for (int i = 0; i < data.m(); ++i) {
    for (int ip = 0; ip < data.m_prime(); ++ip) {
      const CellBlock& c = data.cell(i, ip);
      auto seg = r.segment(data.cell_offset(i, ip), c.y.size());
      seg = c.y - c.XA * beta_A;
      if (data.d_B() > 0) seg -= c.XB * beta_B;
    }
  }
  return r;
}

// tr(A B) for compatible matrices.
double trace_prod(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  return (A.array() * B.transpose().array()).sum();
}

// Shared machinery for the covariance-parameter traces. The derivative of V
// in the Sigma_rs direction is Lb_(r,s) = L_r L_s^T + 1(r!=s) L_s L_r^T,
// where L_r stacks the r-th X_A column per row-factor block; L_r equals a
// sub-column selection of Z, so Z^T L_r is a column selection of Z^T Z and
// every trace collapses to small dense products.
struct CovTraceWork {
  int dA, m, mp;
  double sigma2;
  Eigen::MatrixXd xatxa;               // X_A^T X_A
  std::vector<Eigen::MatrixXd> A;      // dA entries, q x m:   Z^T L_r
  std::vector<Eigen::MatrixXd> CA;     // dA entries, q x m:   C^{-1} Z^T L_r
  std::vector<Eigen::MatrixXd> Ap;     // dA entries, q x mp:  Z^T L'_r
  std::vector<Eigen::MatrixXd> CAp;    // dA entries, q x mp
  std::vector<Eigen::MatrixXd> D;      // dA*dA, m x m diagonal of L_a^T L_b
  std::vector<Eigen::MatrixXd> Dp;     // dA*dA, mp x mp diagonal
  std::vector<Eigen::MatrixXd> E;      // dA*dA, m x mp per-cell cross moments
  Eigen::MatrixXd K;                   // C^{-1} Z^T Z

  explicit CovTraceWork(const VOperator& op) {
    const CrossedDataset& data = op.data();
    dA = data.d_A();
    m = data.m();
    mp = data.m_prime();
    sigma2 = op.sigma2();
    const Eigen::MatrixXd& ztz = op.ztz();
    const int q = op.q();

    A.reserve(dA);
    Ap.reserve(dA);
    for (int a = 0; a < dA; ++a) {
      Eigen::MatrixXd Aa(q, m), Apa(q, mp);
      for (int i = 0; i < m; ++i) Aa.col(i) = ztz.col(i * dA + a);
      for (int ip = 0; ip < mp; ++ip)
        Apa.col(ip) = ztz.col((m + ip) * dA + a);
      CA.push_back(op.capacitance_solve(Aa));
      CAp.push_back(op.capacitance_solve(Apa));
      A.push_back(std::move(Aa));
      Ap.push_back(std::move(Apa));
    }

    xatxa = Eigen::MatrixXd::Zero(dA, dA);
    D.assign(dA * dA, Eigen::MatrixXd::Zero(m, m));
    Dp.assign(dA * dA, Eigen::MatrixXd::Zero(mp, mp));
    E.assign(dA * dA, Eigen::MatrixXd::Zero(m, mp));
    for (int i = 0; i < m; ++i) {
      for (int ip = 0; ip < mp; ++ip) {
        const CellBlock& c = data.cell(i, ip);
        const Eigen::MatrixXd gram = c.XA.transpose() * c.XA;
        xatxa += gram;
        for (int a = 0; a < dA; ++a)
          for (int b = 0; b < dA; ++b) {
            D[a * dA + b](i, i) += gram(a, b);
            Dp[a * dA + b](ip, ip) += gram(a, b);
            E[a * dA + b](i, ip) = gram(a, b);
          }
      }
    }
    K = op.capacitance_solve(ztz);
  }

  // S_ab = L_a^T V^{-1} L_b, an m x m matrix.
  Eigen::MatrixXd S(int a, int b) const {
    return (D[a * dA + b] - A[a].transpose() * CA[b]) / sigma2;
  }
  // S'_ab = L'_a^T V^{-1} L'_b, mp x mp.
  Eigen::MatrixXd Sp(int a, int b) const {
    return (Dp[a * dA + b] - Ap[a].transpose() * CAp[b]) / sigma2;
  }
  // M_ab = L_a^T V^{-1} L'_b, m x mp.
  Eigen::MatrixXd M(int a, int b) const {
    return (E[a * dA + b] - A[a].transpose() * CAp[b]) / sigma2;
  }

  // tr(L_a^T V^{-1} L_b) and the Sigma' analogue.
  double trace_S(int a, int b) const {
    return (xatxa(a, b) - (A[a].array() * CA[b].array()).sum()) / sigma2;
  }
  double trace_Sp(int a, int b) const {
    return (xatxa(a, b) - (Ap[a].array() * CAp[b].array()).sum()) / sigma2;
  }

  // tr(L_a^T V^{-2} L_b) and the Sigma' analogue.
  double trace_S2(int a, int b, const Eigen::MatrixXd& ztz) const {
    return (xatxa(a, b) - 2.0 * (A[a].array() * CA[b].array()).sum() +
            (CA[a].array() * (ztz * CA[b]).array()).sum()) /
           (sigma2 * sigma2);
  }
  double trace_Sp2(int a, int b, const Eigen::MatrixXd& ztz) const {
    return (xatxa(a, b) - 2.0 * (Ap[a].array() * CAp[b].array()).sum() +
            (CAp[a].array() * (ztz * CAp[b]).array()).sum()) /
           (sigma2 * sigma2);
  }

  double trace_Vinv(int n_total) const {
    return (n_total - K.trace()) / sigma2;
  }
  double trace_Vinv2(int n_total) const {
    return (n_total - 2.0 * K.trace() + trace_prod(K, K)) / (sigma2 * sigma2);
  }
};

}  // namespace

std::vector<std::string> ParamLayout::names() const {
  std::vector<std::string> out;
  out.reserve(dim());
  for (int k = 0; k < d_A; ++k)
    out.push_back("beta_A[" + std::to_string(k + 1) + "]");
  for (int k = 0; k < d_B; ++k)
    out.push_back("beta_B[" + std::to_string(k + 1) + "]");
  for (int s = 0; s < d_A; ++s)
    for (int r = s; r < d_A; ++r)
      out.push_back("Sigma[" + std::to_string(r + 1) + "," +
                    std::to_string(s + 1) + "]");
  for (int s = 0; s < d_A; ++s)
    for (int r = s; r < d_A; ++r)
      out.push_back("Sigma_prime[" + std::to_string(r + 1) + "," +
                    std::to_string(s + 1) + "]");
  out.push_back("sigma2");
  return out;
}

Eigen::VectorXd ScoreVector::stacked() const {
  const int dA = static_cast<int>(grad_beta_A.size());
  const int dB = static_cast<int>(grad_beta_B.size());
  const int h = static_cast<int>(grad_vech_Sigma.size());
  Eigen::VectorXd v(dA + dB + 2 * h + 1);
  v << grad_beta_A, grad_beta_B, grad_vech_Sigma, grad_vech_Sigma_prime,
      grad_sigma2;
  return v;
}

double loglik(const VOperator& op, const Eigen::VectorXd& beta_A,
              const Eigen::VectorXd& beta_B) {
  const CrossedDataset& data = op.data();
  const Eigen::VectorXd r = residual(data, beta_A, beta_B);
  const Eigen::VectorXd w = op.solve(r);
  return -0.5 * data.n_total() * kLog2Pi - 0.5 * op.logdet() -
         0.5 * r.dot(w);
}

double loglik(const CrossedDataset& data, const ModelParams& params) {
  return loglik(VOperator(data, params), params.beta_A, params.beta_B);
}

ScoreVector score(const VOperator& op, const Eigen::VectorXd& beta_A,
                  const Eigen::VectorXd& beta_B) {
  const CrossedDataset& data = op.data();
  const int dA = data.d_A();
  const int dB = data.d_B();
  const int h = matops::vech_len(dA);

  const Eigen::VectorXd r = residual(data, beta_A, beta_B);
  const Eigen::VectorXd w = op.solve(r);

  ScoreVector sv;
  sv.grad_beta_A = Eigen::VectorXd::Zero(dA);
  sv.grad_beta_B = Eigen::VectorXd::Zero(dB);
  for (int i = 0; i < data.m(); ++i) {
    for (int ip = 0; ip < data.m_prime(); ++ip) {
      const CellBlock& c = data.cell(i, ip);
      const auto wseg = w.segment(data.cell_offset(i, ip), c.y.size());
      sv.grad_beta_A += c.XA.transpose() * wseg;
      if (dB > 0) sv.grad_beta_B += c.XB.transpose() * wseg;
    }
  }

  const CovTraceWork work(op);

  // L_r^T w and L'_r^T w are sub-blocks of Z^T w
  const Eigen::VectorXd zw = op.z_tmul(w);
  const int m = data.m();
  auto Lw = [&](int a) {
    Eigen::VectorXd v(m);
    for (int i = 0; i < m; ++i) v(i) = zw(i * dA + a);
    return v;
  };
  auto Lpw = [&](int a) {
    Eigen::VectorXd v(data.m_prime());
    for (int ip = 0; ip < data.m_prime(); ++ip) v(ip) = zw((m + ip) * dA + a);
    return v;
  };

  sv.grad_vech_Sigma.resize(h);
  sv.grad_vech_Sigma_prime.resize(h);
  int k = 0;
  for (int s = 0; s < dA; ++s) {
    for (int r_ = s; r_ < dA; ++r_, ++k) {
      const double mult = (r_ == s) ? 1.0 : 2.0;
      sv.grad_vech_Sigma(k) =
          0.5 * mult * (Lw(r_).dot(Lw(s)) - work.trace_S(r_, s));
      sv.grad_vech_Sigma_prime(k) =
          0.5 * mult * (Lpw(r_).dot(Lpw(s)) - work.trace_Sp(r_, s));
    }
  }

  sv.grad_sigma2 =
      0.5 * (w.squaredNorm() - work.trace_Vinv(data.n_total()));
  return sv;
}

ScoreVector score(const CrossedDataset& data, const ModelParams& params) {
  return score(VOperator(data, params), params.beta_A, params.beta_B);
}

FisherMatrix fisher_exact(const VOperator& op) {
  const CrossedDataset& data = op.data();
  FisherMatrix F;
  F.layout = ParamLayout{data.d_A(), data.d_B()};
  const ParamLayout& L = F.layout;
  F.mat = Eigen::MatrixXd::Zero(L.dim(), L.dim());

  // beta block: [X_A X_B]^T V^{-1} [X_A X_B]
  const StackedDesign sd = stack_designs(data);
  Eigen::MatrixXd X(data.n_total(), L.d_A + L.d_B);
  X.leftCols(L.d_A) = sd.XA;
  if (L.d_B > 0) X.rightCols(L.d_B) = sd.XB;
  const Eigen::MatrixXd beta_block = X.transpose() * op.solve(X);
  F.mat.topLeftCorner(L.d_A + L.d_B, L.d_A + L.d_B) =
      0.5 * (beta_block + beta_block.transpose());

  const CovTraceWork work(op);
  const int dA = L.d_A;
  const int h = L.h();

  // cache the small S, S', M matrices per (a, b) index pair
  std::vector<Eigen::MatrixXd> S(dA * dA), Sp(dA * dA), M(dA * dA);
  for (int a = 0; a < dA; ++a)
    for (int b = 0; b < dA; ++b) {
      S[a * dA + b] = work.S(a, b);
      Sp[a * dA + b] = work.Sp(a, b);
      M[a * dA + b] = work.M(a, b);
    }
  auto Sm = [&](int a, int b) -> const Eigen::MatrixXd& { return S[a * dA + b]; };
  auto Spm = [&](int a, int b) -> const Eigen::MatrixXd& { return Sp[a * dA + b]; };
  auto Mm = [&](int a, int b) -> const Eigen::MatrixXd& { return M[a * dA + b]; };

  // (vech Sigma, vech Sigma), (vech Sigma', vech Sigma'), and the cross
  // block, each entry (1/2) tr(V^{-1} Lb_(r,s) V^{-1} Lb_(t,u)) expanded
  // over the one or two terms of each Lb factor.
  std::vector<std::pair<int, int>> idx;
  idx.reserve(h);
  for (int s = 0; s < dA; ++s)
    for (int r = s; r < dA; ++r) idx.emplace_back(r, s);

  for (int ka = 0; ka < h; ++ka) {
    const auto [r, s] = idx[ka];
    for (int kb = ka; kb < h; ++kb) {
      const auto [t, u] = idx[kb];
      double v_sig = trace_prod(Sm(u, r), Sm(s, t));
      double v_sigp = trace_prod(Spm(u, r), Spm(s, t));
      if (t != u) {
        v_sig += trace_prod(Sm(t, r), Sm(s, u));
        v_sigp += trace_prod(Spm(t, r), Spm(s, u));
      }
      if (r != s) {
        v_sig += trace_prod(Sm(u, s), Sm(r, t));
        v_sigp += trace_prod(Spm(u, s), Spm(r, t));
        if (t != u) {
          v_sig += trace_prod(Sm(t, s), Sm(r, u));
          v_sigp += trace_prod(Spm(t, s), Spm(r, u));
        }
      }
      F.mat(L.off_Sigma() + ka, L.off_Sigma() + kb) = 0.5 * v_sig;
      F.mat(L.off_Sigma() + kb, L.off_Sigma() + ka) = 0.5 * v_sig;
      F.mat(L.off_Sigma_prime() + ka, L.off_Sigma_prime() + kb) = 0.5 * v_sigp;
      F.mat(L.off_Sigma_prime() + kb, L.off_Sigma_prime() + ka) = 0.5 * v_sigp;
    }
    // cross block is not symmetric in (ka, kb); loop over all pairs
    for (int kb = 0; kb < h; ++kb) {
      const auto [t, u] = idx[kb];
      double v = trace_prod(Mm(r, u).transpose(), Mm(s, t));
      if (t != u) v += trace_prod(Mm(r, t).transpose(), Mm(s, u));
      if (r != s) {
        v += trace_prod(Mm(s, u).transpose(), Mm(r, t));
        if (t != u) v += trace_prod(Mm(s, t).transpose(), Mm(r, u));
      }
      F.mat(L.off_Sigma() + ka, L.off_Sigma_prime() + kb) = 0.5 * v;
      F.mat(L.off_Sigma_prime() + kb, L.off_Sigma() + ka) = 0.5 * v;
    }
    // (vech, sigma^2) entries: (1/2) tr(V^{-2} Lb_(r,s))
    const double mult = (r == s) ? 1.0 : 2.0;
    const double v_s2 = 0.5 * mult * work.trace_S2(r, s, op.ztz());
    const double v_sp2 = 0.5 * mult * work.trace_Sp2(r, s, op.ztz());
    F.mat(L.off_Sigma() + ka, L.off_sigma2()) = v_s2;
    F.mat(L.off_sigma2(), L.off_Sigma() + ka) = v_s2;
    F.mat(L.off_Sigma_prime() + ka, L.off_sigma2()) = v_sp2;
    F.mat(L.off_sigma2(), L.off_Sigma_prime() + ka) = v_sp2;
  }

  F.mat(L.off_sigma2(), L.off_sigma2()) =
      0.5 * work.trace_Vinv2(data.n_total());
  return F;
}

FisherMatrix fisher_exact(const CrossedDataset& data,
                          const ModelParams& params) {
  return fisher_exact(VOperator(data, params));
}

}  // namespace crelmm
