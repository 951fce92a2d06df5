#include "crelmm/cov_struct.hpp"

#include <cmath>
#include <string>

namespace crelmm {

SymMatrix build_V_dense(const CrossedDataset& data, const ModelParams& params,
                        int guard) {
  const int n = data.n_total();
  if (n > guard) {
    throw CapacityError(
        "build_V_dense: n_total = " + std::to_string(n) +
        " exceeds the dense guard (" + std::to_string(guard) +
        "); use VOperator for the structured path");
  }
  Eigen::MatrixXd V = params.sigma2 * Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < data.m(); ++i) {
    for (int ip = 0; ip < data.m_prime(); ++ip) {
      const CellBlock& a = data.cell(i, ip);
      const int off_a = data.cell_offset(i, ip);
      // row-factor term: same i, all column pairs (i', ~i')
      for (int jp = 0; jp < data.m_prime(); ++jp) {
        const CellBlock& b = data.cell(i, jp);
        V.block(off_a, data.cell_offset(i, jp), a.y.size(), b.y.size()) +=
            a.XA * params.Sigma.mat() * b.XA.transpose();
      }
      // column-factor term: same i', all row pairs (i, ~i)
      for (int j = 0; j < data.m(); ++j) {
        const CellBlock& b = data.cell(j, ip);
        V.block(off_a, data.cell_offset(j, ip), a.y.size(), b.y.size()) +=
            a.XA * params.Sigma_prime.mat() * b.XA.transpose();
      }
    }
  }
  return SymMatrix(0.5 * (V + V.transpose()), 1e-9);
}

namespace {

// log|M| and M^{-1} from one Cholesky; throws on non-PD input.
struct CholInfo {
  Eigen::MatrixXd inverse;
  double logdet;
};

CholInfo chol_inverse(const Eigen::MatrixXd& M, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) {
    throw IllConditionedError(
        std::string(what) + ": Cholesky factorization failed", 0.0);
  }
  CholInfo out;
  out.inverse = llt.solve(Eigen::MatrixXd::Identity(M.rows(), M.cols()));
  out.logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return out;
}

}  // namespace

VOperator::VOperator(const CrossedDataset& data, const ModelParams& params)
    : data_(&data), params_(params) {
  if (params.d_A() != data.d_A()) {
    throw Error("VOperator: params dimension does not match dataset d_A");
  }
  const int dA = data.d_A();
  const int m = data.m();
  const int mp = data.m_prime();
  const int q = (m + mp) * dA;

  // Z^T Z from per-cell Gram blocks
  ztz_ = Eigen::MatrixXd::Zero(q, q);
  for (int i = 0; i < m; ++i) {
    for (int ip = 0; ip < mp; ++ip) {
      const Eigen::MatrixXd gram =
          data.cell(i, ip).XA.transpose() * data.cell(i, ip).XA;
      ztz_.block(i * dA, i * dA, dA, dA) += gram;
      ztz_.block((m + ip) * dA, (m + ip) * dA, dA, dA) += gram;
      ztz_.block(i * dA, (m + ip) * dA, dA, dA) += gram;
      ztz_.block((m + ip) * dA, i * dA, dA, dA) += gram;
    }
  }

  // C = sigma^2 G^{-1} + Z^T Z with G^{-1} assembled blockwise
  const CholInfo sig = chol_inverse(params_.Sigma.mat(), "VOperator: Sigma");
  const CholInfo sigp =
      chol_inverse(params_.Sigma_prime.mat(), "VOperator: Sigma'");
  logdet_G_ = m * sig.logdet + mp * sigp.logdet;

  Eigen::MatrixXd C = ztz_;
  for (int i = 0; i < m; ++i) {
    C.block(i * dA, i * dA, dA, dA) += params_.sigma2 * sig.inverse;
  }
  for (int ip = 0; ip < mp; ++ip) {
    C.block((m + ip) * dA, (m + ip) * dA, dA, dA) +=
        params_.sigma2 * sigp.inverse;
  }
  cap_llt_.compute(C);
  if (cap_llt_.info() != Eigen::Success) {
    const double min_pivot = cap_llt_.matrixLLT().diagonal().minCoeff();
    throw IllConditionedError(
        "VOperator: capacitance factorization failed (min pivot " +
            std::to_string(min_pivot) + ")",
        0.0);
  }
  rcond_ = cap_llt_.rcond();
  logdet_cap_ = 2.0 * cap_llt_.matrixLLT().diagonal().array().log().sum();
}

Eigen::MatrixXd VOperator::z_mul(const Eigen::MatrixXd& u) const {
  const int dA = data_->d_A();
  const int m = data_->m();
  Eigen::MatrixXd out(data_->n_total(), u.cols());
  for (int i = 0; i < m; ++i) {
    for (int ip = 0; ip < data_->m_prime(); ++ip) {
      const CellBlock& c = data_->cell(i, ip);
      out.middleRows(data_->cell_offset(i, ip), c.y.size()) =
          c.XA * (u.middleRows(i * dA, dA) + u.middleRows((m + ip) * dA, dA));
    }
  }
  return out;
}

Eigen::MatrixXd VOperator::z_tmul(const Eigen::MatrixXd& v) const {
  const int dA = data_->d_A();
  const int m = data_->m();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(q(), v.cols());
  for (int i = 0; i < m; ++i) {
    for (int ip = 0; ip < data_->m_prime(); ++ip) {
      const CellBlock& c = data_->cell(i, ip);
      const Eigen::MatrixXd t =
          c.XA.transpose() *
          v.middleRows(data_->cell_offset(i, ip), c.y.size());
      out.middleRows(i * dA, dA) += t;
      out.middleRows((m + ip) * dA, dA) += t;
    }
  }
  return out;
}

Eigen::MatrixXd VOperator::capacitance_solve(const Eigen::MatrixXd& rhs) const {
  return cap_llt_.solve(rhs);
}

Eigen::MatrixXd VOperator::solve(const Eigen::MatrixXd& rhs) const {
  return (rhs - z_mul(cap_llt_.solve(z_tmul(rhs)))) / params_.sigma2;
}

double VOperator::logdet() const {
  return (data_->n_total() - q()) * std::log(params_.sigma2) + logdet_G_ +
         logdet_cap_;
}

}  // namespace crelmm
