#include "crelmm/matops.hpp"

#include <cmath>
#include <string>

namespace crelmm {

SymMatrix::SymMatrix(Eigen::MatrixXd A, double tol) {
  if (A.rows() != A.cols() || A.rows() < 1) {
    throw Error("SymMatrix: matrix must be square with dimension >= 1, got " +
                std::to_string(A.rows()) + "x" + std::to_string(A.cols()));
  }
  const double asym = (A - A.transpose()).cwiseAbs().maxCoeff();
  if (asym > tol) {
    throw SymmetryError("SymMatrix: max |A - A^T| entry " +
                            std::to_string(asym) + " exceeds tolerance " +
                            std::to_string(tol),
                        asym);
  }
  mat_ = 0.5 * (A + A.transpose());
}

SymMatrix SymMatrix::Identity(int d) {
  return SymMatrix(Eigen::MatrixXd::Identity(d, d));
}

namespace matops {

int vech_index(int r, int s, int d) {
  // entries of columns 0..s-1 precede column s; column s starts at row s
  return s * d - s * (s - 1) / 2 + (r - s);
}

Eigen::VectorXd vech(const SymMatrix& A) {
  const int d = A.dim();
  Eigen::VectorXd v(vech_len(d));
  int k = 0;
  for (int s = 0; s < d; ++s)
    for (int r = s; r < d; ++r) v(k++) = A(r, s);
  return v;
}

Eigen::MatrixXd unvech(const Eigen::VectorXd& v) {
  // solve d(d+1)/2 = len for d
  const int len = static_cast<int>(v.size());
  const int d = static_cast<int>(std::lround((std::sqrt(8.0 * len + 1.0) - 1.0) / 2.0));
  if (vech_len(d) != len) {
    throw Error("unvech: length " + std::to_string(len) +
                " is not a triangular number");
  }
  Eigen::MatrixXd A(d, d);
  int k = 0;
  for (int s = 0; s < d; ++s)
    for (int r = s; r < d; ++r) {
      A(r, s) = v(k);
      A(s, r) = v(k);
      ++k;
    }
  return A;
}

Eigen::MatrixXd duplication_matrix(int d) {
  if (d < 1) throw Error("duplication_matrix: d must be >= 1");
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(d * d, vech_len(d));
  for (int c = 0; c < d; ++c)
    for (int r = 0; r < d; ++r) {
      const int vec_pos = c * d + r;  // vec stacks columns
      const int vech_pos = r >= c ? vech_index(r, c, d) : vech_index(c, r, d);
      D(vec_pos, vech_pos) = 1.0;
    }
  return D;
}

Eigen::MatrixXd duplication_pinv(int d) {
  const Eigen::MatrixXd D = duplication_matrix(d);
  // D^T D is diagonal: 1 for diagonal positions of A, 2 for off-diagonal
  Eigen::VectorXd dtd = (D.transpose() * D).diagonal();
  return dtd.cwiseInverse().asDiagonal() * D.transpose();
}

Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd K(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return K;
}

SymMatrix kron_sym_quadform(const SymMatrix& A) {
  const int d = A.dim();
  const int h = vech_len(d);
  Eigen::MatrixXd B(h, h);
  int a = 0;
  for (int s = 0; s < d; ++s)
    for (int r = s; r < d; ++r, ++a) {
      int b = 0;
      for (int u = 0; u < d; ++u)
        for (int t = u; t < d; ++t, ++b) {
          double val;
          if (r == s && t == u) {
            val = A(r, t) * A(r, t);
          } else if (r == s) {  // t != u
            val = 2.0 * A(r, t) * A(r, u);
          } else if (t == u) {  // r != s
            val = 2.0 * A(t, r) * A(t, s);
          } else {
            val = 2.0 * (A(r, t) * A(s, u) + A(r, u) * A(s, t));
          }
          B(a, b) = val;
        }
    }
  return SymMatrix(B, 1e-9);
}

namespace {

// Cholesky with a positive-definiteness check; `what` names the matrix in
// the error message.
Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& M,
                                        const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) {
    const double min_diag = llt.matrixLLT().diagonal().minCoeff();
    throw IllConditionedError(
        std::string(what) + ": Cholesky factorization failed (min pivot " +
            std::to_string(min_diag) + ")",
        0.0);
  }
  return llt;
}

}  // namespace

Eigen::MatrixXd woodbury_inverse_apply(const Eigen::MatrixXd& X,
                                       const SymMatrix& A, double lambda,
                                       const Eigen::MatrixXd& rhs) {
  if (lambda <= 0.0) throw Error("woodbury_inverse_apply: lambda must be > 0");
  if (X.rows() != rhs.rows() || X.cols() != A.dim()) {
    throw Error("woodbury_inverse_apply: dimension mismatch");
  }
  const auto lltA = checked_llt(A.mat(), "woodbury_inverse_apply: A");
  const int d = A.dim();
  Eigen::MatrixXd inner =
      lltA.solve(Eigen::MatrixXd::Identity(d, d)) +
      (X.transpose() * X) / lambda;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt_inner(inner);
  if (llt_inner.info() != Eigen::Success || llt_inner.rcond() < 1e-14) {
    throw IllConditionedError(
        "woodbury_inverse_apply: inner matrix A^{-1} + X^T X / lambda is "
        "numerically singular",
        llt_inner.info() == Eigen::Success ? 1.0 / llt_inner.rcond() : 0.0);
  }
  return rhs / lambda -
         X * llt_inner.solve(X.transpose() * rhs) / (lambda * lambda);
}

namespace {

// {A + lambda (X^T X)^{-1}} and (X^T X)^{-1}, shared by the two lemma forms.
struct ShiftedForm {
  Eigen::MatrixXd xtx_inv;
  Eigen::MatrixXd shifted;  // A + lambda (X^T X)^{-1}
};

ShiftedForm shifted_form(const Eigen::MatrixXd& X, const SymMatrix& A,
                         double lambda, const char* what) {
  if (X.cols() != A.dim()) throw Error(std::string(what) + ": dimension mismatch");
  const Eigen::MatrixXd xtx = X.transpose() * X;
  Eigen::LLT<Eigen::MatrixXd> llt(xtx);
  if (llt.info() != Eigen::Success) {
    throw RankDeficiencyError(std::string(what) +
                              ": X^T X is not invertible (X rank deficient)");
  }
  ShiftedForm f;
  f.xtx_inv = llt.solve(Eigen::MatrixXd::Identity(A.dim(), A.dim()));
  f.shifted = A.mat() + lambda * f.xtx_inv;
  return f;
}

Eigen::MatrixXd checked_inverse(const Eigen::MatrixXd& M, const char* what) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
  if (!lu.isInvertible()) {
    throw SingularMatrixError(std::string(what) + ": matrix is singular");
  }
  return lu.inverse();
}

}  // namespace

SymMatrix corollary21c(const Eigen::MatrixXd& X, const SymMatrix& A,
                       double lambda) {
  const ShiftedForm f = shifted_form(X, A, lambda, "corollary21c");
  const Eigen::MatrixXd R =
      checked_inverse(f.shifted, "corollary21c: A + lambda (X^T X)^{-1}");
  return SymMatrix(0.5 * (R + R.transpose()), 1e-9);
}

SymMatrix lemma3_squared_form(const Eigen::MatrixXd& X, const SymMatrix& A,
                              double lambda) {
  const ShiftedForm f = shifted_form(X, A, lambda, "lemma3_squared_form");
  const Eigen::MatrixXd S_inv = checked_inverse(
      f.shifted, "lemma3_squared_form: A + lambda (X^T X)^{-1}");
  const Eigen::MatrixXd R = S_inv * f.xtx_inv * S_inv;
  return SymMatrix(0.5 * (R + R.transpose()), 1e-9);
}

SymMatrix lemma4_block_identity(const SymMatrix& A, const SymMatrix& B) {
  if (A.dim() != B.dim()) throw Error("lemma4_block_identity: dimension mismatch");
  const int d = A.dim();
  {
    Eigen::FullPivLU<Eigen::MatrixXd> lu_sum(A.mat() + B.mat());
    if (!lu_sum.isInvertible()) {
      throw SingularMatrixError("lemma4_block_identity: A + B is singular");
    }
  }
  Eigen::MatrixXd M(2 * d, 2 * d);
  M.topLeftCorner(d, d) = A.mat();
  M.topRightCorner(d, d) = B.mat();
  M.bottomLeftCorner(d, d) = B.mat();
  M.bottomRightCorner(d, d) = A.mat();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
  if (!lu.isInvertible()) {
    throw SingularMatrixError(
        "lemma4_block_identity: block matrix [[A,B],[B,A]] is singular");
  }
  Eigen::MatrixXd stacked(2 * d, d);
  stacked.topRows(d) = Eigen::MatrixXd::Identity(d, d);
  stacked.bottomRows(d) = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd solved = lu.solve(stacked);
  const Eigen::MatrixXd R = solved.topRows(d) + solved.bottomRows(d);
  return SymMatrix(0.5 * (R + R.transpose()), 1e-9);
}

}  // namespace matops
}  // namespace crelmm
