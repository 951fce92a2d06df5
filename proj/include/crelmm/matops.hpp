#pragma once

#include <Eigen/Dense>

#include "crelmm/errors.hpp"

namespace crelmm {

// Absolute tolerance for accepting a matrix as symmetric on construction.
inline constexpr double kSymmetryTol = 1e-12;

// Dense symmetric matrix with validated construction. Inputs within the
// symmetry tolerance are symmetrized as (A + A^T)/2 so downstream products
// cannot accumulate asymmetry drift.
class SymMatrix {
 public:
  explicit SymMatrix(Eigen::MatrixXd A, double tol = kSymmetryTol);
  static SymMatrix Identity(int d);

  const Eigen::MatrixXd& mat() const { return mat_; }
  int dim() const { return static_cast<int>(mat_.rows()); }
  double operator()(int r, int s) const { return mat_(r, s); }

 private:
  Eigen::MatrixXd mat_;
};

namespace matops {

// Length of vech for a d x d symmetric matrix.
inline int vech_len(int d) { return d * (d + 1) / 2; }

// 0-based position of entry (r, s), r >= s, in the columnwise
// lower-triangle ordering (0,0),(1,0),...,(d-1,0),(1,1),(2,1),...
int vech_index(int r, int s, int d);

// Column-stacked lower triangle of a symmetric matrix.
Eigen::VectorXd vech(const SymMatrix& A);

// Inverse of vech: rebuild the symmetric matrix from its lower triangle.
Eigen::MatrixXd unvech(const Eigen::VectorXd& v);

// Duplication matrix D_d (d^2 x d(d+1)/2, zero/one entries) satisfying
// D_d * vech(A) = vec(A) for every symmetric A.
Eigen::MatrixXd duplication_matrix(int d);

// Moore-Penrose inverse D_d^+ = (D_d^T D_d)^{-1} D_d^T, satisfying
// D_d^+ * vec(A) = vech(A) for symmetric A.
Eigen::MatrixXd duplication_pinv(int d);

// Dense Kronecker product A (x) B.
Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

// D_d^T (A (x) A) D_d assembled from the entrywise rules
//   (A_rr A_tt)            -> A_rt^2
//   (A_rr A_tu), t != u    -> 2 A_rt A_ru
//   (A_rs A_tu), r!=s,t!=u -> 2 (A_rt A_su + A_ru A_st)
// indexed by positions of vech(A) vech(A)^T.
SymMatrix kron_sym_quadform(const SymMatrix& A);

// (X A X^T + lambda I)^{-1} rhs through the d-dimensional inner solve
//   (1/lambda) rhs - (1/lambda^2) X (A^{-1} + X^T X / lambda)^{-1} X^T rhs.
// Never forms the n x n inverse. A must be positive definite, lambda > 0.
Eigen::MatrixXd woodbury_inverse_apply(const Eigen::MatrixXd& X,
                                       const SymMatrix& A, double lambda,
                                       const Eigen::MatrixXd& rhs);

// X^T (X A X^T + lambda I)^{-1} X computed as {A + lambda (X^T X)^{-1}}^{-1}.
SymMatrix corollary21c(const Eigen::MatrixXd& X, const SymMatrix& A,
                       double lambda);

// X^T (X A X^T + lambda I)^{-2} X computed as
// {A + lambda (X^T X)^{-1}}^{-1} (X^T X)^{-1} {A + lambda (X^T X)^{-1}}^{-1}.
SymMatrix lemma3_squared_form(const Eigen::MatrixXd& X, const SymMatrix& A,
                              double lambda);

// [I; I]^T [[A, B], [B, A]]^{-1} [I; I], assembled through the 2d x 2d block
// solve. Equals 2 (A + B)^{-1} when A + B is invertible.
SymMatrix lemma4_block_identity(const SymMatrix& A, const SymMatrix& B);

}  // namespace matops
}  // namespace crelmm
