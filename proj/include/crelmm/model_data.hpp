#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "crelmm/errors.hpp"
#include "crelmm/matops.hpp"

namespace crelmm {

// Observations of one (row-factor, column-factor) cell.
struct CellBlock {
  Eigen::VectorXd y;   // n_cell responses
  Eigen::MatrixXd XA;  // n_cell x d_A predictors partnered by random effects
  Eigen::MatrixXd XB;  // n_cell x d_B plain fixed-effect predictors (d_B may be 0)
};

// Full model parameter tuple (beta_A, beta_B, Sigma, Sigma', sigma^2).
struct ModelParams {
  ModelParams(Eigen::VectorXd beta_A, Eigen::VectorXd beta_B, SymMatrix Sigma,
              SymMatrix Sigma_prime, double sigma2);

  Eigen::VectorXd beta_A;
  Eigen::VectorXd beta_B;
  SymMatrix Sigma;        // d_A x d_A, positive definite
  SymMatrix Sigma_prime;  // d_A x d_A, positive definite
  double sigma2;          // > 0

  int d_A() const { return Sigma.dim(); }
  int d_B() const { return static_cast<int>(beta_B.size()); }
};

// Returns true when M has a successful Cholesky factorization.
bool is_positive_definite(const SymMatrix& M);

// Complete m x m' grid of cells, indexed densely. Cell (i, i') is stored at
// position i * m' + i' (both 0-based); stacked row order is i outer, i'
// inner, within-cell order preserved.
class CrossedDataset {
 public:
  CrossedDataset(int m, int m_prime, std::vector<CellBlock> cells,
                 std::vector<std::string> row_labels = {},
                 std::vector<std::string> col_labels = {});

  int m() const { return m_; }
  int m_prime() const { return m_prime_; }
  int d_A() const { return d_A_; }
  int d_B() const { return d_B_; }
  int n_total() const { return n_total_; }
  double n_bar() const {
    return static_cast<double>(n_total_) / (static_cast<double>(m_) * m_prime_);
  }

  const CellBlock& cell(int i, int ip) const {
    return cells_[static_cast<std::size_t>(i) * m_prime_ + ip];
  }
  int cell_count(int i, int ip) const {
    return static_cast<int>(cell(i, ip).y.size());
  }
  // Row offset of cell (i, i') in the stacked order.
  int cell_offset(int i, int ip) const {
    return offsets_[static_cast<std::size_t>(i) * m_prime_ + ip];
  }
  // Row offset and total size of row-factor block i in the stacked order.
  int row_block_offset(int i) const { return cell_offset(i, 0); }
  int row_block_size(int i) const { return row_sizes_[i]; }

  const std::vector<std::string>& row_labels() const { return row_labels_; }
  const std::vector<std::string>& col_labels() const { return col_labels_; }

 private:
  int m_, m_prime_, d_A_, d_B_, n_total_;
  std::vector<CellBlock> cells_;
  std::vector<int> offsets_;
  std::vector<int> row_sizes_;
  std::vector<std::string> row_labels_, col_labels_;
};

// Maps CSV header names to model roles.
struct ColumnSchema {
  std::string row_factor;
  std::string col_factor;
  std::string response;
  std::vector<std::string> xA;  // may be empty when add_intercept_A is set
  std::vector<std::string> xB;  // may be empty (d_B = 0)
  bool add_intercept_A = false;  // prepend a column of ones to X_A
};

// Reads a UTF-8 CSV with a header row. Factor levels may be arbitrary
// strings; they are re-indexed densely in first-appearance order with the
// original labels retained. Every (i, i') combination must appear.
CrossedDataset load_csv(const std::string& path, const ColumnSchema& schema);

// Writes the dataset so that load_csv(save_csv(data)) reproduces it
// bit-identically (doubles serialized with round-trip precision). The
// schema's add_intercept_A flag is ignored: stored X_A columns are written
// as they are.
void save_csv(const std::string& path, const CrossedDataset& data,
              const ColumnSchema& schema);

struct StackedDesign {
  Eigen::MatrixXd XA;  // n_total x d_A
  Eigen::MatrixXd XB;  // n_total x d_B
  Eigen::VectorXd y;   // n_total
};

// Stacks cell blocks in (i outer, i' inner) order.
StackedDesign stack_designs(const CrossedDataset& data);

// Random-effects design Z = [blockdiag_i{stack_i'(XA_ii')}
//                            stack_i{blockdiag_i'(XA_ii')}],
// size n_total x (m + m') d_A, satisfying V = Z G Z^T + sigma^2 I with
// G = blockdiag(I_m (x) Sigma, I_m' (x) Sigma').
Eigen::MatrixXd build_Z(const CrossedDataset& data);

}  // namespace crelmm
