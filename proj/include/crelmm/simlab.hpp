#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "crelmm/asymptotics.hpp"
#include "crelmm/design_power.hpp"
#include "crelmm/mle.hpp"

namespace crelmm {

// Primitive randomness feeding the predictor columns. One value per source
// per observation row; sources are mutually independent.
struct SourceSpec {
  enum class Kind { constant, bernoulli, uniform, gaussian };
  Kind kind = Kind::constant;
  double a = 1.0;  // constant value | Bernoulli p | Uniform lower | mean
  double b = 0.0;  // Uniform upper | standard deviation

  double draw(std::mt19937_64& rng) const;
  double moment(int k) const;  // E[source^k], exact, k <= 8
};

// One predictor column as a monomial over source indices; the empty
// monomial is the constant-one column. A column listing {0, 1} is the
// product of sources 0 and 1 (an interaction term).
struct ColumnSpec {
  std::vector<int> sources;
};

// Exact population second-moment matrix E(x x^T) of the combined column
// vector [cols_a; cols_b]; cross moments follow from source independence.
Eigen::MatrixXd population_second_moment(
    const std::vector<SourceSpec>& sources,
    const std::vector<ColumnSpec>& cols_a,
    const std::vector<ColumnSpec>& cols_b = {});

// Generative settings: grid sizes, true parameters, predictor generators,
// replication count and base seed. Replicate streams are independent
// substreams derived by hashing (base_seed, replicate_index).
struct SimConfig {
  explicit SimConfig(ModelParams truth_in) : truth(std::move(truth_in)) {}

  int m = 1;
  int m_prime = 1;
  int n = 1;                   // balanced cell size
  Eigen::MatrixXi cell_sizes;  // optional m x m' override; empty = balanced
  ModelParams truth;
  std::vector<SourceSpec> sources;
  std::vector<ColumnSpec> xA_cols;
  std::vector<ColumnSpec> xB_cols;
  int replications = 1;
  std::uint64_t base_seed = 0;

  void validate() const;
};

// Deterministic per-replicate seed: splitmix-style hash of (base, index).
std::uint64_t substream_seed(std::uint64_t base, std::uint64_t index);

// Draws one replicate: U_i ~ N(0, Sigma), U'_i' ~ N(0, Sigma'), predictor
// rows i.i.d. per the column specs, responses from the model surface plus
// N(0, sigma^2) noise. Bit-identical for identical (config, index).
CrossedDataset generate(const SimConfig& config, int replicate_index);

// Redraws random effects and noise while keeping the predictors fixed.
CrossedDataset resample_responses(const CrossedDataset& data,
                                  const ModelParams& params,
                                  std::uint64_t seed);

// The model-(8)-style study: intercept-only X_A, X_B = (B, X, B*X) with
// B ~ Bernoulli(p) and X ~ Uniform(0, 1); beta_B = (beta1, beta2, beta3).
SimConfig interaction_study_config(int m, int m_prime, int n, double beta0,
                                   double beta1, double beta2, double beta3,
                                   double Sigma, double Sigma_prime,
                                   double sigma2, double p = 0.5);

struct PowerResult {
  int rejections = 0;
  int replications = 0;  // attempted
  int failures = 0;      // excluded fits
  double empirical_power = 0.0;
  double ci_low = 0.0;   // 95% binomial interval
  double ci_high = 0.0;
  std::vector<int> failed_replicates;
};

// One-sided Wald power study for the last beta_B coefficient: fit each
// replicate, reject when z > Phi^{-1}(1 - alpha), aggregate. Replicates run
// on `threads` workers; per-replicate fit failures are excluded with a
// count, and more than 5% failures aborts the study.
PowerResult power_study(const SimConfig& config, const DesignSpec& design,
                        int threads = 1);

// Predictor streams for the convergence checks below. x_cols defines the
// stream entering both the covariance structure and the outer products;
// x_check_cols is the second stream for the two-stream limits.
struct LemmaCheckConfig {
  std::vector<SourceSpec> sources;
  std::vector<ColumnSpec> x_cols;
  std::vector<ColumnSpec> x_check_cols;
  int m = 2;
  int m_prime = 2;
  std::uint64_t seed = 0;
};

// Distances of four statistics of Q(M, M', lambda) to their fixed-(m, m')
// large-n limits, one generated predictor set per grid point:
//   a: X^T Q^{-1} X               -> (M/m + M'/m')^{-1}
//   b: Xi^T Q^{ii} Xi  (max i)    -> M^{-1} - (mm')^{-1} M^{-1} M' (M/m + M'/m')^{-1}
//   c: Xi^T Q^{i~i} X~i (max i!=~i) -> -(mm')^{-1} M^{-1} M' (M/m + M'/m')^{-1}
//   d: tr(Q^{-2}) / n_total       -> 1 / lambda^2
struct Lemma5Row {
  int n = 0;
  double dist_a = 0, dist_b = 0, dist_c = 0, dist_d = 0;
};
std::vector<Lemma5Row> check_lemma5(const LemmaCheckConfig& config,
                                    const SymMatrix& M, const SymMatrix& M_prime,
                                    double lambda,
                                    const std::vector<int>& n_grid);

// Distances for the two-stream limits:
//   a: Xc^T Q^{-1} Xc / n_total -> (1/lambda) [lower-right block of
//                                  {E([X; Xc]^{(x)2})}^{-1}]^{-1}
//   b: X^T Q^{-1} Xc            -> (M/m + M'/m')^{-1} {E(X X^T)}^{-1} E(X Xc^T)
struct Lemma6Row {
  int n = 0;
  double dist_a = 0, dist_b = 0;
};
std::vector<Lemma6Row> check_lemma6(const LemmaCheckConfig& config,
                                    const SymMatrix& M, const SymMatrix& M_prime,
                                    double lambda,
                                    const std::vector<int>& n_grid);

// Relative distances of the exact Fisher blocks to their leading terms at
// each grid point (m, m', n); the cross column reports the largest
// beta x covariance entry, which must be exactly zero.
struct FisherBlockRow {
  int m = 0, m_prime = 0, n = 0;
  double dist_beta_A = 0, dist_beta_B = 0;
  double dist_Sigma = 0, dist_Sigma_prime = 0, dist_sigma2 = 0;
  double max_cross = 0;
};
std::vector<FisherBlockRow> check_fisher_blocks(
    const SimConfig& base, const std::vector<std::array<int, 3>>& grid);

}  // namespace crelmm
