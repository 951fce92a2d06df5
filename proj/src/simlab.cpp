#include "crelmm/simlab.hpp"

#include <atomic>
#include <cmath>
#include <functional>
#include <thread>

#include "crelmm/matops.hpp"

namespace crelmm {

double SourceSpec::draw(std::mt19937_64& rng) const {
  switch (kind) {
    case Kind::constant:
      return a;
    case Kind::bernoulli:
      return std::generate_canonical<double, 53>(rng) < a ? 1.0 : 0.0;
    case Kind::uniform:
      return a + (b - a) * std::generate_canonical<double, 53>(rng);
    case Kind::gaussian: {
      std::normal_distribution<double> gauss(a, b);
      return gauss(rng);
    }
  }
  throw Error("SourceSpec: unknown kind");
}

double SourceSpec::moment(int k) const {
  if (k < 0 || k > 8) throw Error("SourceSpec::moment: k out of range");
  if (k == 0) return 1.0;
  switch (kind) {
    case Kind::constant:
      return std::pow(a, k);
    case Kind::bernoulli:
      return a;  // 0/1 valued
    case Kind::uniform: {
      if (a == b) return std::pow(a, k);
      return (std::pow(b, k + 1) - std::pow(a, k + 1)) / ((k + 1) * (b - a));
    }
    case Kind::gaussian: {
      // binomial expansion of E(mu + sd Z)^k with E Z^j = (j-1)!! (j even)
      double total = 0.0;
      double binom = 1.0;
      for (int j = 0; j <= k; ++j) {
        if (j % 2 == 0) {
          double double_fact = 1.0;
          for (int t = j - 1; t > 1; t -= 2) double_fact *= t;
          total += binom * std::pow(a, k - j) * std::pow(b, j) * double_fact;
        }
        binom = binom * (k - j) / (j + 1);
      }
      return total;
    }
  }
  throw Error("SourceSpec: unknown kind");
}

namespace {

// E[prod of the two monomials] from source independence.
double column_cross_moment(const std::vector<SourceSpec>& sources,
                           const ColumnSpec& a, const ColumnSpec& b) {
  std::vector<int> counts(sources.size(), 0);
  for (int s : a.sources) counts.at(s)++;
  for (int s : b.sources) counts.at(s)++;
  double v = 1.0;
  for (std::size_t s = 0; s < sources.size(); ++s)
    if (counts[s] > 0) v *= sources[s].moment(counts[s]);
  return v;
}

double column_value(const ColumnSpec& col, const std::vector<double>& vals) {
  double v = 1.0;
  for (int s : col.sources) v *= vals[static_cast<std::size_t>(s)];
  return v;
}

void check_column_specs(const std::vector<SourceSpec>& sources,
                        const std::vector<ColumnSpec>& cols,
                        const char* what) {
  for (const ColumnSpec& c : cols)
    for (int s : c.sources)
      if (s < 0 || s >= static_cast<int>(sources.size()))
        throw Error(std::string(what) + ": column references source " +
                    std::to_string(s) + " outside the source list");
}

}  // namespace

Eigen::MatrixXd population_second_moment(
    const std::vector<SourceSpec>& sources,
    const std::vector<ColumnSpec>& cols_a,
    const std::vector<ColumnSpec>& cols_b) {
  check_column_specs(sources, cols_a, "population_second_moment");
  check_column_specs(sources, cols_b, "population_second_moment");
  std::vector<ColumnSpec> all = cols_a;
  all.insert(all.end(), cols_b.begin(), cols_b.end());
  const int p = static_cast<int>(all.size());
  Eigen::MatrixXd M(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = i; j < p; ++j) {
      M(i, j) = column_cross_moment(sources, all[i], all[j]);
      M(j, i) = M(i, j);
    }
  return M;
}

void SimConfig::validate() const {
  if (m < 1 || m_prime < 1 || n < 1) {
    throw Error("SimConfig: m, m', n must be >= 1");
  }
  if (replications < 1) throw Error("SimConfig: replications must be >= 1");
  if (static_cast<int>(xA_cols.size()) != truth.d_A()) {
    throw Error("SimConfig: xA column count must equal d_A");
  }
  if (static_cast<int>(xB_cols.size()) != truth.d_B()) {
    throw Error("SimConfig: xB column count must equal d_B");
  }
  if (cell_sizes.size() > 0 &&
      (cell_sizes.rows() != m || cell_sizes.cols() != m_prime ||
       cell_sizes.minCoeff() < 1)) {
    throw Error("SimConfig: cell_sizes must be m x m' with entries >= 1");
  }
  check_column_specs(sources, xA_cols, "SimConfig");
  check_column_specs(sources, xB_cols, "SimConfig");
}

std::uint64_t substream_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

CrossedDataset generate(const SimConfig& config, int replicate_index) {
  config.validate();
  std::mt19937_64 rng(substream_seed(config.base_seed,
                                     static_cast<std::uint64_t>(replicate_index)));
  std::normal_distribution<double> gauss;

  const int dA = config.truth.d_A();
  const int dB = config.truth.d_B();
  const Eigen::MatrixXd LS = config.truth.Sigma.mat().llt().matrixL();
  const Eigen::MatrixXd LSp = config.truth.Sigma_prime.mat().llt().matrixL();
  const double noise_sd = std::sqrt(config.truth.sigma2);

  auto gauss_vec = [&](int d) {
    Eigen::VectorXd v(d);
    for (int j = 0; j < d; ++j) v(j) = gauss(rng);
    return v;
  };
  std::vector<Eigen::VectorXd> U(config.m), Up(config.m_prime);
  for (auto& u : U) u = LS * gauss_vec(dA);
  for (auto& u : Up) u = LSp * gauss_vec(dA);

  std::vector<double> source_vals(config.sources.size());
  std::vector<CellBlock> cells;
  cells.reserve(static_cast<std::size_t>(config.m) * config.m_prime);
  for (int i = 0; i < config.m; ++i) {
    for (int ip = 0; ip < config.m_prime; ++ip) {
      const int n_cell =
          config.cell_sizes.size() > 0 ? config.cell_sizes(i, ip) : config.n;
      CellBlock c;
      c.XA.resize(n_cell, dA);
      c.XB.resize(n_cell, dB);
      c.y.resize(n_cell);
      for (int j = 0; j < n_cell; ++j) {
        for (std::size_t s = 0; s < config.sources.size(); ++s)
          source_vals[s] = config.sources[s].draw(rng);
        for (int k = 0; k < dA; ++k)
          c.XA(j, k) = column_value(config.xA_cols[k], source_vals);
        for (int k = 0; k < dB; ++k)
          c.XB(j, k) = column_value(config.xB_cols[k], source_vals);
        double mean = (config.truth.beta_A + U[i] + Up[ip]).dot(c.XA.row(j));
        if (dB > 0) mean += config.truth.beta_B.dot(c.XB.row(j));
        c.y(j) = mean + noise_sd * gauss(rng);
      }
      cells.push_back(std::move(c));
    }
  }
  return CrossedDataset(config.m, config.m_prime, std::move(cells));
}

CrossedDataset resample_responses(const CrossedDataset& data,
                                  const ModelParams& params,
                                  std::uint64_t seed) {
  if (params.d_A() != data.d_A() || params.d_B() != data.d_B()) {
    throw Error("resample_responses: parameter dimensions do not match data");
  }
  std::mt19937_64 rng(substream_seed(seed, 0));
  std::normal_distribution<double> gauss;
  const int dA = data.d_A();
  const Eigen::MatrixXd LS = params.Sigma.mat().llt().matrixL();
  const Eigen::MatrixXd LSp = params.Sigma_prime.mat().llt().matrixL();
  const double noise_sd = std::sqrt(params.sigma2);

  auto gauss_vec = [&](int d) {
    Eigen::VectorXd v(d);
    for (int j = 0; j < d; ++j) v(j) = gauss(rng);
    return v;
  };
  std::vector<Eigen::VectorXd> U(data.m()), Up(data.m_prime());
  for (auto& u : U) u = LS * gauss_vec(dA);
  for (auto& u : Up) u = LSp * gauss_vec(dA);

  std::vector<CellBlock> cells;
  for (int i = 0; i < data.m(); ++i) {
    for (int ip = 0; ip < data.m_prime(); ++ip) {
      CellBlock c = data.cell(i, ip);
      for (int j = 0; j < c.y.size(); ++j) {
        double mean = (params.beta_A + U[i] + Up[ip]).dot(c.XA.row(j));
        if (data.d_B() > 0) mean += params.beta_B.dot(c.XB.row(j));
        c.y(j) = mean + noise_sd * gauss(rng);
      }
      cells.push_back(std::move(c));
    }
  }
  return CrossedDataset(data.m(), data.m_prime(), std::move(cells),
                        data.row_labels(), data.col_labels());
}

SimConfig interaction_study_config(int m, int m_prime, int n, double beta0,
                                   double beta1, double beta2, double beta3,
                                   double Sigma, double Sigma_prime,
                                   double sigma2, double p) {
  Eigen::VectorXd beta_B(3);
  beta_B << beta1, beta2, beta3;
  ModelParams truth(Eigen::VectorXd::Constant(1, beta0), beta_B,
                    SymMatrix(Eigen::MatrixXd::Constant(1, 1, Sigma)),
                    SymMatrix(Eigen::MatrixXd::Constant(1, 1, Sigma_prime)),
                    sigma2);
  SimConfig cfg(std::move(truth));
  cfg.m = m;
  cfg.m_prime = m_prime;
  cfg.n = n;
  cfg.sources = {SourceSpec{SourceSpec::Kind::bernoulli, p, 0.0},
                 SourceSpec{SourceSpec::Kind::uniform, 0.0, 1.0}};
  cfg.xA_cols = {ColumnSpec{}};
  cfg.xB_cols = {ColumnSpec{{0}}, ColumnSpec{{1}}, ColumnSpec{{0, 1}}};
  return cfg;
}

namespace {

// Runs body(r) for r in [0, total) on `threads` workers.
void parallel_for(int total, int threads, const std::function<void(int)>& body) {
  threads = std::max(1, threads);
  if (threads == 1) {
    for (int r = 0; r < total; ++r) body(r);
    return;
  }
  std::atomic<int> next(0);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int r = next.fetch_add(1); r < total; r = next.fetch_add(1)) body(r);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

PowerResult power_study(const SimConfig& config, const DesignSpec& design,
                        int threads) {
  config.validate();
  design.validate();
  if (config.truth.d_B() < 1) {
    throw Error("power_study: the study model needs at least one beta_B "
                "coefficient to test");
  }
  if (config.xA_cols.size() != 1 || !config.xA_cols[0].sources.empty()) {
    throw Error("power_study: the study model uses an intercept-only X_A "
                "stream");
  }

  const int R = config.replications;
  const int test_idx = config.truth.d_B() - 1;
  const double z_crit = normal_quantile(1.0 - design.alpha);

  enum : signed char { kAccept = 0, kReject = 1, kFail = 2 };
  std::vector<signed char> outcome(R, kAccept);

  parallel_for(R, threads, [&](int rep) {
    try {
      const CrossedDataset data = generate(config, rep);
      const FitResult fit = fit_mle(data);
      if (!fit.converged) {
        outcome[rep] = kFail;
        return;
      }
      const Eigen::MatrixXd C = estimate_C_beta_B(data);
      const double var = fit.params_hat.sigma2 * C(test_idx, test_idx) /
                         (data.m() * data.m_prime() * data.n_bar());
      const double z = fit.params_hat.beta_B(test_idx) / std::sqrt(var);
      outcome[rep] = z > z_crit ? kReject : kAccept;
    } catch (const Error&) {
      outcome[rep] = kFail;
    }
  });

  PowerResult res;
  res.replications = R;
  for (int rep = 0; rep < R; ++rep) {
    if (outcome[rep] == kFail) {
      ++res.failures;
      res.failed_replicates.push_back(rep);
    } else if (outcome[rep] == kReject) {
      ++res.rejections;
    }
  }
  if (res.failures > 0.05 * R) {
    throw Error("power_study: " + std::to_string(res.failures) + " of " +
                std::to_string(R) + " replicate fits failed (over the 5% "
                "threshold)");
  }
  const int effective = R - res.failures;
  res.empirical_power = static_cast<double>(res.rejections) / effective;
  const double z975 = normal_quantile(0.975);
  const double half = z975 * std::sqrt(res.empirical_power *
                                       (1.0 - res.empirical_power) / effective);
  res.ci_low = std::max(0.0, res.empirical_power - half);
  res.ci_high = std::min(1.0, res.empirical_power + half);
  return res;
}

namespace {

double rel_dist(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  return (got - want).norm() / std::max(want.norm(), 1e-12);
}

// Predictor-only dataset for the convergence checks: x_cols enter X_A,
// check_cols (possibly empty) enter X_B, responses are irrelevant.
CrossedDataset lemma_dataset(const LemmaCheckConfig& config,
                             const std::vector<ColumnSpec>& x_cols,
                             const std::vector<ColumnSpec>& check_cols,
                             const SymMatrix& M, const SymMatrix& M_prime,
                             double lambda, int n, int point_index) {
  ModelParams params(Eigen::VectorXd::Zero(M.dim()),
                     Eigen::VectorXd::Zero(static_cast<int>(check_cols.size())),
                     M, M_prime, lambda);
  SimConfig cfg(std::move(params));
  cfg.m = config.m;
  cfg.m_prime = config.m_prime;
  cfg.n = n;
  cfg.sources = config.sources;
  cfg.xA_cols = x_cols;
  cfg.xB_cols = check_cols;
  cfg.base_seed = config.seed;
  return generate(cfg, point_index);
}

// Z_i^T Xi_i and Xi_i^T Xi_i for row-factor block i.
struct RowBlockCross {
  Eigen::MatrixXd T;    // q x d
  Eigen::MatrixXd xtx;  // d x d
};

RowBlockCross row_block_cross(const CrossedDataset& data, int i, int q) {
  const int d = data.d_A();
  RowBlockCross out{Eigen::MatrixXd::Zero(q, d), Eigen::MatrixXd::Zero(d, d)};
  for (int ip = 0; ip < data.m_prime(); ++ip) {
    const Eigen::MatrixXd gram =
        data.cell(i, ip).XA.transpose() * data.cell(i, ip).XA;
    out.T.middleRows(i * d, d) += gram;
    out.T.middleRows((data.m() + ip) * d, d) += gram;
    out.xtx += gram;
  }
  return out;
}

}  // namespace

std::vector<Lemma5Row> check_lemma5(const LemmaCheckConfig& config,
                                    const SymMatrix& M,
                                    const SymMatrix& M_prime, double lambda,
                                    const std::vector<int>& n_grid) {
  const int d = M.dim();
  if (static_cast<int>(config.x_cols.size()) != d) {
    throw Error("check_lemma5: x_cols count must equal dim(M)");
  }
  const int m = config.m, mp = config.m_prime;
  const Eigen::MatrixXd limit_a =
      (M.mat() / m + M_prime.mat() / mp).inverse();
  const Eigen::MatrixXd Minv = M.mat().inverse();
  const Eigen::MatrixXd off_term =
      -(Minv * M_prime.mat() * limit_a) / (static_cast<double>(m) * mp);
  const Eigen::MatrixXd limit_b = Minv + off_term;
  const Eigen::MatrixXd& limit_c = off_term;

  std::vector<Lemma5Row> rows;
  for (std::size_t g = 0; g < n_grid.size(); ++g) {
    const int n = n_grid[g];
    const CrossedDataset data = lemma_dataset(config, config.x_cols, {}, M,
                                              M_prime, lambda, n,
                                              static_cast<int>(g));
    const VOperator op(data, ModelParams(Eigen::VectorXd::Zero(d),
                                         Eigen::VectorXd(0), M, M_prime,
                                         lambda));

    Lemma5Row row;
    row.n = n;

    const StackedDesign sd = stack_designs(data);
    row.dist_a = rel_dist(sd.XA.transpose() * op.solve(sd.XA), limit_a);

    double worst_b = 0.0, worst_c = 0.0;
    std::vector<RowBlockCross> cross;
    cross.reserve(m);
    for (int i = 0; i < m; ++i) cross.push_back(row_block_cross(data, i, op.q()));
    std::vector<Eigen::MatrixXd> CT;
    CT.reserve(m);
    for (int i = 0; i < m; ++i) CT.push_back(op.capacitance_solve(cross[i].T));
    for (int i = 0; i < m; ++i) {
      const Eigen::MatrixXd Bi =
          (cross[i].xtx - cross[i].T.transpose() * CT[i]) / lambda;
      worst_b = std::max(worst_b, rel_dist(Bi, limit_b));
      for (int j = 0; j < m; ++j) {
        if (j == i) continue;
        const Eigen::MatrixXd Bij = -(cross[i].T.transpose() * CT[j]) / lambda;
        worst_c = std::max(worst_c, rel_dist(Bij, limit_c));
      }
    }
    row.dist_b = worst_b;
    row.dist_c = worst_c;

    const Eigen::MatrixXd K = op.capacitance_solve(op.ztz());
    const double tr_q2 =
        (data.n_total() - 2.0 * K.trace() +
         (K.array() * K.transpose().array()).sum()) /
        (lambda * lambda);
    row.dist_d = std::abs(tr_q2 / data.n_total() - 1.0 / (lambda * lambda)) *
                 lambda * lambda;
    rows.push_back(row);
  }
  return rows;
}

std::vector<Lemma6Row> check_lemma6(const LemmaCheckConfig& config,
                                    const SymMatrix& M,
                                    const SymMatrix& M_prime, double lambda,
                                    const std::vector<int>& n_grid) {
  const int d = M.dim();
  const int dc = static_cast<int>(config.x_check_cols.size());
  if (static_cast<int>(config.x_cols.size()) != d) {
    throw Error("check_lemma6: x_cols count must equal dim(M)");
  }
  if (dc < 1) throw Error("check_lemma6: x_check_cols must be non-empty");

  const Eigen::MatrixXd Mom = population_second_moment(
      config.sources, config.x_cols, config.x_check_cols);
  const Eigen::MatrixXd Mom_inv = Mom.inverse();
  const Eigen::MatrixXd limit_a =
      Eigen::MatrixXd(Mom_inv.bottomRightCorner(dc, dc)).inverse() / lambda;
  const Eigen::MatrixXd limit_b =
      (M.mat() / config.m + M_prime.mat() / config.m_prime).inverse() *
      Eigen::MatrixXd(Mom.topLeftCorner(d, d)).inverse() *
      Mom.topRightCorner(d, dc);

  std::vector<Lemma6Row> rows;
  for (std::size_t g = 0; g < n_grid.size(); ++g) {
    const int n = n_grid[g];
    const CrossedDataset data =
        lemma_dataset(config, config.x_cols, config.x_check_cols, M, M_prime,
                      lambda, n, static_cast<int>(g));
    const VOperator op(data, ModelParams(Eigen::VectorXd::Zero(d),
                                         Eigen::VectorXd::Zero(dc), M,
                                         M_prime, lambda));
    const StackedDesign sd = stack_designs(data);
    const Eigen::MatrixXd solved_check = op.solve(sd.XB);

    Lemma6Row row;
    row.n = n;
    row.dist_a = (sd.XB.transpose() * solved_check / data.n_total() - limit_a)
                     .norm() /
                 (1.0 + limit_a.norm());
    row.dist_b = (sd.XA.transpose() * solved_check - limit_b).norm() /
                 (1.0 + limit_b.norm());
    rows.push_back(row);
  }
  return rows;
}

std::vector<FisherBlockRow> check_fisher_blocks(
    const SimConfig& base, const std::vector<std::array<int, 3>>& grid) {
  base.validate();
  const ModelParams& truth = base.truth;
  const int dA = truth.d_A();
  const int dB = truth.d_B();
  const Eigen::MatrixXd D = matops::duplication_matrix(dA);
  const Eigen::MatrixXd Sinv = truth.Sigma.mat().inverse();
  const Eigen::MatrixXd Spinv = truth.Sigma_prime.mat().inverse();

  Eigen::MatrixXd C_pop_inv;
  if (dB > 0) {
    const Eigen::MatrixXd C_pop = c_beta_B_from_moments(
        population_second_moment(base.sources, base.xA_cols, base.xB_cols),
        dB);
    C_pop_inv = C_pop.inverse();
  }

  std::vector<FisherBlockRow> rows;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    SimConfig cfg = base;
    cfg.m = grid[g][0];
    cfg.m_prime = grid[g][1];
    cfg.n = grid[g][2];
    cfg.cell_sizes.resize(0, 0);
    const CrossedDataset data = generate(cfg, static_cast<int>(g));
    const FisherMatrix F = fisher_exact(data, truth);
    const ParamLayout& L = F.layout;
    const double cells = static_cast<double>(cfg.m) * cfg.m_prime * cfg.n;

    FisherBlockRow row;
    row.m = cfg.m;
    row.m_prime = cfg.m_prime;
    row.n = cfg.n;

    const Eigen::MatrixXd lead_bA =
        (truth.Sigma.mat() / cfg.m + truth.Sigma_prime.mat() / cfg.m_prime)
            .inverse();
    row.dist_beta_A = rel_dist(
        F.mat.block(L.off_beta_A(), L.off_beta_A(), dA, dA), lead_bA);

    if (dB > 0) {
      const Eigen::MatrixXd lead_bB = cells * C_pop_inv / truth.sigma2;
      row.dist_beta_B = rel_dist(
          F.mat.block(L.off_beta_B(), L.off_beta_B(), dB, dB), lead_bB);
    }

    const Eigen::MatrixXd lead_S =
        0.5 * cfg.m * D.transpose() * matops::kron(Sinv, Sinv) * D;
    row.dist_Sigma =
        rel_dist(F.mat.block(L.off_Sigma(), L.off_Sigma(), L.h(), L.h()),
                 lead_S);
    const Eigen::MatrixXd lead_Sp =
        0.5 * cfg.m_prime * D.transpose() * matops::kron(Spinv, Spinv) * D;
    row.dist_Sigma_prime = rel_dist(
        F.mat.block(L.off_Sigma_prime(), L.off_Sigma_prime(), L.h(), L.h()),
        lead_Sp);

    const double lead_s2 = cells / (2.0 * truth.sigma2 * truth.sigma2);
    row.dist_sigma2 =
        std::abs(F.mat(L.off_sigma2(), L.off_sigma2()) - lead_s2) / lead_s2;

    row.max_cross = F.mat
                        .block(0, L.off_Sigma(), dA + dB,
                               L.dim() - L.off_Sigma())
                        .cwiseAbs()
                        .maxCoeff();
    rows.push_back(row);
  }
  return rows;
}

}  // namespace crelmm
