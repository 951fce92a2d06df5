// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exit code 0 iff all pass.
// With --full, criterion 2 additionally runs the 1000-replicate power study.

#include "json.hpp"

#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "crelmm/asymptotics.hpp"
#include "crelmm/design_power.hpp"
#include "crelmm/json_io.hpp"
#include "crelmm/matops.hpp"
#include "crelmm/mle.hpp"
#include "crelmm/simlab.hpp"

using namespace crelmm;

namespace {

int hw_threads() {
  const unsigned hc = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(hc ? hc : 1u, 8u));
}

struct Criterion {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

Eigen::MatrixXd rand_mat(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> gauss;
  Eigen::MatrixXd M(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) M(i, j) = gauss(rng);
  return M;
}

SymMatrix rand_spd(std::mt19937_64& rng, int d) {
  const Eigen::MatrixXd M = rand_mat(rng, d, d);
  return SymMatrix(Eigen::MatrixXd(
      M * M.transpose() + 0.3 * d * Eigen::MatrixXd::Identity(d, d)));
}

double rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

CrossedDataset random_instance(std::mt19937_64& rng, int m, int mp, int dA,
                               int dB, int n_lo, int n_hi) {
  std::vector<CellBlock> cells;
  for (int k = 0; k < m * mp; ++k) {
    const int n = n_lo + static_cast<int>(rng() % (n_hi - n_lo + 1));
    CellBlock c;
    c.y = rand_mat(rng, n, 1);
    c.XA = rand_mat(rng, n, dA);
    c.XB = rand_mat(rng, n, dB);
    cells.push_back(std::move(c));
  }
  return CrossedDataset(m, mp, std::move(cells));
}

ModelParams random_params(std::mt19937_64& rng, int dA, int dB) {
  return ModelParams(rand_mat(rng, dA, 1), rand_mat(rng, dB, 1),
                     rand_spd(rng, dA), rand_spd(rng, dA),
                     0.5 + std::generate_canonical<double, 53>(rng));
}

// --------------------------------------------------------------------------
// 1. sample-size reproduction through the CLI contract
// --------------------------------------------------------------------------
Criterion criterion1() {
  const std::array<double, 4> sigmas{0.2, 0.4, 0.8, 1.6};
  const std::array<int, 4> want{14, 53, 211, 842};
  std::string detail;
  bool pass = true;
  for (int k = 0; k < 4; ++k) {
    DesignSpec spec{0.25, sigmas[k], 0.5, 1.0 / 12.0, 20, 1, 0.05, 0.9};
    int got = -1;
    const char* bin = std::getenv("CRELMM_BIN");
    if (bin) {
      const std::string cmd = std::string(bin) +
                              " ssize --delta 0.25 --sigma " +
                              std::to_string(sigmas[k]) +
                              " --p 0.5 --var-x 0.08333333333333333" +
                              " --m-prime 20 --n 1 --alpha 0.05 --power 0.9";
      if (FILE* pipe = popen(cmd.c_str(), "r")) {
        std::string out;
        std::array<char, 512> buf;
        while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe))
          out.append(buf.data(), n);
        pclose(pipe);
        got = nlohmann::json::parse(out).at("m").get<int>();
      }
    } else {
      got = sample_size(spec);
    }
    pass = pass && got == want[k];
    detail += "sigma=" + std::to_string(sigmas[k]) +
              " m=" + std::to_string(got) + " ";
  }
  return {1, "sample-size reproduction (m = 14/53/211/842)", pass, detail};
}

// --------------------------------------------------------------------------
// 2. empirical power at the sigma0 = 0.4 design point
// --------------------------------------------------------------------------
Criterion criterion2(bool full) {
  SimConfig cfg = interaction_study_config(53, 20, 1, 0.5, 0.2, 0.3, 0.25,
                                           0.25, 0.25, 0.16, 0.5);
  cfg.replications = 200;
  cfg.base_seed = 1;
  const DesignSpec design{0.25, 0.4, 0.5, 1.0 / 12.0, 20, 1, 0.05, 0.9};
  const PowerResult res = power_study(cfg, design, hw_threads());
  bool pass = res.empirical_power >= 0.85 && res.empirical_power <= 0.95;
  std::string detail = "R=200 power=" + std::to_string(res.empirical_power) +
                       " CI=(" + std::to_string(res.ci_low) + ", " +
                       std::to_string(res.ci_high) + ")";
  if (full) {
    cfg.replications = 1000;
    const PowerResult res_full = power_study(cfg, design, hw_threads());
    pass = pass && res_full.empirical_power >= 0.87 &&
           res_full.empirical_power <= 0.92;
    detail += " | R=1000 power=" + std::to_string(res_full.empirical_power) +
              " CI=(" + std::to_string(res_full.ci_low) + ", " +
              std::to_string(res_full.ci_high) + ")";
  }
  return {2, "empirical power in [0.85, 0.95] at R=200", pass, detail};
}

// --------------------------------------------------------------------------
// 3. matrix identity suites, 100 seeded instances each at 1e-10
// --------------------------------------------------------------------------
Criterion criterion3() {
  std::mt19937_64 rng(42);
  double w_wood = 0, w_c21 = 0, w_l3 = 0, w_l4 = 0, w_kron = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 10 + static_cast<int>(rng() % 80);
    const int d = 1 + static_cast<int>(rng() % 4);
    const Eigen::MatrixXd X = rand_mat(rng, n, d);
    const SymMatrix A = rand_spd(rng, d);
    const double lambda = 0.2 + 2.0 * std::generate_canonical<double, 53>(rng);
    const Eigen::MatrixXd rhs = rand_mat(rng, n, 2);
    const Eigen::MatrixXd dense_inv =
        (X * A.mat() * X.transpose() +
         lambda * Eigen::MatrixXd::Identity(n, n))
            .inverse();

    w_wood = std::max(w_wood,
                      rel(matops::woodbury_inverse_apply(X, A, lambda, rhs),
                          dense_inv * rhs));
    w_c21 = std::max(w_c21, rel(matops::corollary21c(X, A, lambda).mat(),
                                X.transpose() * dense_inv * X));
    w_l3 = std::max(w_l3, rel(matops::lemma3_squared_form(X, A, lambda).mat(),
                              X.transpose() * dense_inv * dense_inv * X));

    const Eigen::MatrixXd Braw = rand_mat(rng, d, d);
    const SymMatrix B(Eigen::MatrixXd(0.15 * (Braw + Braw.transpose())));
    w_l4 = std::max(w_l4, rel(matops::lemma4_block_identity(A, B).mat(),
                              2.0 * (A.mat() + B.mat()).inverse()));

    const Eigen::MatrixXd Sraw = rand_mat(rng, d, d);
    const SymMatrix S(Eigen::MatrixXd(0.5 * (Sraw + Sraw.transpose())));
    const Eigen::MatrixXd D = matops::duplication_matrix(d);
    const Eigen::MatrixXd explicit_path =
        D.transpose() * matops::kron(S.mat(), S.mat()) * D;
    w_kron = std::max(
        w_kron, (matops::kron_sym_quadform(S).mat() - explicit_path)
                        .cwiseAbs()
                        .maxCoeff() /
                    std::max(1.0, explicit_path.cwiseAbs().maxCoeff()));
  }
  const bool pass = w_wood < 1e-10 && w_c21 < 1e-10 && w_l3 < 1e-10 &&
                    w_l4 < 1e-10 && w_kron < 1e-12;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "woodbury=%.1e cor21c=%.1e lemma3=%.1e lemma4=%.1e dual=%.1e",
                w_wood, w_c21, w_l3, w_l4, w_kron);
  return {3, "matrix identity suites at 1e-10 (100 instances each)", pass,
          buf};
}

// --------------------------------------------------------------------------
// 4. balanced intercept-only exact identities
// --------------------------------------------------------------------------
Criterion criterion4() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss;
  const int m = 7, mp = 5, n = 3;
  const double Sig = 0.5, Sigp = 0.25, s2 = 1.0;
  std::vector<CellBlock> cells(m * mp);
  std::vector<double> U(m), Up(mp);
  for (auto& u : U) u = std::sqrt(Sig) * gauss(rng);
  for (auto& u : Up) u = std::sqrt(Sigp) * gauss(rng);
  int k = 0;
  for (int i = 0; i < m; ++i)
    for (int ip = 0; ip < mp; ++ip, ++k) {
      cells[k].y = Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index) {
        return 2.0 + U[i] + Up[ip] + gauss(rng);
      });
      cells[k].XA = Eigen::MatrixXd::Ones(n, 1);
      cells[k].XB = Eigen::MatrixXd(n, 0);
    }
  const CrossedDataset data(m, mp, std::move(cells));
  const ModelParams params(Eigen::VectorXd::Zero(1), Eigen::VectorXd(0),
                           SymMatrix(Eigen::MatrixXd::Constant(1, 1, Sig)),
                           SymMatrix(Eigen::MatrixXd::Constant(1, 1, Sigp)),
                           s2);
  const double lambda = Sig * mp * n + Sigp * m * n + s2;
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(data.n_total());

  const double eig_resid =
      (build_V_dense(data, params).mat() * ones - lambda * ones)
          .cwiseAbs()
          .maxCoeff();

  const VOperator op(data, params);
  const Eigen::VectorXd solved = op.solve(ones);
  const double quad = 1.0 / ones.dot(solved);
  const double var_formula =
      Sig / m + Sigp / mp + s2 / (static_cast<double>(m) * mp * n);
  const double var_rel = std::abs(quad - var_formula) / var_formula;

  const FitResult fit = fit_mle(data);
  const double mean = stack_designs(data).y.mean();
  const double mean_err = std::abs(fit.params_hat.beta_A(0) - mean);

  const bool pass =
      eig_resid < 1e-10 && mean_err < 1e-8 && var_rel < 1e-10 && fit.converged;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "V1 resid=%.1e  |beta0-mean|=%.1e  var rel=%.1e", eig_resid,
                mean_err, var_rel);
  return {4, "balanced intercept eigen-structure identities", pass, buf};
}

// --------------------------------------------------------------------------
// 5. analytic score vs central finite differences, 20 instances
// --------------------------------------------------------------------------
Criterion criterion5() {
  std::mt19937_64 rng(53);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const int dA = 1 + static_cast<int>(rng() % 2);
    const int dB = 1 + static_cast<int>(rng() % 2);
    const int m = 3 + static_cast<int>(rng() % 4);
    const int mp = 3 + static_cast<int>(rng() % 4);
    const CrossedDataset data = random_instance(rng, m, mp, dA, dB, 1, 4);
    if (data.n_total() > 300) continue;
    const ModelParams params = random_params(rng, dA, dB);
    Eigen::VectorXd v = unconstrained_map(params);
    v += 0.05 * rand_mat(rng, static_cast<int>(v.size()), 1);

    const Eigen::VectorXd g = score_unconstrained(data, v);
    const double h = 1e-5;
    for (int j = 0; j < v.size(); ++j) {
      Eigen::VectorXd up = v, dn = v;
      up(j) += h;
      dn(j) -= h;
      const double fd = (loglik_unconstrained(data, up) -
                         loglik_unconstrained(data, dn)) /
                        (2 * h);
      worst = std::max(worst, std::abs(g(j) - fd) /
                                  std::max({1.0, std::abs(g(j)),
                                            std::abs(fd)}));
    }
  }
  char buf[80];
  std::snprintf(buf, sizeof(buf), "worst componentwise rel err = %.2e", worst);
  return {5, "analytic score vs finite differences <= 1e-6", worst <= 1e-6,
          buf};
}

// --------------------------------------------------------------------------
// 6. structured-vs-dense equivalence
// --------------------------------------------------------------------------
Criterion criterion6() {
  std::mt19937_64 rng(6);
  double w_solve = 0, w_logdet = 0, w_loglik = 0, w_fisher = 0;
  for (int rep = 0; rep < 25; ++rep) {
    const int dA = 1 + static_cast<int>(rng() % 2);
    const int dB = static_cast<int>(rng() % 3);
    const CrossedDataset data = random_instance(
        rng, 2 + static_cast<int>(rng() % 4), 2 + static_cast<int>(rng() % 4),
        dA, dB, 1, 6);
    if (data.n_total() > 300) continue;
    const ModelParams params = random_params(rng, dA, dB);

    const VOperator op(data, params);
    const Eigen::MatrixXd V = build_V_dense(data, params).mat();
    const Eigen::LLT<Eigen::MatrixXd> llt(V);
    const Eigen::MatrixXd rhs = rand_mat(rng, data.n_total(), 2);
    w_solve = std::max(w_solve, rel(op.solve(rhs), llt.solve(rhs)));

    const double dense_logdet =
        2.0 * llt.matrixLLT().diagonal().array().log().sum();
    w_logdet = std::max(w_logdet, std::abs(op.logdet() - dense_logdet));

    const StackedDesign sd = stack_designs(data);
    Eigen::VectorXd r = sd.y - sd.XA * params.beta_A;
    if (dB > 0) r -= sd.XB * params.beta_B;
    const double dense_ll = -0.5 * data.n_total() * std::log(2.0 * M_PI) -
                            0.5 * dense_logdet - 0.5 * r.dot(llt.solve(r));
    w_loglik = std::max(w_loglik, std::abs(loglik(data, params) - dense_ll));

    if (rep < 10) {
      const FisherMatrix F = fisher_exact(data, params);
      const ParamLayout& L = F.layout;
      const Eigen::MatrixXd Vinv = V.inverse();
      // dense dV/dtheta from the Z columns
      const Eigen::MatrixXd Z = build_Z(data);
      std::vector<Eigen::MatrixXd> dV;
      for (int prime = 0; prime < 2; ++prime)
        for (int s = 0; s < dA; ++s)
          for (int rr = s; rr < dA; ++rr) {
            const int cnt = prime ? data.m_prime() : data.m();
            Eigen::MatrixXd Lr(data.n_total(), cnt), Ls(data.n_total(), cnt);
            for (int i = 0; i < cnt; ++i) {
              const int base = prime ? (data.m() + i) : i;
              Lr.col(i) = Z.col(base * dA + rr);
              Ls.col(i) = Z.col(base * dA + s);
            }
            Eigen::MatrixXd M = Lr * Ls.transpose();
            if (rr != s) M += Ls * Lr.transpose();
            dV.push_back(std::move(M));
          }
      dV.push_back(Eigen::MatrixXd::Identity(data.n_total(), data.n_total()));
      const int nc = 2 * L.h() + 1;
      Eigen::MatrixXd cov_block(nc, nc);
      for (int a = 0; a < nc; ++a)
        for (int b = 0; b < nc; ++b)
          cov_block(a, b) = 0.5 * (Vinv * dV[a] * Vinv * dV[b]).trace();
      w_fisher = std::max(
          w_fisher, rel(F.mat.bottomRightCorner(nc, nc), cov_block));
      Eigen::MatrixXd X(data.n_total(), dA + dB);
      X.leftCols(dA) = sd.XA;
      if (dB > 0) X.rightCols(dB) = sd.XB;
      w_fisher = std::max(
          w_fisher, rel(F.mat.topLeftCorner(dA + dB, dA + dB),
                        Eigen::MatrixXd(X.transpose() * Vinv * X)));
    }
  }
  const bool pass =
      w_solve < 1e-9 && w_logdet < 1e-8 && w_loglik < 1e-8 && w_fisher < 1e-8;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "solve=%.1e logdet=%.1e loglik=%.1e fisher=%.1e", w_solve,
                w_logdet, w_loglik, w_fisher);
  return {6, "structured paths equal dense oracles", pass, buf};
}

// --------------------------------------------------------------------------
// 7. Fisher-block leading-term convergence over the stated grid
// --------------------------------------------------------------------------
Criterion criterion7() {
  ModelParams truth(Eigen::VectorXd::Constant(1, 1.0),
                    Eigen::VectorXd::Constant(1, -0.5),
                    SymMatrix(Eigen::MatrixXd::Constant(1, 1, 0.5)),
                    SymMatrix(Eigen::MatrixXd::Constant(1, 1, 0.3)), 1.0);
  SimConfig cfg(std::move(truth));
  cfg.sources = {SourceSpec{SourceSpec::Kind::uniform, 0.5, 1.5},
                 SourceSpec{SourceSpec::Kind::gaussian, 0.0, 1.0}};
  cfg.xA_cols = {ColumnSpec{{0}}};
  cfg.xB_cols = {ColumnSpec{{1}}};
  cfg.base_seed = 4;
  const auto rows =
      check_fisher_blocks(cfg, {{6, 6, 4}, {12, 12, 8}, {24, 24, 16}});

  auto decreasing = [&](auto field) {
    for (std::size_t k = 1; k < rows.size(); ++k)
      if (field(rows[k]) >= field(rows[k - 1])) return false;
    return true;
  };
  const bool pass =
      decreasing([](const FisherBlockRow& r) { return r.dist_beta_A; }) &&
      decreasing([](const FisherBlockRow& r) { return r.dist_beta_B; }) &&
      decreasing([](const FisherBlockRow& r) { return r.dist_Sigma; }) &&
      decreasing([](const FisherBlockRow& r) { return r.dist_Sigma_prime; }) &&
      decreasing([](const FisherBlockRow& r) { return r.dist_sigma2; }) &&
      rows.back().dist_beta_A < 0.15 && rows.back().max_cross == 0.0;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "final distances: bA=%.3f bB=%.3f S=%.3f S'=%.3f s2=%.3f "
                "cross=%.1e",
                rows.back().dist_beta_A, rows.back().dist_beta_B,
                rows.back().dist_Sigma, rows.back().dist_Sigma_prime,
                rows.back().dist_sigma2, rows.back().max_cross);
  return {7, "Fisher-block distances decrease; final beta_A < 0.15", pass,
          buf};
}

// --------------------------------------------------------------------------
// 8. CI coverage calibration over 500 replicates
// --------------------------------------------------------------------------
Criterion criterion8() {
  ModelParams truth(Eigen::VectorXd::Constant(1, 1.0),
                    Eigen::VectorXd::Constant(1, 0.5),
                    SymMatrix(Eigen::MatrixXd::Constant(1, 1, 0.25)),
                    SymMatrix(Eigen::MatrixXd::Constant(1, 1, 0.16)), 1.0);
  SimConfig cfg(std::move(truth));
  cfg.m = 30;
  cfg.m_prime = 30;
  cfg.n = 10;
  cfg.sources = {SourceSpec{SourceSpec::Kind::gaussian, 0.0, 1.0}};
  cfg.xA_cols = {ColumnSpec{}};
  cfg.xB_cols = {ColumnSpec{{0}}};
  cfg.base_seed = 8;

  const int R = 500;
  std::vector<std::array<bool, 3>> covered(R, {false, false, false});
  std::vector<bool> ok(R, false);
  std::atomic<int> next(0);
  auto worker = [&] {
    for (int rep = next.fetch_add(1); rep < R; rep = next.fetch_add(1)) {
      try {
        const CrossedDataset data = generate(cfg, rep);
        const FitResult fit = fit_mle(data);
        if (!fit.converged) continue;
        InferenceOptions opts;
        const AsymptoticReport rep_asy = infer(data, fit, opts);
        // rows: beta_A[1], beta_B[1], ..., sigma2 (last)
        const auto& pa = rep_asy.params;
        const double bA_lo = pa[0].ci_low, bA_hi = pa[0].ci_high;
        const double bB_lo = pa[1].ci_low, bB_hi = pa[1].ci_high;
        const double s2_lo = pa.back().ci_low, s2_hi = pa.back().ci_high;
        covered[rep] = {bA_lo <= 1.0 && 1.0 <= bA_hi,
                        bB_lo <= 0.5 && 0.5 <= bB_hi,
                        s2_lo <= 1.0 && 1.0 <= s2_hi};
        ok[rep] = true;
      } catch (const Error&) {
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < hw_threads(); ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  int fitted = 0;
  std::array<int, 3> hits{0, 0, 0};
  for (int rep = 0; rep < R; ++rep) {
    if (!ok[rep]) continue;
    ++fitted;
    for (int j = 0; j < 3; ++j) hits[j] += covered[rep][j];
  }
  const double r0 = static_cast<double>(hits[0]) / fitted;
  const double r1 = static_cast<double>(hits[1]) / fitted;
  const double r2 = static_cast<double>(hits[2]) / fitted;
  auto in_band = [](double r) { return r >= 0.91 && r <= 0.985; };
  const bool pass =
      fitted >= static_cast<int>(0.95 * R) && in_band(r0) && in_band(r1) &&
      in_band(r2);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "fitted=%d coverage: beta_A=%.3f beta_B=%.3f sigma2=%.3f",
                fitted, r0, r1, r2);
  return {8, "95% CI coverage in [0.91, 0.985] (500 replicates)", pass, buf};
}

// --------------------------------------------------------------------------
// 9. null size control at R = 1000
// --------------------------------------------------------------------------
Criterion criterion9() {
  SimConfig cfg = interaction_study_config(53, 20, 1, 0.5, 0.2, 0.3, 0.0,
                                           0.25, 0.25, 0.16, 0.5);
  cfg.replications = 1000;
  cfg.base_seed = 9;
  const DesignSpec design{0.25, 0.4, 0.5, 1.0 / 12.0, 20, 1, 0.05, 0.9};
  const PowerResult res = power_study(cfg, design, hw_threads());
  const double band = 1.959963985 * std::sqrt(0.05 * 0.95 / 1000.0);
  const bool pass = res.empirical_power >= 0.05 - band &&
                    res.empirical_power <= 0.05 + band;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "null rejection rate=%.4f band=(%.4f, %.4f) failures=%d",
                res.empirical_power, 0.05 - band, 0.05 + band, res.failures);
  return {9, "one-sided size inside the 95% binomial band around 0.05", pass,
          buf};
}

}  // namespace

int main(int argc, char** argv) {
  const bool full = argc > 1 && std::string(argv[1]) == "--full";
  std::vector<Criterion> results;
  const auto t0 = std::chrono::steady_clock::now();
  auto run = [&](auto fn) {
    const auto s = std::chrono::steady_clock::now();
    Criterion c = fn();
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - s)
            .count();
    std::printf("%s  criterion %d: %s  [%s]  (%.1fs)\n",
                c.pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                c.detail.c_str(), secs);
    std::fflush(stdout);
    results.push_back(std::move(c));
  };

  run(criterion1);
  run([&] { return criterion2(full); });
  run(criterion3);
  run(criterion4);
  run(criterion5);
  run(criterion6);
  run(criterion7);
  run(criterion8);
  run(criterion9);

  int failed = 0;
  for (const auto& c : results) failed += c.pass ? 0 : 1;
  const double total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  std::printf("%d/%zu criteria passed in %.1fs\n", int(results.size()) - failed,
              results.size(), total);
  return failed == 0 ? 0 : 1;
}
