// crelmm: fits Gaussian linear mixed models with two crossed random-effect
// factors, reports large-sample standard errors, Wald tests and confidence
// intervals, runs power/sample-size calculations for the interaction test,
// and drives the simulation verification suites. All outputs are single
// JSON documents; errors go to stderr as JSON with exit code 1; numerical
// non-convergence and failed verification suites exit with code 2.

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <string>

#include "crelmm/asymptotics.hpp"
#include "crelmm/design_power.hpp"
#include "crelmm/json_io.hpp"
#include "crelmm/matops.hpp"
#include "crelmm/mle.hpp"
#include "crelmm/simlab.hpp"

using nlohmann::json;
using namespace crelmm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInputError = 1;
constexpr int kExitNumerical = 2;

void emit(const json& doc, bool pretty, const std::string& out_path) {
  const std::string text = pretty ? doc.dump(2) : doc.dump();
  if (out_path.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream out(out_path);
    if (!out) throw Error("cannot open output file '" + out_path + "'");
    out << text << "\n";
  }
}

json error_json(const std::string& type, const std::string& message) {
  return json{{"error", {{"type", type}, {"message", message}}}};
}

int fail_with(const json& err) {
  std::cerr << err.dump() << "\n";
  return kExitInputError;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  json j;
  in >> j;
  return j;
}

ColumnSchema schema_from_json(const json& j) {
  ColumnSchema s;
  s.row_factor = j.at("row_factor").get<std::string>();
  s.col_factor = j.at("col_factor").get<std::string>();
  s.response = j.at("response").get<std::string>();
  if (j.contains("xA")) s.xA = j.at("xA").get<std::vector<std::string>>();
  if (j.contains("xB")) s.xB = j.at("xB").get<std::vector<std::string>>();
  s.add_intercept_A = j.value("add_intercept_A", false);
  return s;
}

// Column names used by `simulate` output, consumable by `fit` directly.
ColumnSchema simulated_schema(const SimConfig& cfg) {
  ColumnSchema s;
  s.row_factor = "row";
  s.col_factor = "col";
  s.response = "y";
  for (std::size_t k = 0; k < cfg.xA_cols.size(); ++k)
    s.xA.push_back("xa" + std::to_string(k + 1));
  for (std::size_t k = 0; k < cfg.xB_cols.size(); ++k)
    s.xB.push_back("xb" + std::to_string(k + 1));
  return s;
}

SimConfig study_config(const json& doc) {
  return sim_config_from_json(doc.contains("config") ? doc.at("config") : doc);
}

// ---------------------------------------------------------------------------
// verify suites
// ---------------------------------------------------------------------------

json verify_identities(std::uint64_t seed) {
  std::mt19937_64 rng(seed ? seed : 42);
  std::normal_distribution<double> gauss;
  auto rand_mat = [&](int r, int c) {
    Eigen::MatrixXd M(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) M(i, j) = gauss(rng);
    return M;
  };
  auto rand_spd = [&](int d) {
    const Eigen::MatrixXd M = rand_mat(d, d);
    return SymMatrix(Eigen::MatrixXd(M * M.transpose() +
                                     0.3 * d * Eigen::MatrixXd::Identity(d, d)));
  };
  auto rand_sym = [&](int d, double scale) {
    const Eigen::MatrixXd M = rand_mat(d, d);
    return SymMatrix(Eigen::MatrixXd(scale * 0.5 * (M + M.transpose())));
  };
  auto rel = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return (a - b).norm() / std::max(b.norm(), 1e-300);
  };

  double worst_wood = 0, worst_c21 = 0, worst_l3 = 0, worst_l4 = 0,
         worst_kron = 0, worst_dup = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 10 + static_cast<int>(rng() % 80);
    const int d = 1 + static_cast<int>(rng() % 4);
    const Eigen::MatrixXd X = rand_mat(n, d);
    const SymMatrix A = rand_spd(d);
    const double lambda = 0.2 + 2.0 * std::generate_canonical<double, 53>(rng);
    const Eigen::MatrixXd rhs = rand_mat(n, 2);
    const Eigen::MatrixXd dense =
        X * A.mat() * X.transpose() + lambda * Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd dense_inv = dense.inverse();

    worst_wood = std::max(
        worst_wood, rel(matops::woodbury_inverse_apply(X, A, lambda, rhs),
                        dense_inv * rhs));
    worst_c21 = std::max(worst_c21,
                         rel(matops::corollary21c(X, A, lambda).mat(),
                             X.transpose() * dense_inv * X));
    worst_l3 = std::max(
        worst_l3, rel(matops::lemma3_squared_form(X, A, lambda).mat(),
                      X.transpose() * dense_inv * dense_inv * X));

    const SymMatrix B = rand_sym(d, 0.3);
    worst_l4 = std::max(worst_l4,
                        rel(matops::lemma4_block_identity(A, B).mat(),
                            2.0 * (A.mat() + B.mat()).inverse()));

    const SymMatrix S = rand_sym(d, 1.0);
    const Eigen::MatrixXd D = matops::duplication_matrix(d);
    worst_kron = std::max(
        worst_kron,
        (matops::kron_sym_quadform(S).mat() -
         D.transpose() * matops::kron(S.mat(), S.mat()) * D)
            .cwiseAbs()
            .maxCoeff());
    const Eigen::VectorXd vecS =
        Eigen::Map<const Eigen::VectorXd>(S.mat().data(), d * d);
    worst_dup =
        std::max(worst_dup,
                 (D * matops::vech(S) - vecS).cwiseAbs().maxCoeff());
  }

  const bool pass = worst_wood < 1e-10 && worst_c21 < 1e-10 &&
                    worst_l3 < 1e-10 && worst_l4 < 1e-10 &&
                    worst_kron < 1e-12 && worst_dup == 0.0;
  return json{{"suite", "identities"},
              {"instances", 100},
              {"max_rel_err",
               {{"woodbury_apply", worst_wood},
                {"corollary21c", worst_c21},
                {"lemma3_squared_form", worst_l3},
                {"lemma4_block_identity", worst_l4},
                {"kron_quadform_abs", worst_kron},
                {"duplication_abs", worst_dup}}},
              {"pass", pass}};
}

json verify_eigen_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed ? seed : 42);
  std::normal_distribution<double> gauss;
  const int m = 6, mp = 4, n = 3;
  const double Sig = 0.5, Sigp = 0.25, s2 = 1.0;
  std::vector<CellBlock> cells(m * mp);
  for (auto& c : cells) {
    c.y = Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index) {
      return 2.0 + gauss(rng);
    });
    c.XA = Eigen::MatrixXd::Ones(n, 1);
    c.XB = Eigen::MatrixXd(n, 0);
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
  const double inv_resid =
      (op.solve(ones) - ones / lambda).cwiseAbs().maxCoeff();
  const Eigen::VectorXd solved_ones = op.solve(ones);
  const double quad = 1.0 / ones.dot(solved_ones);
  const double var_formula =
      Sig / m + Sigp / mp + s2 / (static_cast<double>(m) * mp * n);
  const double var_rel = std::abs(quad - var_formula) / var_formula;

  const FitResult fit = fit_mle(data);
  const StackedDesign sd = stack_designs(data);
  const double mean_err = std::abs(fit.params_hat.beta_A(0) - sd.y.mean());

  const bool pass = eig_resid < 1e-10 && inv_resid < 1e-12 &&
                    var_rel < 1e-10 && fit.converged && mean_err < 1e-8;
  return json{{"suite", "eigen"},
              {"eigenvector_residual", eig_resid},
              {"inverse_eigenvector_residual", inv_resid},
              {"intercept_variance_rel_err", var_rel},
              {"mean_estimate_abs_err", mean_err},
              {"pass", pass}};
}

LemmaCheckConfig default_lemma_config(std::uint64_t seed) {
  LemmaCheckConfig cfg;
  cfg.sources = {SourceSpec{SourceSpec::Kind::uniform, 0.5, 1.5, },
                 SourceSpec{SourceSpec::Kind::gaussian, 0.0, 1.0}};
  cfg.x_cols = {ColumnSpec{{0}}};
  cfg.x_check_cols = {ColumnSpec{{1}}};
  cfg.m = 3;
  cfg.m_prime = 2;
  cfg.seed = seed;
  return cfg;
}

// median over 5 seeds of the first/last distance ratio, per statistic
json verify_lemma(const std::string& which, std::uint64_t seed) {
  const SymMatrix M(Eigen::MatrixXd::Constant(1, 1, 1.0));
  const SymMatrix Mp(Eigen::MatrixXd::Constant(1, 1, 0.7));
  const double lambda = 1.0;
  const std::vector<int> n_grid = {10, 40, 160};

  auto median_ratios = [&](auto run, int n_stats) {
    std::vector<std::vector<double>> ratios(n_stats);
    for (std::uint64_t s = 0; s < 5; ++s) {
      LemmaCheckConfig cfg = default_lemma_config(seed + s);
      const auto rows = run(cfg);
      for (int k = 0; k < n_stats; ++k) {
        const double first = rows.front()[k];
        const double last = rows.back()[k];
        ratios[k].push_back(last / std::max(first, 1e-300));
      }
    }
    json med = json::array();
    for (auto& v : ratios) {
      std::sort(v.begin(), v.end());
      med.push_back(v[v.size() / 2]);
    }
    return med;
  };

  json med;
  if (which == "lemma5") {
    med = median_ratios(
        [&](const LemmaCheckConfig& cfg) {
          const auto rows = check_lemma5(cfg, M, Mp, lambda, n_grid);
          std::vector<std::array<double, 4>> out;
          for (const auto& r : rows)
            out.push_back({r.dist_a, r.dist_b, r.dist_c, r.dist_d});
          return out;
        },
        4);
  } else {
    med = median_ratios(
        [&](const LemmaCheckConfig& cfg) {
          const auto rows = check_lemma6(cfg, M, Mp, lambda, n_grid);
          std::vector<std::array<double, 2>> out;
          for (const auto& r : rows) out.push_back({r.dist_a, r.dist_b});
          return out;
        },
        2);
  }
  bool pass = true;
  for (const auto& r : med) pass = pass && r.get<double>() <= 0.5;
  return json{{"suite", which},
              {"n_grid", n_grid},
              {"median_last_over_first", med},
              {"pass", pass}};
}

json verify_fisher(std::uint64_t seed) {
  ModelParams truth(Eigen::VectorXd::Constant(1, 1.0),
                    Eigen::VectorXd::Constant(1, -0.5),
                    SymMatrix(Eigen::MatrixXd::Constant(1, 1, 0.5)),
                    SymMatrix(Eigen::MatrixXd::Constant(1, 1, 0.3)), 1.0);
  SimConfig cfg(std::move(truth));
  cfg.sources = {SourceSpec{SourceSpec::Kind::uniform, 0.5, 1.5},
                 SourceSpec{SourceSpec::Kind::gaussian, 0.0, 1.0}};
  cfg.xA_cols = {ColumnSpec{{0}}};
  cfg.xB_cols = {ColumnSpec{{1}}};
  cfg.base_seed = seed ? seed : 4;

  const auto rows =
      check_fisher_blocks(cfg, {{6, 6, 4}, {12, 12, 8}, {24, 24, 16}});
  json table = json::array();
  for (const auto& r : rows) {
    table.push_back(json{{"m", r.m},
                         {"m_prime", r.m_prime},
                         {"n", r.n},
                         {"beta_A", r.dist_beta_A},
                         {"beta_B", r.dist_beta_B},
                         {"Sigma", r.dist_Sigma},
                         {"Sigma_prime", r.dist_Sigma_prime},
                         {"sigma2", r.dist_sigma2},
                         {"max_cross", r.max_cross}});
  }
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
  return json{{"suite", "fisher"}, {"table", table}, {"pass", pass}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crossed random effects linear mixed models: ML fits, "
               "large-sample inference, power design, simulation lab"};
  app.require_subcommand(1);

  bool pretty = false;
  std::string out_path;
  app.add_flag("--pretty", pretty, "indent JSON output");
  app.add_option("--out", out_path, "write output JSON to a file");

  // fit
  auto* cmd_fit = app.add_subcommand("fit", "fit a model from a CSV file");
  std::string csv_path, schema_path;
  double alpha = 0.05;
  bool exact_fisher = false;
  int max_iterations = 500;
  cmd_fit->add_option("--csv", csv_path, "input CSV")->required();
  cmd_fit->add_option("--schema", schema_path, "schema JSON")->required();
  cmd_fit->add_option("--alpha", alpha, "test level (default 0.05)");
  cmd_fit->add_flag("--exact-fisher", exact_fisher,
                    "standard errors from the exact Fisher information");
  cmd_fit->add_option("--max-iterations", max_iterations,
                      "optimizer iteration cap");

  // ssize
  auto* cmd_ssize = app.add_subcommand(
      "ssize", "sample size for the one-sided interaction test");
  DesignSpec design{0.25, 0.4, 0.5, 1.0 / 12.0, 20, 1, 0.05, 0.9};
  cmd_ssize->add_option("--delta", design.Delta, "effect size")->required();
  cmd_ssize->add_option("--sigma", design.sigma0, "error SD")->required();
  cmd_ssize->add_option("--p", design.p_bernoulli, "Bernoulli rate");
  cmd_ssize->add_option("--var-x", design.var_X, "continuous predictor variance")
      ->required();
  cmd_ssize->add_option("--m-prime", design.m_prime, "column-factor count")
      ->required();
  cmd_ssize->add_option("--n", design.n, "observations per cell");
  cmd_ssize->add_option("--alpha", design.alpha, "test level");
  cmd_ssize->add_option("--power", design.power_target, "target power");

  // power
  auto* cmd_power =
      app.add_subcommand("power", "empirical power study by simulation");
  std::string study_path;
  int threads = 1;
  if (const char* env = std::getenv("CRELMM_THREADS")) {
    threads = std::max(1, std::atoi(env));
  }
  int reps_override = 0;
  std::uint64_t seed_override = 0;
  bool have_seed_override = false;
  cmd_power->add_option("--config", study_path, "study JSON document")
      ->required();
  cmd_power->add_option("--threads", threads, "worker threads");
  cmd_power->add_option("--reps", reps_override, "override replication count");
  cmd_power
      ->add_option_function<std::uint64_t>(
          "--seed",
          [&](const std::uint64_t& v) {
            seed_override = v;
            have_seed_override = true;
          },
          "override base seed")
      ->expected(1);

  // simulate
  auto* cmd_sim =
      app.add_subcommand("simulate", "write one simulated replicate as CSV");
  std::string sim_config_path, sim_out = "simulated.csv";
  int replicate = 0;
  cmd_sim->add_option("--config", sim_config_path, "study JSON document")
      ->required();
  cmd_sim->add_option("--replicate", replicate, "replicate index");
  cmd_sim->add_option("--csv-out", sim_out, "output CSV path");

  // verify
  auto* cmd_verify =
      app.add_subcommand("verify", "run a verification suite");
  std::string suite;
  std::uint64_t verify_seed = 0;
  cmd_verify
      ->add_option("--suite", suite,
                   "one of: identities, lemma5, lemma6, fisher, eigen")
      ->required();
  cmd_verify->add_option("--seed", verify_seed, "suite seed");

  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_fit) {
      const ColumnSchema schema = schema_from_json(load_json_file(schema_path));
      const CrossedDataset data = load_csv(csv_path, schema);
      FitOptions opts;
      opts.max_iterations = max_iterations;
      const FitResult fit = fit_mle(data, opts);
      InferenceOptions iopts;
      iopts.alpha = alpha;
      iopts.use_exact_fisher = exact_fisher;
      const AsymptoticReport report = infer(data, fit, iopts);
      json doc = fit_report_to_json(fit, report);
      if (data.d_A() == 2) {
        const DeltaTransformReport dt =
            delta_transforms(fit.params_hat.Sigma, data.m(), alpha);
        doc["delta_transforms"] = json{
            {"sigma1", {{"estimate", dt.sigma1_hat},
                        {"ci_low", dt.sigma1_ci_low},
                        {"ci_high", dt.sigma1_ci_high}}},
            {"sigma2", {{"estimate", dt.sigma2_hat},
                        {"ci_low", dt.sigma2_ci_low},
                        {"ci_high", dt.sigma2_ci_high}}},
            {"rho", {{"estimate", dt.rho_hat},
                     {"ci_low", dt.rho_ci_low},
                     {"ci_high", dt.rho_ci_high}}},
            {"se_log_sigma", dt.se_log_sigma},
            {"se_atanh_rho", dt.se_atanh_rho}};
      }
      emit(doc, pretty, out_path);
      return fit.converged ? kExitOk : kExitNumerical;
    }

    if (*cmd_ssize) {
      const int m = sample_size(design);
      emit(json{{"m", m}, {"power_at_m", power_at(design, m)}}, pretty,
           out_path);
      return kExitOk;
    }

    if (*cmd_power) {
      const json doc = load_json_file(study_path);
      SimConfig cfg = study_config(doc);
      if (!doc.contains("design")) {
        throw Error("power: study document needs a 'design' object");
      }
      const DesignSpec spec = design_spec_from_json(doc.at("design"));
      if (reps_override > 0) cfg.replications = reps_override;
      if (have_seed_override) cfg.base_seed = seed_override;
      const PowerResult res = power_study(cfg, spec, threads);
      json out = power_result_to_json(res);
      out["seed"] = cfg.base_seed;
      out["m"] = cfg.m;
      emit(out, pretty, out_path);
      return kExitOk;
    }

    if (*cmd_sim) {
      const SimConfig cfg = study_config(load_json_file(sim_config_path));
      const CrossedDataset data = generate(cfg, replicate);
      const ColumnSchema schema = simulated_schema(cfg);
      save_csv(sim_out, data, schema);
      json sj{{"row_factor", schema.row_factor},
              {"col_factor", schema.col_factor},
              {"response", schema.response},
              {"xA", schema.xA},
              {"xB", schema.xB}};
      emit(json{{"csv", sim_out},
                {"rows", data.n_total()},
                {"m", data.m()},
                {"m_prime", data.m_prime()},
                {"replicate", replicate},
                {"schema", sj}},
           pretty, out_path);
      return kExitOk;
    }

    if (*cmd_verify) {
      json res;
      if (suite == "identities") {
        res = verify_identities(verify_seed);
      } else if (suite == "eigen") {
        res = verify_eigen_suite(verify_seed);
      } else if (suite == "lemma5" || suite == "lemma6") {
        res = verify_lemma(suite, verify_seed ? verify_seed : 3);
      } else if (suite == "fisher") {
        res = verify_fisher(verify_seed);
      } else {
        return fail_with(error_json("unknown_suite",
                                    "unknown verify suite '" + suite + "'"));
      }
      emit(res, pretty, out_path);
      return res.at("pass").get<bool>() ? kExitOk : kExitNumerical;
    }
  } catch (const CsvParseError& e) {
    json err = error_json("csv_parse", e.what());
    err["error"]["row"] = e.row;
    return fail_with(err);
  } catch (const IncompleteGridError& e) {
    json err = error_json("incomplete_grid", e.what());
    json cells = json::array();
    for (const auto& [r, c] : e.missing_cells)
      cells.push_back(json::array({r, c}));
    err["error"]["missing_cells"] = cells;
    return fail_with(err);
  } catch (const SchemaError& e) {
    return fail_with(error_json("schema", e.what()));
  } catch (const CollinearityError& e) {
    json err = error_json("collinearity", e.what());
    err["error"]["null_direction"] = e.null_direction;
    return fail_with(err);
  } catch (const IllConditionedError& e) {
    json err = error_json("ill_conditioned", e.what());
    err["error"]["condition_estimate"] = e.condition_estimate;
    return fail_with(err);
  } catch (const Error& e) {
    return fail_with(error_json("error", e.what()));
  } catch (const json::exception& e) {
    return fail_with(error_json("json", e.what()));
  }
  return kExitOk;
}
