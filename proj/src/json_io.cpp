#include "crelmm/json_io.hpp"

namespace crelmm {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array()) throw Error("matrix_from_json: expected an array");
  const auto rows = j.size();
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  const auto cols = j.at(0).size();
  Eigen::MatrixXd M(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (j.at(r).size() != cols) {
      throw Error("matrix_from_json: ragged rows");
    }
    for (std::size_t c = 0; c < cols; ++c)
      M(r, c) = j.at(r).at(c).get<double>();
  }
  return M;
}

namespace {

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j.at(i).get<double>();
  return v;
}

}  // namespace

json params_to_json(const ModelParams& p) {
  return json{{"beta_A", vector_to_json(p.beta_A)},
              {"beta_B", vector_to_json(p.beta_B)},
              {"Sigma", matrix_to_json(p.Sigma.mat())},
              {"Sigma_prime", matrix_to_json(p.Sigma_prime.mat())},
              {"sigma2", p.sigma2}};
}

ModelParams params_from_json(const json& j) {
  return ModelParams(vector_from_json(j.at("beta_A")),
                     j.contains("beta_B") ? vector_from_json(j.at("beta_B"))
                                          : Eigen::VectorXd(0),
                     SymMatrix(matrix_from_json(j.at("Sigma")), 1e-9),
                     SymMatrix(matrix_from_json(j.at("Sigma_prime")), 1e-9),
                     j.at("sigma2").get<double>());
}

namespace {

json source_to_json(const SourceSpec& s) {
  switch (s.kind) {
    case SourceSpec::Kind::constant:
      return json{{"kind", "constant"}, {"value", s.a}};
    case SourceSpec::Kind::bernoulli:
      return json{{"kind", "bernoulli"}, {"p", s.a}};
    case SourceSpec::Kind::uniform:
      return json{{"kind", "uniform"}, {"a", s.a}, {"b", s.b}};
    case SourceSpec::Kind::gaussian:
      return json{{"kind", "normal"}, {"mean", s.a}, {"sd", s.b}};
  }
  throw Error("source_to_json: unknown kind");
}

SourceSpec source_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  SourceSpec s;
  if (kind == "constant") {
    s.kind = SourceSpec::Kind::constant;
    s.a = j.at("value").get<double>();
  } else if (kind == "bernoulli") {
    s.kind = SourceSpec::Kind::bernoulli;
    s.a = j.at("p").get<double>();
  } else if (kind == "uniform") {
    s.kind = SourceSpec::Kind::uniform;
    s.a = j.at("a").get<double>();
    s.b = j.at("b").get<double>();
  } else if (kind == "normal") {
    s.kind = SourceSpec::Kind::gaussian;
    s.a = j.at("mean").get<double>();
    s.b = j.at("sd").get<double>();
  } else {
    throw Error("source_from_json: unknown kind '" + kind + "'");
  }
  return s;
}

json columns_to_json(const std::vector<ColumnSpec>& cols) {
  json out = json::array();
  for (const auto& c : cols) out.push_back(json{{"sources", c.sources}});
  return out;
}

std::vector<ColumnSpec> columns_from_json(const json& j) {
  std::vector<ColumnSpec> cols;
  for (const auto& jc : j) {
    ColumnSpec c;
    if (jc.contains("sources"))
      c.sources = jc.at("sources").get<std::vector<int>>();
    cols.push_back(std::move(c));
  }
  return cols;
}

}  // namespace

json sim_config_to_json(const SimConfig& cfg) {
  json out{{"m", cfg.m},
           {"m_prime", cfg.m_prime},
           {"n", cfg.n},
           {"replications", cfg.replications},
           {"seed", cfg.base_seed},
           {"params", params_to_json(cfg.truth)},
           {"sources", json::array()},
           {"xA", columns_to_json(cfg.xA_cols)},
           {"xB", columns_to_json(cfg.xB_cols)}};
  for (const auto& s : cfg.sources) out["sources"].push_back(source_to_json(s));
  if (cfg.cell_sizes.size() > 0) {
    out["cell_sizes"] = matrix_to_json(cfg.cell_sizes.cast<double>());
  }
  return out;
}

SimConfig sim_config_from_json(const json& j) {
  SimConfig cfg(params_from_json(j.at("params")));
  cfg.m = j.at("m").get<int>();
  cfg.m_prime = j.at("m_prime").get<int>();
  cfg.n = j.value("n", 1);
  cfg.replications = j.value("replications", 1);
  cfg.base_seed = j.value("seed", std::uint64_t{0});
  for (const auto& js : j.at("sources")) {
    cfg.sources.push_back(source_from_json(js));
  }
  cfg.xA_cols = columns_from_json(j.at("xA"));
  cfg.xB_cols = j.contains("xB") ? columns_from_json(j.at("xB"))
                                 : std::vector<ColumnSpec>{};
  if (j.contains("cell_sizes")) {
    cfg.cell_sizes = matrix_from_json(j.at("cell_sizes")).cast<int>();
  }
  cfg.validate();
  return cfg;
}

json design_spec_to_json(const DesignSpec& d) {
  return json{{"delta", d.Delta},       {"sigma", d.sigma0},
              {"p", d.p_bernoulli},     {"var_x", d.var_X},
              {"m_prime", d.m_prime},   {"n", d.n},
              {"alpha", d.alpha},       {"power", d.power_target}};
}

DesignSpec design_spec_from_json(const json& j) {
  DesignSpec d;
  d.Delta = j.at("delta").get<double>();
  d.sigma0 = j.at("sigma").get<double>();
  d.p_bernoulli = j.value("p", 0.5);
  d.var_X = j.at("var_x").get<double>();
  d.m_prime = j.at("m_prime").get<int>();
  d.n = j.value("n", 1);
  d.alpha = j.value("alpha", 0.05);
  d.power_target = j.value("power", 0.9);
  d.validate();
  return d;
}

json power_result_to_json(const PowerResult& r) {
  return json{{"rejections", r.rejections},
              {"replications", r.replications},
              {"failures", r.failures},
              {"failed_replicates", r.failed_replicates},
              {"empirical_power", r.empirical_power},
              {"ci_low", r.ci_low},
              {"ci_high", r.ci_high}};
}

json fit_report_to_json(const FitResult& fit, const AsymptoticReport& report) {
  json inference = json::array();
  for (const auto& row : report.params) {
    inference.push_back(json{{"name", row.name},
                             {"block", row.block},
                             {"estimate", row.estimate},
                             {"se", row.se},
                             {"ci_low", row.ci_low},
                             {"ci_high", row.ci_high},
                             {"z", row.z},
                             {"p", row.p},
                             {"p_upper", row.p_upper}});
  }
  return json{{"converged", fit.converged},
              {"iterations", fit.iterations},
              {"loglik", fit.loglik_at_optimum},
              {"gradient_norm", fit.gradient_norm},
              {"warnings", fit.warnings},
              {"estimates", params_to_json(fit.params_hat)},
              {"alpha", report.alpha},
              {"m", report.m},
              {"m_prime", report.m_prime},
              {"n_bar", report.n_bar},
              {"inference", inference}};
}

}  // namespace crelmm
