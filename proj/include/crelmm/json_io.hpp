#pragma once

#include "json.hpp"

#include "crelmm/asymptotics.hpp"
#include "crelmm/simlab.hpp"

namespace crelmm {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& M);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

nlohmann::json params_to_json(const ModelParams& p);
ModelParams params_from_json(const nlohmann::json& j);

// Study configuration document:
// {
//   "m": 53, "m_prime": 20, "n": 1,
//   "replications": 200, "seed": 1,
//   "cell_sizes": [[...]],                 // optional, m x m'
//   "params": {"beta_A": [...], "beta_B": [...], "Sigma": [[...]],
//              "Sigma_prime": [[...]], "sigma2": 0.16},
//   "sources": [{"kind": "bernoulli", "p": 0.5},
//               {"kind": "uniform", "a": 0, "b": 1},
//               {"kind": "normal", "mean": 0, "sd": 1},
//               {"kind": "constant", "value": 1}],
//   "xA": [{"sources": []}],               // empty monomial = intercept
//   "xB": [{"sources": [0]}, {"sources": [1]}, {"sources": [0, 1]}]
// }
nlohmann::json sim_config_to_json(const SimConfig& cfg);
SimConfig sim_config_from_json(const nlohmann::json& j);

nlohmann::json design_spec_to_json(const DesignSpec& d);
DesignSpec design_spec_from_json(const nlohmann::json& j);

nlohmann::json power_result_to_json(const PowerResult& r);

// Full fit report: convergence diagnostics, parameter estimates, and the
// per-coordinate inference table (estimate, se, ci, z, p, p_upper).
nlohmann::json fit_report_to_json(const FitResult& fit,
                                  const AsymptoticReport& report);

}  // namespace crelmm
