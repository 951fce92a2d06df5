#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "json.hpp"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "crelmm/design_power.hpp"
#include "crelmm/json_io.hpp"
#include "crelmm/mle.hpp"
#include "crelmm/simlab.hpp"

using nlohmann::json;
using namespace crelmm;

namespace {

std::string binary_path() {
  const char* env = std::getenv("CRELMM_BIN");
  return env ? env : "./tools/crelmm";
}

struct CliResult {
  int exit_code;
  json stdout_json;
  json stderr_json;
};

CliResult run_cli(const std::string& args) {
  const std::string err_file =
      (std::filesystem::temp_directory_path() / "crelmm_cli_err.json").string();
  const std::string cmd = binary_path() + " " + args + " 2>" + err_file;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  std::array<char, 4096> buf;
  while (std::size_t got = std::fread(buf.data(), 1, buf.size(), pipe)) {
    out.append(buf.data(), got);
  }
  const int status = pclose(pipe);
  CliResult res;
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (!out.empty()) res.stdout_json = json::parse(out, nullptr, false);
  std::ifstream err(err_file);
  std::string err_text((std::istreambuf_iterator<char>(err)),
                       std::istreambuf_iterator<char>());
  if (!err_text.empty()) res.stderr_json = json::parse(err_text, nullptr, false);
  return res;
}

struct TempDir {
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("crelmm_cli_" + std::to_string(std::rand()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
  std::filesystem::path path;
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

const char* kSchemaJson =
    R"({"row_factor": "row", "col_factor": "col", "response": "y",
        "xA": ["xa1"], "xB": ["xb1", "xb2", "xb3"]})";

std::string study_json(int reps, std::uint64_t seed) {
  SimConfig cfg = interaction_study_config(53, 20, 1, 0.5, 0.2, 0.3, 0.25,
                                           0.25, 0.25, 0.16, 0.5);
  cfg.replications = reps;
  cfg.base_seed = seed;
  DesignSpec d{0.25, 0.4, 0.5, 1.0 / 12.0, 20, 1, 0.05, 0.9};
  json doc{{"config", sim_config_to_json(cfg)},
           {"design", design_spec_to_json(d)}};
  return doc.dump();
}

}  // namespace

TEST_CASE("ssize matches the library and reproduces the reference m values") {
  for (double sigma : {0.2, 0.4, 0.8, 1.6}) {
    const CliResult res = run_cli(
        "ssize --delta 0.25 --sigma " + std::to_string(sigma) +
        " --p 0.5 --var-x 0.08333333333333333 --m-prime 20 --n 1 "
        "--alpha 0.05 --power 0.9");
    REQUIRE(res.exit_code == 0);
    DesignSpec spec{0.25, sigma, 0.5, 0.08333333333333333, 20, 1, 0.05, 0.9};
    const int want_m = sample_size(spec);
    CHECK(res.stdout_json.at("m").get<int>() == want_m);
    CHECK(res.stdout_json.at("power_at_m").get<double>() ==
          doctest::Approx(power_at(spec, want_m)).epsilon(1e-14));
  }
  CHECK(run_cli("ssize --delta 0.25 --sigma 0.4 --p 0.5 "
                "--var-x 0.08333333333333333 --m-prime 20 --n 1 "
                "--alpha 0.05 --power 0.9")
            .stdout_json.at("m") == 53);
  CHECK(run_cli("ssize --delta 0.25 --sigma 1.6 --p 0.5 "
                "--var-x 0.08333333333333333 --m-prime 20 --n 1 "
                "--alpha 0.05 --power 0.9")
            .stdout_json.at("m") == 842);
  CHECK(run_cli("ssize --delta 100 --sigma 0.4 --p 0.5 "
                "--var-x 0.08333333333333333 --m-prime 20 --n 1 "
                "--alpha 0.05 --power 0.9")
            .stdout_json.at("m") == 1);
}

TEST_CASE("fit on a balanced intercept-only file returns the response mean") {
  TempDir dir;
  std::string csv = "row,col,y,one\n";
  double total = 0.0;
  int count = 0;
  for (int i = 1; i <= 6; ++i)
    for (int ip = 1; ip <= 5; ++ip)
      for (int j = 0; j < 2; ++j) {
        const double y = 1.0 + 0.31 * i - 0.17 * ip + 0.05 * j;
        total += y;
        ++count;
        csv += std::to_string(i) + "," + std::to_string(ip) + "," +
               std::to_string(y) + ",1\n";
      }
  write_file(dir.file("data.csv"), csv);
  write_file(dir.file("schema.json"),
             R"({"row_factor": "row", "col_factor": "col",
                 "response": "y", "xA": ["one"]})");

  const CliResult res = run_cli("fit --csv " + dir.file("data.csv") +
                                " --schema " + dir.file("schema.json"));
  REQUIRE(res.exit_code == 0);
  CHECK(res.stdout_json.at("converged").get<bool>());
  CHECK(res.stdout_json.at("estimates").at("beta_A").at(0).get<double>() ==
        doctest::Approx(total / count).epsilon(1e-8));
}

TEST_CASE("fit output numerically equals direct library invocation") {
  TempDir dir;
  write_file(dir.file("study.json"), study_json(1, 11));
  const CliResult sim =
      run_cli("simulate --config " + dir.file("study.json") +
              " --replicate 2 --csv-out " + dir.file("sim.csv"));
  REQUIRE(sim.exit_code == 0);
  CHECK(sim.stdout_json.at("rows").get<int>() == 1060);

  write_file(dir.file("schema.json"), kSchemaJson);
  const CliResult res = run_cli("fit --csv " + dir.file("sim.csv") +
                                " --schema " + dir.file("schema.json"));
  REQUIRE(res.exit_code == 0);

  // the same computation through the library
  SimConfig cfg = interaction_study_config(53, 20, 1, 0.5, 0.2, 0.3, 0.25,
                                           0.25, 0.25, 0.16, 0.5);
  cfg.base_seed = 11;
  const CrossedDataset data = generate(cfg, 2);
  const FitResult fit = fit_mle(data);
  const AsymptoticReport report = infer(data, fit, {});
  const json want = fit_report_to_json(fit, report);

  CHECK(res.stdout_json.at("loglik").get<double>() ==
        doctest::Approx(want.at("loglik").get<double>()).epsilon(1e-10));
  for (int k = 0; k < 3; ++k) {
    CHECK(res.stdout_json.at("estimates").at("beta_B").at(k).get<double>() ==
          doctest::Approx(want.at("estimates").at("beta_B").at(k).get<double>())
              .epsilon(1e-10));
  }
  REQUIRE(res.stdout_json.at("inference").size() ==
          want.at("inference").size());
  for (std::size_t k = 0; k < want.at("inference").size(); ++k) {
    const json& got_row = res.stdout_json.at("inference").at(k);
    const json& want_row = want.at("inference").at(k);
    CHECK(got_row.at("name") == want_row.at("name"));
    CHECK(got_row.at("se").get<double>() ==
          doctest::Approx(want_row.at("se").get<double>()).epsilon(1e-10));
    CHECK(got_row.at("p_upper").get<double>() ==
          doctest::Approx(want_row.at("p_upper").get<double>())
              .epsilon(1e-8));
  }
  // one-sided p for the interaction coefficient is reported
  bool found_interaction = false;
  for (const auto& row : res.stdout_json.at("inference")) {
    if (row.at("name") == "beta_B[3]") {
      found_interaction = true;
      CHECK(row.contains("p_upper"));
    }
  }
  CHECK(found_interaction);
}

TEST_CASE("fit exit codes: data errors give 1 with machine-readable JSON") {
  TempDir dir;
  write_file(dir.file("schema.json"), kSchemaJson);

  write_file(dir.file("bad.csv"),
             "row,col,y,xa1,xb1,xb2,xb3\n"
             "1,1,1.0,1,0,0.2,0\n"
             "1,2,oops,1,1,0.3,0.3\n"
             "2,1,1.0,1,0,0.4,0\n"
             "2,2,1.0,1,1,0.1,0.1\n");
  const CliResult bad = run_cli("fit --csv " + dir.file("bad.csv") +
                                " --schema " + dir.file("schema.json"));
  CHECK(bad.exit_code == 1);
  CHECK(bad.stderr_json.at("error").at("type") == "csv_parse");
  CHECK(bad.stderr_json.at("error").at("row").get<int>() == 3);

  write_file(dir.file("gap.csv"),
             "row,col,y,xa1,xb1,xb2,xb3\n"
             "1,1,1.0,1,0,0.2,0\n"
             "1,2,1.5,1,1,0.3,0.3\n"
             "2,2,1.0,1,1,0.1,0.1\n");
  const CliResult gap = run_cli("fit --csv " + dir.file("gap.csv") +
                                " --schema " + dir.file("schema.json"));
  CHECK(gap.exit_code == 1);
  CHECK(gap.stderr_json.at("error").at("type") == "incomplete_grid");
}

TEST_CASE("fit exit code 2 on non-convergence") {
  TempDir dir;
  write_file(dir.file("study.json"), study_json(1, 4));
  REQUIRE(run_cli("simulate --config " + dir.file("study.json") +
                  " --replicate 0 --csv-out " + dir.file("sim.csv"))
              .exit_code == 0);
  write_file(dir.file("schema.json"), kSchemaJson);
  const CliResult res =
      run_cli("fit --csv " + dir.file("sim.csv") + " --schema " +
              dir.file("schema.json") + " --max-iterations 1");
  CHECK(res.exit_code == 2);
  CHECK_FALSE(res.stdout_json.at("converged").get<bool>());
}

TEST_CASE("power subcommand equals a direct library run") {
  TempDir dir;
  write_file(dir.file("study.json"), study_json(25, 9));
  const CliResult res = run_cli("power --config " + dir.file("study.json") +
                                " --threads 4");
  REQUIRE(res.exit_code == 0);

  SimConfig cfg = interaction_study_config(53, 20, 1, 0.5, 0.2, 0.3, 0.25,
                                           0.25, 0.25, 0.16, 0.5);
  cfg.replications = 25;
  cfg.base_seed = 9;
  const DesignSpec d{0.25, 0.4, 0.5, 1.0 / 12.0, 20, 1, 0.05, 0.9};
  const PowerResult want = power_study(cfg, d, 2);
  CHECK(res.stdout_json.at("rejections").get<int>() == want.rejections);
  CHECK(res.stdout_json.at("failures").get<int>() == want.failures);
  CHECK(res.stdout_json.at("empirical_power").get<double>() ==
        doctest::Approx(want.empirical_power).epsilon(1e-14));
}

TEST_CASE("verify subcommand exit codes") {
  CHECK(run_cli("verify --suite identities").exit_code == 0);
  CHECK(run_cli("verify --suite eigen").exit_code == 0);
  const CliResult bogus = run_cli("verify --suite bogus");
  CHECK(bogus.exit_code == 1);
  CHECK(bogus.stderr_json.at("error").at("type") == "unknown_suite");
}

TEST_CASE("verify convergence suites meet the factor-2 shrink verdict") {
  const CliResult l5 = run_cli("verify --suite lemma5");
  REQUIRE(l5.exit_code == 0);
  for (const auto& ratio : l5.stdout_json.at("median_last_over_first")) {
    CHECK(ratio.get<double>() <= 0.5);
  }
  CHECK(run_cli("verify --suite lemma6").exit_code == 0);
  const CliResult fisher = run_cli("verify --suite fisher");
  REQUIRE(fisher.exit_code == 0);
  CHECK(fisher.stdout_json.at("pass").get<bool>());
}
