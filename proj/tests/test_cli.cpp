#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "dualsmooth/error.hpp"
#include "dualsmooth/io.hpp"
#include "dualsmooth/scenario.hpp"
#include "helpers.hpp"

using namespace dualsmooth;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
  static const fs::path dir = [] {
    auto p = fs::temp_directory_path() / ("dualsmooth_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

struct Run {
  int code = 0;
  std::string err;
};

Run invoke(const std::string& args, const std::string& env = "") {
  const auto err_file = scratch() / "stderr.txt";
  const std::string cmd = env + " \"" + std::string(DUALSMOOTH_CLI) + "\" " + args + " > \"" +
                          (scratch() / "stdout.txt").string() + "\" 2> \"" + err_file.string() + "\"";
  const int status = std::system(cmd.c_str());
  std::ifstream in(err_file);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WEXITSTATUS(status), ss.str()};
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("json round trips") {
  const auto f3 = testing::model_f3();
  const auto back = io::ctmc_from_json(io::to_json(f3));
  CHECK(back.A == f3.A);
  CHECK(back.h == f3.h);
  CHECK(back.nu0 == f3.nu0);

  auto nested = io::to_json(f3);
  nested["A"] = {{-2, 1, 1}, {1, -2, 1}, {1, 1, -2}};
  CHECK(io::ctmc_from_json(nested).A == f3.A);

  const auto obs = testing::f3_obs();
  CHECK(io::observation_from_json(io::to_json(obs)).z == obs.z);

  const auto lgm = testing::lg_scalar();
  const auto lg_back = io::gaussian_from_json(io::to_json(lgm));
  CHECK(lg_back.A == lgm.A);
  CHECK(lg_back.Sigma0 == lgm.Sigma0);

  const auto grid = lg::embed_scalar(lgm, 6.0, 128);
  const auto grid_back = io::diffusion_from_json(io::to_json(grid));
  CHECK(grid_back.n == 128);
  CHECK(grid_back.drift(1.5) == doctest::Approx(-1.5));
  CHECK(grid_back.x_max == doctest::Approx(6.0));

  CHECK(io::model_kind(io::to_json(f3)) == io::ModelKind::Ctmc);
  CHECK(io::model_kind(io::to_json(grid)) == io::ModelKind::Diffusion);
  CHECK(io::model_kind(io::to_json(lgm)) == io::ModelKind::Gaussian);
}

TEST_CASE("malformed model files") {
  auto kind = [](const nlohmann::json& j) {
    try {
      io::ctmc_from_json(j);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::InvalidArgument;
  };
  CHECK(kind({{"d", 2}, {"A", {0, 0, 0}}, {"h", {0, 1}}, {"nu0", {0.5, 0.5}}}) == ErrorKind::MalformedInput);
  CHECK(kind({{"d", 2}, {"h", {0, 1}}, {"nu0", {0.5, 0.5}}}) == ErrorKind::MalformedInput);
  CHECK(kind({{"d", 2}, {"A", {-1, 1, 1, -1}}, {"h", {0, "x"}}, {"nu0", {0.5, 0.5}}}) == ErrorKind::MalformedInput);
  CHECK(kind({{"d", 2}, {"A", {-1, 1, 1, -1}}, {"h", {0, 1}}, {"nu0", {0.9, 0.5}}}) == ErrorKind::BadPrior);
  CHECK(io::format_number(0.1) == "0.10000000000000001");
}

TEST_CASE("smooth-finite writes the table and summary") {
  const auto out = scratch() / "finite" / "sol.csv";
  const auto r = invoke("smooth-finite --model " + q(testing::fixtures() / "ctmc_model.json") + " --obs " +
                     q(testing::fixtures() / "ctmc_obs.json") + " --out " + q(out));
  REQUIRE(r.code == 0);
  const auto rows = lines(out);
  CHECK(rows.front() == "t,state,mu,lambda,pi");
  CHECK(rows.size() == 1 + 1001 * 3);
  const auto summary = io::load_json(scratch() / "finite" / "sol.summary.json");
  for (const char* key : {"logC", "J_opt", "route_equivalence_linf"}) CHECK(summary.contains(key));
  CHECK(summary["route_equivalence_linf"].get<double>() < 1e-6);
}

TEST_CASE("smooth-grid and smooth-lg") {
  const auto lg_model = testing::fixtures() / "lg_model.json";
  const auto obs = testing::fixtures() / "lg_obs.json";
  const auto grid_model = scratch() / "grid_model.json";
  io::save_json(grid_model, io::to_json(lg::embed_scalar(testing::lg_scalar(), 6.0, 64)));

  const auto gout = scratch() / "grid" / "sol.csv";
  auto r = invoke("smooth-grid --model " + q(grid_model) + " --obs " + q(obs) + " --grid-n 80 --out " + q(gout));
  REQUIRE(r.code == 0);
  auto rows = lines(gout);
  CHECK(rows.front() == "t,x,mu,lambda,pi,u");
  CHECK(rows.size() == 1 + 1001 * 80);
  const auto summary = io::load_json(scratch() / "grid" / "sol.summary.json");
  for (const char* key : {"logC", "hjb_residual_max", "route_equivalence_linf", "mass_drift"}) CHECK(summary.contains(key));

  const auto lout = scratch() / "lg" / "sol.csv";
  r = invoke("smooth-lg --model " + q(lg_model) + " --obs " + q(obs) + " --out " + q(lout));
  REQUIRE(r.code == 0);
  rows = lines(lout);
  CHECK(rows.front() == "t,mean_0,u_0,V_0");
  CHECK(rows.size() == 1002);
  const auto ls = io::load_json(scratch() / "lg" / "sol.summary.json");
  CHECK(ls["rts_mean_error"].get<double>() < 1e-6);
  CHECK(ls.contains("J_opt"));
}

TEST_CASE("plot data") {
  const auto fin = scratch() / "plot" / "finite.csv";
  REQUIRE(invoke("smooth-finite --model " + q(testing::fixtures() / "ctmc_model.json") + " --obs " +
              q(testing::fixtures() / "ctmc_obs.json") + " --out " + q(fin))
              .code == 0);
  const auto long_fin = scratch() / "plot" / "finite_long.csv";
  REQUIRE(invoke("plot-data " + q(fin) + " --out " + q(long_fin)).code == 0);
  auto rows = lines(long_fin);
  CHECK(rows.front() == "series,t,x_or_state,value");
  std::set<std::string> series;
  for (std::size_t i = 1; i < rows.size(); ++i) series.insert(rows[i].substr(0, rows[i].find(',')));
  CHECK(series == std::set<std::string>{"mu_0", "mu_1", "mu_2", "lambda_0", "lambda_1", "lambda_2", "pi_0", "pi_1", "pi_2"});
  CHECK(rows.size() == 1 + 3 * 1001 * 3);

  const auto grid_model = scratch() / "plot" / "grid_model.json";
  io::save_json(grid_model, io::to_json(lg::embed_scalar(testing::lg_scalar(), 6.0, 40)));
  const auto grid = scratch() / "plot" / "grid.csv";
  REQUIRE(invoke("smooth-grid --model " + q(grid_model) + " --obs " + q(testing::fixtures() / "lg_obs.json") + " --out " + q(grid))
              .code == 0);
  const auto long_grid = scratch() / "plot" / "grid_long.csv";
  REQUIRE(invoke("plot-data " + q(grid) + " --out " + q(long_grid)).code == 0);
  rows = lines(long_grid);
  std::map<std::string, long> counts;
  for (std::size_t i = 1; i < rows.size(); ++i) ++counts[rows[i].substr(0, rows[i].find(','))];
  CHECK(counts.size() == 4);
  for (const auto& [name, count] : counts) CHECK(count == 1001L * 40);

  const auto empty = scratch() / "plot" / "empty.csv";
  std::ofstream(empty) << "t,state,mu,lambda,pi\n";
  const auto empty_out = scratch() / "plot" / "empty_long.csv";
  CHECK(invoke("plot-data " + q(empty) + " --out " + q(empty_out)).code == 0);
  CHECK(lines(empty_out) == std::vector<std::string>{"series,t,x_or_state,value"});

  const auto broken = scratch() / "plot" / "broken.csv";
  std::ofstream(broken) << "t,state,mu,lambda,pi\n0,0,1,2\n";
  auto r = invoke("plot-data " + q(broken) + " --out " + q(scratch() / "plot" / "broken_long.csv"));
  CHECK(r.code == 1);
  CHECK(r.err.find("MalformedInput") != std::string::npos);
  std::ofstream(broken) << "time,value\n0,1\n";
  CHECK(invoke("plot-data " + q(broken) + " --out " + q(scratch() / "plot" / "broken_long.csv")).code == 1);
}

TEST_CASE("scenario runs") {
  const auto dir = scratch() / "scenario_f3";
  REQUIRE(invoke("run " + q(testing::fixtures() / "scenarios" / "model_f3.json") + " --out-dir " + q(dir)).code == 0);
  CHECK(lines(dir / "sol.csv").size() == 1 + 1001 * 3);
  for (const char* f : {"obs.json", "model.json", "summary.json"}) CHECK(fs::exists(dir / f));
  CHECK(io::load_json(dir / "summary.json")["pass"].get<bool>());

  const auto bad = invoke("run " + q(testing::fixtures() / "invalid" / "negative_rate.json") + " --out-dir " +
                       q(scratch() / "neg"));
  CHECK(bad.code == 1);
  CHECK(bad.err.find("A[1][0]") != std::string::npos);

  // A threshold the solver cannot meet is reported as a verification failure.
  nlohmann::json strict = io::load_json(testing::fixtures() / "scenarios" / "model_f3.json");
  strict["model_file"] = (testing::fixtures() / "ctmc_model.json").string();
  strict["obs_file"] = (testing::fixtures() / "ctmc_obs.json").string();
  strict["thresholds"]["route_equivalence"] = 1e-30;
  const auto strict_file = scratch() / "strict.json";
  io::save_json(strict_file, strict);
  CHECK(invoke("run " + q(strict_file) + " --out-dir " + q(scratch() / "strict")).code == 2);

  nlohmann::json missing = strict;
  missing["obs_file"] = "nowhere.json";
  io::save_json(strict_file, missing);
  CHECK(invoke("run " + q(strict_file) + " --out-dir " + q(scratch() / "missing")).code == 1);
}

TEST_CASE("same scenario and seed give identical bytes") {
  const auto scenario = q(testing::fixtures() / "scenarios" / "f3_simulated.json");
  REQUIRE(invoke("run " + scenario + " --out-dir " + q(scratch() / "det_a")).code == 0);
  REQUIRE(invoke("run " + scenario + " --out-dir " + q(scratch() / "det_b")).code == 0);
  CHECK(slurp(scratch() / "det_a" / "sol.csv") == slurp(scratch() / "det_b" / "sol.csv"));
  CHECK(slurp(scratch() / "det_a" / "obs.json") == slurp(scratch() / "det_b" / "obs.json"));
  REQUIRE(invoke("run " + scenario + " --seed 8 --out-dir " + q(scratch() / "det_c")).code == 0);
  CHECK(slurp(scratch() / "det_a" / "obs.json") != slurp(scratch() / "det_c" / "obs.json"));
}

TEST_CASE("every bundled scenario completes quickly") {
  for (const auto& entry : fs::directory_iterator(testing::fixtures() / "scenarios")) {
    const auto start = std::chrono::steady_clock::now();
    const auto r = invoke("run " + q(entry.path()) + " --out-dir " + q(scratch() / "all" / entry.path().stem()));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CAPTURE(entry.path().string());
    CHECK(r.code == 0);
    CHECK(seconds < 60.0);
  }
}

TEST_CASE("simulate and verify subcommands") {
  const auto obs = scratch() / "sim" / "obs.json";
  REQUIRE(invoke("simulate --model " + q(testing::fixtures() / "ctmc_model.json") + " --seed 3 --N 50 --out " + q(obs)).code == 0);
  const auto path = io::observation_from_json(io::load_json(obs));
  CHECK(path.N == 50);

  const auto report_dir = scratch() / "verify";
  REQUIRE(invoke("verify --out-dir " + q(report_dir)).code == 0);
  const auto report = io::load_json(report_dir / "report.json");
  CHECK(report["pass"].get<bool>());
  for (const auto& check : report["checks"]) {
    CAPTURE(check.dump());
    CHECK(check["pass"].get<bool>());
  }

  const auto th = scratch() / "thresholds.json";
  io::save_json(th, {{"hmm_agreement", 1e-12}});
  CHECK(invoke("verify --threshold-file " + q(th) + " --out-dir " + q(report_dir)).code == 2);
  io::save_json(th, {{"no_such_check", 1.0}});
  CHECK(invoke("verify --threshold-file " + q(th) + " --out-dir " + q(report_dir)).code == 1);
}

TEST_CASE("log level from the environment") {
  const auto grid_model = scratch() / "log_model.json";
  io::save_json(grid_model, io::to_json(lg::embed_scalar(testing::lg_scalar(), 6.0, 32)));
  const std::string args = "smooth-grid --model " + q(grid_model) + " --obs " + q(testing::fixtures() / "lg_obs.json") +
                           " --out " + q(scratch() / "log" / "sol.csv");
  CHECK(invoke(args, "DUALSMOOTH_LOG=debug").err.find("[debug]") != std::string::npos);
  CHECK(invoke(args, "DUALSMOOTH_LOG=error").err.empty());
}
