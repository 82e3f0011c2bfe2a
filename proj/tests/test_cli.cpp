#include "doctest.h"
#include "helpers.hpp"

#include "rgmm/cli.hpp"
#include "rgmm/experiments.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rgmm;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "rgmm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("rgmm_cli_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Noiseless linear IV data with Z = X, written with y, x1, x2 and z1, z2 columns.
std::string write_noiseless(const Vec& w) {
  RandomSource rng(5);
  const Mat x = testing::random_mat(200, 2, rng);
  std::ostringstream csv;
  csv << "y,x1,x2,z1,z2\n";
  for (Eigen::Index i = 0; i < 200; ++i) {
    csv << format_double(x.row(i).dot(w)) << ',' << format_double(x(i, 0)) << ',' << format_double(x(i, 1))
        << ',' << format_double(x(i, 0)) << ',' << format_double(x(i, 1)) << '\n';
  }
  const std::string path = temp_path("noiseless.csv");
  std::ofstream(path, std::ios::binary) << csv.str();
  return path;
}

std::vector<std::string> estimate_args(const std::string& data, const std::string& out) {
  return {"estimate", "--out", out, "--set", "data=" + data, "--set", "model=linear-iv", "--set", "response=y",
          "--set", "treatment=", "--set", "instruments=z1,z2", "--set", "covariates=x1,x2", "--set", "hp_source=fixed",
          "--set", "eps=0.01", "--set", "lambda=0.5", "--set", "L=2", "--set", "sigma=0", "--set", "R0=3",
          "--set", "gamma=1e-7", "--set", "schedule=halving"};
}

}  // namespace

TEST_CASE("settings parser") {
  std::istringstream in("# comment\n\n seed = 5 \neps_grid=0.1, 0.2\n");
  const auto s = parse_settings(in, "inline");
  CHECK(s.at("seed") == "5");
  CHECK(s.at("eps_grid") == "0.1, 0.2");

  std::istringstream missing("seed\n");
  CHECK_THROWS_WITH_AS(parse_settings(missing, "f"), doctest::Contains("f:1"), Error);
  std::istringstream twice("a=1\na=2\n");
  CHECK_THROWS_AS(parse_settings(twice, "f"), Error);
  CHECK(parse_assignment("c2 = 0.5") == std::make_pair(std::string("c2"), std::string("0.5")));
  CHECK_THROWS_AS(parse_assignment("=3"), Error);
}

TEST_CASE("sweep settings apply and describe round-trip") {
  SweepConfig cfg = default_sweep_config(SweepKind::synthetic);
  apply_setting(cfg, "eps_grid", "0.1,0.2");
  apply_setting(cfg, "schedule", "halving");
  apply_setting(cfg, "gamma", "1e-6");
  apply_setting(cfg, "attack", "none");
  CHECK(cfg.eps_grid == std::vector<double>{0.1, 0.2});
  CHECK(cfg.hp.sched.kind == ScheduleKind::halving);
  REQUIRE(cfg.hp.gamma.has_value());
  CHECK(*cfg.hp.gamma == 1e-6);
  CHECK(cfg.attack == AttackKind::none);

  SweepConfig copy = default_sweep_config(SweepKind::synthetic);
  for (const auto& [k, v] : describe(cfg)) apply_setting(copy, k, v);
  CHECK(describe(copy) == describe(cfg));

  CHECK_THROWS_WITH_AS(apply_setting(cfg, "bogus", "1"), "unknown key 'bogus'", Error);
  CHECK_THROWS_AS(apply_setting(cfg, "reps", "ten"), Error);
  CHECK_THROWS_AS(apply_setting(cfg, "schedule", "geometric"), Error);
  CHECK_THROWS_AS(apply_setting(cfg, "data", "x.csv"), Error);

  SweepConfig semi = default_sweep_config(SweepKind::semi_synthetic);
  CHECK(semi.attack == AttackKind::negation);
  CHECK_NOTHROW(apply_setting(semi, "center", "true"));
  CHECK_THROWS_AS(apply_setting(semi, "d", "3"), Error);
}

TEST_CASE("usage errors exit with 1") {
  CHECK(cli({}).code == 1);
  CHECK(cli({"frobnicate"}).code == 1);
  CHECK(cli({"--help"}).code == 0);
  const Run r = cli({"synth-sweep", "--out", temp_path("x.csv"), "--set", "nope=1"});
  CHECK(r.code == 1);
  CHECK(r.err.find("unknown key 'nope'") != std::string::npos);
  CHECK(cli({"synth-sweep", "--config", temp_path("missing.cfg"), "--out", temp_path("x.csv")}).code == 1);
  CHECK(cli({"estimate", "--out", temp_path("x.csv"), "--set", "eps=0.5"}).err.find("eps must be < 0.5") !=
        std::string::npos);
}

TEST_CASE("estimate recovers noiseless parameters and is byte-reproducible") {
  const Vec w = (Vec(2) << 0.75, -1.25).finished();
  const std::string data = write_noiseless(w);
  const std::string a = temp_path("est_a.csv");
  const std::string b = temp_path("est_b.csv");
  const Run ra = cli(estimate_args(data, a));
  REQUIRE(ra.code == 0);
  REQUIRE(cli(estimate_args(data, b)).code == 0);
  const std::string text = slurp(a);
  CHECK(text == slurp(b));
  CHECK(text.rfind("# rgmm estimate\n", 0) == 0);
  CHECK(text.find("\nsection,key,value\n") != std::string::npos);

  std::istringstream lines(text);
  std::string line;
  Vec got = Vec::Zero(2);
  while (std::getline(lines, line)) {
    if (line.rfind("param,", 0) == 0) {
      const auto second = line.find(',', 6);
      got(std::stoi(line.substr(6, second - 6))) = std::stod(line.substr(second + 1));
    }
  }
  CHECK((got - w).norm() <= 1e-4);

  auto bad = estimate_args(data, a);
  bad.push_back("--set");
  bad.push_back("eps=0.6");
  CHECK(cli(bad).code == 1);
}

TEST_CASE("estimate rejects plug-in hyperparameters for the logistic model") {
  const std::string data = write_noiseless(Vec::Ones(2));
  auto args = estimate_args(data, temp_path("logit.csv"));
  args.insert(args.end(), {"--set", "model=logistic-iv", "--set", "hp_source=plugin"});
  CHECK(cli(args).code == 2);
}

TEST_CASE("sweep subcommand writes rows, summary and a stamped header") {
  const std::string out = temp_path("sweep.csv");
  const std::vector<std::string> args{"synth-sweep", "--out", out, "--seed", "3", "--set", "n=200",
                                      "--set", "d=2", "--set", "eps_grid=0.1", "--set", "reps=2",
                                      "--set", "gamma=1e-6", "--jobs", "2"};
  REQUIRE(cli(args).code == 0);
  const std::string rows = slurp(out);
  const std::string summary = slurp(summary_path(out));
  CHECK(rows.rfind("# rgmm synth-sweep\n# seed=3\n", 0) == 0);
  CHECK(rows.find("jobs=") == std::string::npos);
  CHECK(summary.find("epsilon,estimator,metric,mean,stderr,count,failed") != std::string::npos);
  REQUIRE(cli(args).code == 0);
  CHECK(slurp(out) == rows);
}

TEST_CASE("sweep where every cell fails exits with 2") {
  const std::string out = temp_path("fail.csv");
  const Run r = cli({"synth-sweep", "--out", out, "--set", "n=200", "--set", "d=2", "--set", "eps_grid=0.5",
                     "--set", "reps=1", "--set", "estimators=iterated-gmm-sever"});
  CHECK(r.code == 2);
}

TEST_CASE("diagnose and gen-data") {
  const std::string data = temp_path("standin.csv");
  REQUIRE(cli({"gen-data", "--out", data, "--set", "n=300"}).code == 0);
  const CsvLoad load = load_csv(data, schooling_columns());
  CHECK(load.data.n() == 300);
  const Run r = cli({"diagnose", "--set", "data=" + data});
  CHECK(r.code == 0);
  CHECK(r.out.find("lambda_hat,") != std::string::npos);
  CHECK(r.out.find("plugin_R0,") != std::string::npos);

  const std::string synth = temp_path("synth.csv");
  REQUIRE(cli({"gen-data", "--out", synth, "--set", "kind=synthetic", "--set", "n=50", "--set", "d=3"}).code == 0);
  CHECK(slurp(synth).find("# theta=") != std::string::npos);

  const std::filesystem::path nested = std::filesystem::path(temp_path("nested")) / "a" / "b.csv";
  std::filesystem::remove_all(temp_path("nested"));
  CHECK(cli({"gen-data", "--out", nested.string(), "--set", "n=20"}).code == 0);
  CHECK(std::filesystem::exists(nested));
}

TEST_CASE("selfcheck passes and is deterministic") {
  const Run a = cli({"selfcheck", "--seed", "11"});
  const Run b = cli({"selfcheck", "--seed", "11"});
  CHECK(a.code == 0);
  CHECK(a.out == b.out);
  std::size_t count = 0;
  std::istringstream lines(a.out);
  std::string line;
  while (std::getline(lines, line)) count += line.rfind("PASS ", 0) == 0 ? 1 : 0;
  CHECK(count >= 6);
}
