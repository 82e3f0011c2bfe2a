#include "doctest.h"
#include "helpers.hpp"

#include "rgmm/baselines.hpp"
#include "rgmm/experiments.hpp"
#include "rgmm/models.hpp"
#include "rgmm/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace rgmm;

namespace {

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("rgmm_test_" + name)).string();
}

SweepConfig tiny_sweep() {
  SweepConfig cfg = desk_synthetic_preset();
  cfg.n = 300;
  cfg.d = 3;
  cfg.eps_grid = {0.05, 0.2};
  cfg.reps = 2;
  cfg.hp.gamma = 1e-6;
  return cfg;
}

}  // namespace

TEST_CASE("synthetic generator has the documented shape") {
  RandomSource rng(1);
  const SyntheticDraw draw = gen_synthetic_hte(500, 20, rng);
  CHECK(draw.data.n() == 500);
  CHECK(draw.data.d() == 20);
  CHECK(draw.data.p() == 1);
  CHECK(draw.theta.size() == 20);
  for (Eigen::Index i = 0; i < 500; ++i) {
    CHECK((draw.data.z()(i, 0) == 0.0 || draw.data.z()(i, 0) == 1.0));
    CHECK((draw.data.t()(i) == 0.0 || draw.data.t()(i) == 1.0));
  }
  RandomSource pm(1);
  const SyntheticDraw signs = gen_synthetic_hte(50, 2, pm, InstrumentCoding::plus_minus);
  CHECK((signs.data.z().array().abs() == 1.0).all());
}

TEST_CASE("synthetic noise is mean zero and the instrument is valid") {
  RandomSource rng(2);
  const std::size_t n = 100000;
  const Eigen::Index d = 5;
  const SyntheticDraw draw = gen_synthetic_hte(n, d, rng);
  const Dataset& data = draw.data;
  const Vec u = data.y() - (data.x() * draw.theta).cwiseProduct(data.t());
  CHECK(std::abs(u.mean()) <= 3.0 / std::sqrt(static_cast<double>(n)));
  const Vec m = (data.x().array().colwise() * (data.z().col(0).array() * u.array())).colwise().mean();
  CHECK(m.norm() <= 5.0 * std::sqrt(static_cast<double>(d) / static_cast<double>(n)));
}

TEST_CASE("least squares is biased along the ones vector") {
  int positive = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RandomSource rng(seed);
    const SyntheticDraw draw = gen_synthetic_hte(10000, 4, rng);
    const Dataset design = hte_design(draw.data, HteMode::treatment_only);
    const Mat& a = design.x();
    const Vec ols = (a.transpose() * a).ldlt().solve(a.transpose() * design.y());
    if ((ols - draw.theta).sum() > 0.0) ++positive;
  }
  CHECK(positive >= 9);
}

TEST_CASE("all-ones attack replaces exactly the chosen rows") {
  RandomSource rng(3);
  const SyntheticDraw draw = gen_synthetic_hte(100, 4, rng);
  const Corruption c = corrupt_all_ones(draw.data, 0.1, rng);
  REQUIRE(c.indices.size() == 10);
  CHECK(std::is_sorted(c.indices.begin(), c.indices.end()));
  for (std::size_t i = 0; i < 100; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const bool hit = std::binary_search(c.indices.begin(), c.indices.end(), i);
    if (hit) {
      CHECK((c.data.x().row(r).array() == 1.0).all());
    } else {
      CHECK(c.data.x().row(r) == draw.data.x().row(r));
    }
  }
  CHECK(c.data.y() == draw.data.y());
  CHECK(c.data.z() == draw.data.z());
  CHECK(c.data.t() == draw.data.t());

  const Corruption none = corrupt_all_ones(draw.data, 0.0, rng);
  CHECK(none.indices.empty());
  CHECK(none.data.x() == draw.data.x());
}

TEST_CASE("negation attack negates 2sls and only touches chosen responses") {
  RandomSource rng(4);
  const Dataset design = scalar_treatment_design(gen_schooling_standin(3010, rng), true);
  const Vec w0 = two_stage_least_squares(design);
  for (double eps : {0.05, 0.10, 0.15}) {
    const Corruption c = corrupt_negation(design, eps, rng);
    CHECK((two_stage_least_squares(c.data) + w0).norm() <= 1e-8 * w0.norm());
    for (std::size_t i = 0; i < design.n(); ++i) {
      if (!std::binary_search(c.indices.begin(), c.indices.end(), i)) {
        CHECK(c.data.y()(static_cast<Eigen::Index>(i)) == design.y()(static_cast<Eigen::Index>(i)));
      }
    }
    CHECK(c.data.x() == design.x());
    CHECK(c.data.z() == design.z());
  }
}

TEST_CASE("negation perturbation has minimum norm") {
  RandomSource rng(5);
  const Dataset design = scalar_treatment_design(gen_schooling_standin(400, rng), true);
  const Corruption c = corrupt_negation(design, 0.05, rng);
  const auto k = static_cast<Eigen::Index>(c.indices.size());
  Mat A(design.p(), k);
  Vec delta(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto i = static_cast<Eigen::Index>(c.indices[static_cast<std::size_t>(j)]);
    A.col(j) = design.z().row(i).transpose();
    delta(j) = c.data.y()(i) - design.y()(i);
  }
  // Any other solution differs by a null-space vector of A.
  const Eigen::FullPivLU<Mat> lu(A);
  const Mat null = lu.kernel();
  for (int trial = 0; trial < 20; ++trial) {
    const Vec other = delta + null * testing::random_vec(null.cols(), rng);
    CHECK(other.norm() >= delta.norm() * (1.0 - 1e-12));
  }
  CHECK_THROWS_AS(corrupt_negation(hte_design(gen_synthetic_hte(50, 2, rng).data, HteMode::treatment_only).with_z(Mat::Ones(50, 1)), 0.1, rng), Error);
}

TEST_CASE("schooling stand-in matches the schema") {
  RandomSource rng(6);
  const Dataset data = gen_schooling_standin(3010, rng);
  CHECK(data.n() == 3010);
  CHECK(data.d() == 2);
  CHECK(data.p() == 1);
  CHECK(data.has_treatment());
  CHECK(data.x().col(1).isApprox(data.x().col(0).cwiseProduct(data.x().col(0))));
}

TEST_CASE("csv round trip is exact") {
  RandomSource rng(7);
  const SyntheticDraw draw = gen_synthetic_hte(40, 3, rng);
  ColumnMap cols{"y", std::string("t"), {"z"}, {"x1", "x2", "x3"}};
  const std::string path = temp_file("roundtrip.csv");
  write_csv(draw.data, path, cols, {"a header line"});
  const CsvLoad load = load_csv(path, cols);
  CHECK(load.dropped == 0);
  CHECK(load.rows_read == 40);
  CHECK(load.data.x() == draw.data.x());
  CHECK(load.data.y() == draw.data.y());
  CHECK(load.data.z() == draw.data.z());
  CHECK(load.data.t() == draw.data.t());
  std::filesystem::remove(path);
}

TEST_CASE("csv loader errors and missing values") {
  const std::string path = temp_file("bad.csv");
  const ColumnMap cols{"y", std::nullopt, {"z"}, {"x"}};
  {
    std::ofstream(path) << "";
  }
  CHECK_THROWS_WITH_AS(load_csv(path, cols), doctest::Contains("no data rows"), Error);
  {
    std::ofstream(path) << "y,z,x\n";
  }
  CHECK_THROWS_WITH_AS(load_csv(path, cols), doctest::Contains("no data rows"), Error);
  {
    std::ofstream(path) << "y,z,x\n1,2,3\n4,,6\n7,8,NA\n9,10,11\n";
  }
  const CsvLoad load = load_csv(path, cols);
  CHECK(load.rows_read == 4);
  CHECK(load.dropped == 2);
  CHECK(load.data.n() == 2);
  {
    std::ofstream(path) << "y,z\n1,2\n";
  }
  CHECK_THROWS_AS(load_csv(path, cols), Error);
  CHECK_THROWS_AS(load_csv(temp_file("does_not_exist.csv"), cols), Error);
  std::filesystem::remove(path);
}

TEST_CASE("centering subtracts column means but leaves the response") {
  RandomSource rng(8);
  const Dataset data = gen_schooling_standin(200, rng);
  const Dataset c = center_columns(data);
  CHECK(c.x().colwise().mean().norm() <= 1e-10);
  CHECK(c.z().colwise().mean().norm() <= 1e-10);
  CHECK(std::abs(c.t().mean()) <= 1e-10);
  CHECK(c.y() == data.y());
}

TEST_CASE("diagnostics on ordinary regression") {
  RandomSource rng(9);
  const Vec w = testing::random_vec(3, rng);
  LinearIVModel model(std::make_shared<const Dataset>(testing::regression_data(20000, w, 0.0, rng)));
  const auto diag = diagnose_assumptions(model, ActiveSet::full(20000), w, rng);
  CHECK(diag.at("lambda_hat") == doctest::Approx(1.0).epsilon(0.1));
  CHECK(diag.at("sigma2L_hat") <= 1e-12);
  CHECK(diag.at("moment_norm") <= 1e-12);
}

TEST_CASE("diagnostics are invariant to duplicating every sample") {
  RandomSource rng(10);
  const Dataset data = testing::regression_data(60, testing::random_vec(2, rng), 0.3, rng);
  std::vector<std::size_t> twice;
  for (std::size_t i = 0; i < 60; ++i) {
    twice.push_back(i);
    twice.push_back(i);
  }
  LinearIVModel a(std::make_shared<const Dataset>(data));
  LinearIVModel b(std::make_shared<const Dataset>(data.subset(twice)));
  const Vec w_ref = two_stage_least_squares(data);
  RandomSource ra(1), rb(1);
  const auto da = diagnose_assumptions(a, ActiveSet::full(60), w_ref, ra);
  const auto db = diagnose_assumptions(b, ActiveSet::full(120), w_ref, rb);
  for (const char* key : {"lambda_hat", "L2_hat", "sigma2L_hat", "moment_norm"}) {
    CHECK(da.at(key) == doctest::Approx(db.at(key)).epsilon(1e-9));
  }
}

TEST_CASE("plug-in hyperparameters respect the rule factors") {
  RandomSource rng(11);
  const Vec w = testing::random_vec(2, rng);
  LinearIVModel model(std::make_shared<const Dataset>(testing::regression_data(500, w, 0.5, rng)));
  RandomSource r1(3), r2(3);
  const HyperParams unit = plugin_hyperparams(model, w, HyperParams{}, PluginRule{1.0, 1.0, 1.0, 0.0}, r1);
  const HyperParams wide = plugin_hyperparams(model, w, HyperParams{}, PluginRule{0.5, 2.0, 2.0, 1.0}, r2);
  CHECK(wide.lambda == doctest::Approx(0.5 * unit.lambda));
  CHECK(wide.L == doctest::Approx(2.0 * unit.L));
  CHECK(wide.R0 == doctest::Approx(2.0 * unit.R0 + 1.0));
  CHECK(unit.R0 == doctest::Approx(w.norm()));
  CHECK(unit.L >= unit.lambda);
  CHECK_NOTHROW(unit.validate());
}

TEST_CASE("sweep row count follows the grid") {
  SweepConfig cfg = tiny_sweep();
  const SweepResult res = run_sweep(cfg);
  CHECK(res.rows.size() == cfg.eps_grid.size() * cfg.estimators.size() * static_cast<std::size_t>(cfg.reps));
  CHECK(res.rows.front().estimator == kIteratedGmmSever);
  CHECK(res.rows.front().metric == "l2_error");
  CHECK_FALSE(res.reference_ate.has_value());
  for (const SweepRow& row : res.rows) CHECK(row.runtime_ms == 0.0);

  SweepConfig defaults;
  CHECK(defaults.n == 10000);
  CHECK(defaults.d == 20);
  CHECK(defaults.reps == 10);
  CHECK(defaults.eps_grid.size() * defaults.estimators.size() * static_cast<std::size_t>(defaults.reps) == 240);
  CHECK(defaults.eps_grid.front() == 0.01);
  CHECK(defaults.eps_grid.back() == 0.5);
}

TEST_CASE("sweep is deterministic and independent of the job count") {
  SweepConfig cfg = tiny_sweep();
  const SweepResult a = run_sweep(cfg);
  cfg.jobs = 3;
  const SweepResult b = run_sweep(cfg);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    CHECK(a.rows[k].estimator == b.rows[k].estimator);
    CHECK(a.rows[k].seed == b.rows[k].seed);
    CHECK(format_double(a.rows[k].value) == format_double(b.rows[k].value));
  }
  cfg.seed = 1;
  CHECK(run_sweep(cfg).rows.front().seed != a.rows.front().seed);
}

TEST_CASE("cell seeds are distinct across cells") {
  std::vector<std::uint64_t> seeds;
  for (std::size_t e = 0; e < 8; ++e) {
    for (int r = 0; r < 10; ++r) seeds.push_back(cell_seed(0, e, r));
  }
  std::sort(seeds.begin(), seeds.end());
  CHECK(std::adjacent_find(seeds.begin(), seeds.end()) == seeds.end());
  CHECK(cell_seed(5, 1, 2) == cell_seed(5, 1, 2));
}

TEST_CASE("summary means equal row means") {
  std::vector<SweepRow> rows;
  for (int r = 0; r < 4; ++r) rows.push_back({0.1, "a", "l2_error", 1.0 + r, false, 0, 0.0, r});
  rows.push_back({0.1, "a", "l2_error", 0.0, true, 0, 0.0, 4});
  rows.push_back({0.2, "a", "l2_error", 5.0, false, 0, 0.0, 0});
  const auto summary = summarize(rows);
  REQUIRE(summary.size() == 2);
  CHECK(summary[0].mean == doctest::Approx(2.5));
  CHECK(summary[0].count == 4);
  CHECK(summary[0].failed == 1);
  CHECK(summary[0].stderr_ == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
  CHECK(summary[1].stderr_ == 0.0);
}

TEST_CASE("sweep writers and summary path") {
  CHECK(summary_path("out/run.csv") == "out/run.summary.csv");
  CHECK(summary_path("run") == "run.summary.csv");
  CHECK(format_double(0.1) == "0.10000000000000001");
  const std::string path = temp_file("rows.csv");
  write_rows_csv(path, {{0.1, "classical-iv", "l2_error", 0.5, false, 7, 0.0, 0},
                        {0.1, "iterated-gmm-sever", "l2_error", 0.0, true, 7, 0.0, 0}},
                 {"rgmm test"});
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "# rgmm test");
  std::getline(in, line);
  CHECK(line == "epsilon,estimator,metric,value,seed,runtime_ms");
  std::getline(in, line);
  CHECK(line == "0.10000000000000001,classical-iv,l2_error,0.5,7,0");
  std::getline(in, line);
  CHECK(line.find(",failed,") != std::string::npos);
  std::filesystem::remove(path);
}

TEST_CASE("semi-synthetic sweep reports the treatment coefficient") {
  SweepConfig cfg = semi_synthetic_preset();
  cfg.eps_grid = {0.05};
  cfg.reps = 2;
  cfg.estimators = {kClassicalIv};
  cfg.standin_n = 500;
  const SweepResult res = run_sweep(cfg);
  REQUIRE(res.reference_ate.has_value());
  REQUIRE(res.rows.size() == 2);
  for (const SweepRow& row : res.rows) {
    CHECK(row.metric == "ate");
    CHECK(row.value == doctest::Approx(-*res.reference_ate).epsilon(1e-8));
  }
}
