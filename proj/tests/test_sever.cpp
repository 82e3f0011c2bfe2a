#include "doctest.h"
#include "helpers.hpp"

#include "rgmm/models.hpp"
#include "rgmm/numerics.hpp"
#include "rgmm/sever.hpp"

#include <cmath>

using namespace rgmm;

namespace {

HyperParams sever_params() {
  HyperParams hp;
  hp.eps = 0.1;
  hp.lambda = 0.5;
  hp.L = 1.0;
  hp.sigma = 0.1;
  hp.gamma = 1e-8;
  hp.R0 = 1.0;
  return hp;
}

SeverResult fake_run(std::size_t kept) {
  SeverResult r;
  std::vector<std::size_t> idx(kept);
  for (std::size_t i = 0; i < kept; ++i) idx[i] = i;
  r.S = ActiveSet(idx);
  r.w = Vec::Constant(1, static_cast<double>(kept));
  return r;
}

}  // namespace

TEST_CASE("gmm-sever on clean noiseless data keeps everything") {
  RandomSource rng(1);
  const Vec w_star = (Vec(3) << 0.3, -0.4, 0.2).finished();
  LinearIVModel model(std::make_shared<const Dataset>(testing::regression_data(50, w_star, 0.0, rng)));
  const HyperParams hp = sever_params();
  const SeverResult res = gmm_sever(model, hp, Vec::Zero(3), 2.0, rng);
  CHECK(res.S.size() == 50);
  CHECK(res.iterations == 1);
  CHECK(res.events.empty());
  const double lambda = smallest_singular_value(mean_jacobian(model, res.S, res.w));
  CHECK((res.w - w_star).norm() <= 10.0 * *hp.gamma / lambda);
}

TEST_CASE("gmm-sever leaves identical consistent samples untouched") {
  Mat x = Mat::Ones(12, 2);
  const Vec w_star = (Vec(2) << 0.5, 0.25).finished();
  LinearIVModel model(std::make_shared<const Dataset>(x, x * w_star, x));
  RandomSource rng(2);
  HyperParams hp = sever_params();
  const SeverResult res = gmm_sever(model, hp, Vec::Zero(2), 1.0, rng);
  CHECK(res.S.size() == 12);
  CHECK(res.events.empty());
}

TEST_CASE("gmm-sever removes planted moment outliers") {
  int both_removed = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    RandomSource rng(seed);
    const Vec w_star = (Vec(2) << 1.0, -1.0).finished();
    Mat x = testing::random_mat(22, 2, rng);
    Vec y = x * w_star + testing::random_vec(22, rng, 0.1);
    double inlier_norm = 0.0;
    for (Eigen::Index i = 0; i < 20; ++i) inlier_norm += x.row(i).norm() * std::abs(y(i) - x.row(i).dot(w_star)) / 20.0;
    // Two outliers whose moment at w_star is 100 times the mean inlier moment norm.
    for (Eigen::Index i = 20; i < 22; ++i) {
      y(i) = x.row(i).dot(w_star) + (i == 20 ? 100.0 : -100.0) * inlier_norm / x.row(i).norm();
    }
    LinearIVModel model(std::make_shared<const Dataset>(x, y, x));
    HyperParams hp = sever_params();
    try {
      const SeverResult res = gmm_sever(model, hp, w_star, 0.1, rng);
      if (!res.S.contains(20) && !res.S.contains(21)) ++both_removed;
    } catch (const SeverAborted&) {
      // An aborted run does not count as a success.
    }
  }
  MESSAGE("runs excluding both outliers: " << both_removed);
  CHECK(both_removed >= 90);
}

TEST_CASE("gmm-sever aborts when the filter exhausts the sample") {
  RandomSource rng(3);
  Mat x = testing::random_mat(30, 2, rng);
  const Vec y = testing::random_vec(30, rng, 100.0);
  LinearIVModel model(std::make_shared<const Dataset>(x, y, x));
  HyperParams hp = sever_params();
  hp.sigma = 1e-6;
  hp.filter_slack = 1e-6;
  CHECK_THROWS_AS(gmm_sever(model, hp, Vec::Zero(2), 1e-6, rng), SeverAborted);
}

TEST_CASE("amplification repetition counts") {
  CHECK(amplification_reps(0.1) == 1);
  CHECK(amplification_reps(1e-3) == 3);
  CHECK(amplification_reps(0.05) == 2);
  CHECK_THROWS_AS(amplification_reps(0.0), Error);
}

TEST_CASE("amplify stops at the first accepted run") {
  int used = 0;
  const SeverResult r = amplify([](int) { return fake_run(100); }, 3, 90, &used);
  CHECK(used == 1);
  CHECK(r.S.size() == 100);
}

TEST_CASE("amplify moves past a run that filtered too much") {
  int used = 0;
  const SeverResult r = amplify([](int rep) { return fake_run(rep == 0 ? 70 : 100); }, 3, 90, &used);
  CHECK(used == 2);
  CHECK(r.S.size() == 100);
}

TEST_CASE("amplify returns the largest set when nothing is accepted") {
  int used = 0;
  const SeverResult r = amplify([](int rep) { return fake_run(std::size_t(60 + 5 * rep)); }, 3, 90, &used);
  CHECK(used == 3);
  CHECK(r.S.size() == 70);
}

TEST_CASE("amplify rethrows only when every run aborts") {
  CHECK_THROWS_AS(amplify([](int) -> SeverResult { throw SeverAborted(); }, 2, 1), SeverAborted);
  const SeverResult r = amplify(
      [](int rep) -> SeverResult {
        if (rep == 0) throw SeverAborted();
        return fake_run(5);
      },
      2, 100);
  CHECK(r.S.size() == 5);
}

TEST_CASE("affine radius schedule trace") {
  HyperParams hp;
  hp.eps = 0.01;
  hp.lambda = 1.0;
  hp.L = 1.0;
  hp.sigma = 0.5;
  hp.R0 = 10.0;
  hp.sched = RadiusSchedule::practice();
  const std::vector<double> radii = radius_sequence(hp, 0.01);
  const std::vector<double> expect{10.0, 2.14, 0.568, 0.2536, 0.19072};
  REQUIRE(radii.size() == expect.size());
  for (std::size_t k = 0; k < expect.size(); ++k) CHECK(radii[k] == doctest::Approx(expect[k]).epsilon(1e-12));
  CHECK(radii.back() > radii[radii.size() - 2] / 2.0);
}

TEST_CASE("affine schedule converges to its fixed point") {
  HyperParams hp;
  hp.eps = 0.01;
  hp.lambda = 1.0;
  hp.L = 1.0;
  hp.sigma = 0.5;
  hp.sched = RadiusSchedule::practice();
  double R = 10.0;
  for (int k = 0; k < 200; ++k) R = next_radius(hp, R, 0.01);
  CHECK(R == doctest::Approx(0.14 / 0.8));
}

TEST_CASE("halving schedule reaches the floor in the expected number of halvings") {
  HyperParams hp;
  hp.eps = 0.0;
  hp.lambda = 1.0;
  hp.L = 1.0;
  hp.R0 = 1.0;
  hp.sched.kind = ScheduleKind::halving;
  const double gamma = 1e-3;
  const std::vector<double> radii = radius_sequence(hp, gamma);
  const double floor = hp.sched.c1 * gamma;
  const auto halvings = static_cast<std::size_t>(std::ceil(std::log2(hp.R0 / (2.0 * floor))));
  REQUIRE(radii.size() == halvings + 2);
  for (std::size_t k = 1; k + 1 < radii.size(); ++k) CHECK(radii[k] == radii[k - 1] / 2.0);
  CHECK(radii.back() == doctest::Approx(floor));
}

TEST_CASE("iterated gmm-sever on noiseless identified data reaches the gamma floor") {
  RandomSource rng(4);
  const Vec w_star = (Vec(3) << 1.0, -0.5, 0.25).finished();
  LinearIVModel model(std::make_shared<const Dataset>(testing::regression_data(200, w_star, 0.0, rng)));
  const Mat J = mean_jacobian(model, ActiveSet::full(200), w_star);
  HyperParams hp;
  hp.eps = 0.01;
  hp.sigma = 0.0;
  hp.lambda = smallest_singular_value(J);
  hp.L = J.norm();
  hp.gamma = 1e-6;
  hp.R0 = 2.0 * w_star.norm();
  hp.sched.kind = ScheduleKind::halving;
  const EstimateReport rep = iterated_gmm_sever(model, hp, rng);
  CHECK((rep.w_hat - w_star).norm() <= 4.0 * *hp.gamma / (hp.lambda * hp.lambda));
  CHECK(rep.final_set.size() == 200);
  REQUIRE(rep.radius_trace.size() >= 2);
  for (std::size_t k = 1; k + 1 < rep.radius_trace.size(); ++k) {
    CHECK(rep.radius_trace[k].second < rep.radius_trace[k - 1].second);
  }
}

TEST_CASE("iterated gmm-sever notes a degenerate schedule") {
  RandomSource rng(5);
  const Vec w_star = (Vec(2) << 1.0, 1.0).finished();
  LinearIVModel model(std::make_shared<const Dataset>(testing::regression_data(40, w_star, 0.1, rng)));
  HyperParams hp;
  hp.eps = 0.2;
  hp.lambda = 0.1;
  hp.L = 10.0;
  hp.sigma = 1.0;
  hp.R0 = 3.0;
  const EstimateReport rep = iterated_gmm_sever(model, hp, rng);
  CHECK(rep.diagnostics.at("schedule_degenerate") == 1.0);
  CHECK(rep.diagnostics.at("stages") == 1.0);
  CHECK_FALSE(rep.notes.empty());
}

TEST_CASE("iterated gmm-sever is deterministic for a fixed seed") {
  RandomSource data_rng(6);
  const Vec w_star = (Vec(2) << 0.5, -1.0).finished();
  Dataset data = testing::regression_data(100, w_star, 0.2, data_rng);
  Mat x = data.x();
  for (Eigen::Index i = 0; i < 10; ++i) x.row(i).setConstant(5.0);
  LinearIVModel model(std::make_shared<const Dataset>(data.with_x(x)));
  HyperParams hp;
  hp.eps = 0.1;
  hp.lambda = 0.5;
  hp.L = 2.0;
  hp.sigma = 0.2;
  hp.R0 = 3.0;
  hp.gamma = 1e-6;
  hp.filter_slack = 1.0;
  hp.sched = {4.0, 0.01, ScheduleKind::halving};
  RandomSource a(99), b(99);
  const EstimateReport ra = iterated_gmm_sever(model, hp, a);
  const EstimateReport rb = iterated_gmm_sever(model, hp, b);
  CHECK(ra.w_hat == rb.w_hat);
  CHECK(ra.final_set == rb.final_set);
  CHECK(ra.radius_trace == rb.radius_trace);
}
