#include "rgmm/sever.hpp"

#include "rgmm/filter.hpp"
#include "rgmm/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace rgmm {

namespace {

/// Objective |E_S g(w)|^2 and its gradient 2 (E_S Dg(w))^T E_S g(w).
/// Affine models reuse one mean Jacobian and offset per active set.
struct GmmObjective {
  const MomentModel& model;
  const ActiveSet& S;
  std::optional<Mat> J;
  std::optional<Vec> offset;

  GmmObjective(const MomentModel& m, const ActiveSet& s) : model(m), S(s) {
    if (model.jacobian_is_constant()) {
      const Vec zero = Vec::Zero(model.param_dim());
      J = mean_jacobian(model, S, zero);
      offset = mean_moment(model, S, zero);
    }
  }

  Vec moment(const Vec& w) const {
    return J ? Vec(*offset + *J * w) : mean_moment(model, S, w);
  }
  double value(const Vec& w) const { return moment(w).squaredNorm(); }
  Vec gradient(const Vec& w) const {
    const Mat Jw = J ? *J : mean_jacobian(model, S, w);
    return 2.0 * Jw.transpose() * moment(w);
  }
};

std::size_t abort_floor(std::size_t n) {
  return std::max<std::size_t>(1, (2 * n + 2) / 3);
}

}  // namespace

SeverResult gmm_sever(const MomentModel& model, const HyperParams& hp, const Vec& w0, double R,
                      RandomSource& rng) {
  if (!(R >= 0.0)) throw Error("radius must be non-negative");
  if (w0.size() != model.param_dim()) throw Error("w0 has the wrong dimension");
  const std::size_t n = model.num_samples();
  const double gamma = resolved_gamma(hp);
  const double L2 = hp.L * hp.L;
  const double moment_bound = hp.sigma * hp.sigma * hp.L + 4.0 * L2 * R * R;
  const Eigen::Index d = model.param_dim();
  const Eigen::Index p = model.moment_dim();

  SeverResult res;
  res.S = ActiveSet::full(n);
  Vec w = w0;

  // Each round either stops or removes at least one sample.
  for (std::size_t round = 0; round <= n; ++round) {
    ++res.iterations;
    const GmmObjective obj(model, res.S);
    CriticalPointProblem prob;
    prob.objective = [&obj](const Vec& v) { return obj.value(v); };
    prob.gradient = [&obj](const Vec& v) { return obj.gradient(v); };
    prob.center = w0;
    prob.radius = R;
    prob.gamma = gamma;
    prob.max_iters = hp.learner_max_iters;
    if (hp.warm_start) prob.start = w;
    const LearnerResult lr = projected_gradient_critical_point(prob);
    w = lr.x;
    if (!lr.tolerance_met) ++res.learner_flags;

    const Vec u = obj.moment(w);
    const auto m = static_cast<Eigen::Index>(res.S.size());

    Mat xi(m, d);
    for (Eigen::Index r = 0; r < m; ++r) {
      xi.row(r) = model.jacobian_transpose_times(res.S[static_cast<std::size_t>(r)], w, u).transpose();
    }
    FilterOutcome first = filter(xi, res.S, L2 * u.squaredNorm(), rng, hp.filter_slack);
    if (!first.removed.empty()) {
      res.events.push_back({1, res.iterations, FilterKind::jacobian, first.removed.size()});
      res.S = std::move(first.kept);
      if (res.S.size() < abort_floor(n)) throw SeverAborted();
      continue;
    }

    Mat moments(m, p);
    for (Eigen::Index r = 0; r < m; ++r) {
      moments.row(r) = model.moment(res.S[static_cast<std::size_t>(r)], w).transpose();
    }
    FilterOutcome second = filter(moments, res.S, moment_bound, rng, hp.filter_slack);
    if (!second.removed.empty()) {
      res.events.push_back({1, res.iterations, FilterKind::moment, second.removed.size()});
      res.S = std::move(second.kept);
      if (res.S.size() < abort_floor(n)) throw SeverAborted();
      continue;
    }

    res.w = w;
    return res;
  }
  throw Error("GMM-Sever failed to terminate");
}

int amplification_reps(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw Error("delta must lie in (0, 1)");
  const double reps = std::ceil(std::log10(1.0 / delta) - 1e-9);
  return std::max(1, static_cast<int>(std::min(reps, 1e6)));
}

SeverResult amplify(const std::function<SeverResult(int)>& run, int max_reps,
                    std::size_t accept_size, int* reps_used) {
  std::optional<SeverResult> best;
  std::optional<SeverAborted> last_abort;
  int used = 0;
  for (int rep = 0; rep < max_reps; ++rep) {
    ++used;
    try {
      SeverResult r = run(rep);
      const bool accepted = r.S.size() >= accept_size;
      if (!best || r.S.size() > best->S.size()) best = std::move(r);
      if (accepted) break;
    } catch (const SeverAborted& e) {
      last_abort = e;
    }
  }
  if (reps_used) *reps_used = used;
  if (!best) throw *last_abort;
  return std::move(*best);
}

SeverResult amplified_gmm_sever(const MomentModel& model, const HyperParams& hp, const Vec& w0,
                                double R, RandomSource& rng) {
  const std::size_t n = model.num_samples();
  const double frac = std::max(0.0, 1.0 - hp.accept_factor * hp.eps);
  const auto accept_size = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n) - 1e-9));
  return amplify(
      [&](int rep) {
        RandomSource child = rng.split(static_cast<std::uint64_t>(rep));
        return gmm_sever(model, hp, w0, R, child);
      },
      amplification_reps(hp.delta), accept_size);
}

double next_radius(const HyperParams& hp, double R, double gamma) {
  const double lam2 = hp.lambda * hp.lambda;
  const double se = std::sqrt(hp.eps);
  const double floor = hp.sched.c1 * gamma / lam2 + hp.sched.c2 * hp.sigma * std::pow(hp.L, 1.5) / lam2 * se;
  if (hp.sched.kind == ScheduleKind::halving) return std::max(R / 2.0, floor);
  return floor + hp.sched.c2 * (hp.L * hp.L / lam2) * R * se;
}

std::vector<double> radius_sequence(const HyperParams& hp, double gamma, int max_len) {
  std::vector<double> radii{hp.R0};
  while (static_cast<int>(radii.size()) < max_len) {
    const double next = next_radius(hp, radii.back(), gamma);
    const bool stop = next > radii.back() / 2.0;
    radii.push_back(next);
    if (stop) break;
  }
  return radii;
}

EstimateReport iterated_gmm_sever(const MomentModel& model, const HyperParams& hp,
                                  RandomSource& rng) {
  hp.validate();
  const double gamma = resolved_gamma(hp);

  // Union bound over the number of halvings needed to reach the noise floor.
  const double ratio = hp.R0 * std::sqrt(hp.L) / (hp.sigma * std::sqrt(hp.eps));
  double halvings = 1.0;
  if (std::isfinite(ratio) && ratio > 1.0) halvings = std::ceil(std::log2(ratio));
  if (!std::isfinite(ratio)) halvings = 64.0;
  HyperParams inner = hp;
  inner.gamma = gamma;
  inner.delta = hp.delta / std::max(1.0, halvings);

  EstimateReport rep;
  rep.diagnostics["gamma"] = gamma;
  rep.diagnostics["delta_prime"] = inner.delta;
  rep.diagnostics["outside_guarantee_regime"] = hp.outside_guarantee_regime() ? 1.0 : 0.0;
  if (hp.outside_guarantee_regime()) {
    rep.notes.emplace_back("(L^2/lambda^2) sqrt(eps) exceeds 1/9648; recovery guarantee not claimed");
  }

  Vec w = Vec::Zero(model.param_dim());
  double R = hp.R0;
  rep.radius_trace.emplace_back(1, R);
  int learner_flags = 0;

  for (int t = 1;; ++t) {
    RandomSource stage_rng = rng.split(static_cast<std::uint64_t>(t));
    SeverResult res = amplified_gmm_sever(model, inner, w, R, stage_rng);
    learner_flags += res.learner_flags;
    for (FilterEvent ev : res.events) {
      ev.stage = t;
      rep.filter_events.push_back(ev);
    }
    const double next = next_radius(hp, R, gamma);
    rep.radius_trace.emplace_back(t + 1, next);
    if (next > R / 2.0 || t >= 10000) {
      if (t == 1) {
        rep.notes.emplace_back("schedule degenerate: eps too large for (L, lambda)");
        rep.diagnostics["schedule_degenerate"] = 1.0;
      } else {
        rep.diagnostics["schedule_degenerate"] = 0.0;
      }
      rep.w_hat = res.w;
      rep.final_set = std::move(res.S);
      rep.diagnostics["stages"] = t;
      rep.diagnostics["learner_flags"] = learner_flags;
      rep.diagnostics["final_set_size"] = static_cast<double>(rep.final_set.size());
      if (learner_flags > 0) rep.notes.emplace_back("learner tolerance not met in some rounds");
      return rep;
    }
    w = res.w;
    R = next;
  }
}

}  // namespace rgmm
