#pragma once

#include "rgmm/core.hpp"
#include "rgmm/random.hpp"

#include <functional>
#include <vector>

namespace rgmm {

/// Raised when filtering shrinks the active set below ceil(2n/3).
class SeverAborted : public Error {
 public:
  SeverAborted() : Error("filter exhausted sample set") {}
};

struct SeverResult {
  Vec w;
  ActiveSet S;
  /// Number of learner calls (filter rounds + 1).
  int iterations = 0;
  std::vector<FilterEvent> events;
  /// Learner calls that stopped before reaching tolerance gamma.
  int learner_flags = 0;
};

/// One GMM-Sever run: alternate a gamma-critical point of |E_S g(w)|^2 over
/// B_R(w0) with a Jacobian-direction filter (bound L^2 |u|^2) and a moment
/// filter (bound sigma^2 L + 4 L^2 R^2) until neither removes a sample.
///
/// Throws SeverAborted if |S| drops below max(1, ceil(2n/3)).
SeverResult gmm_sever(const MomentModel& model, const HyperParams& hp, const Vec& w0, double R,
                      RandomSource& rng);

/// Number of repetitions allowed for failure probability delta: ceil(log10(1/delta)), at least 1.
int amplification_reps(double delta);

/// Runs `run(rep)` for rep = 0, 1, ... until a result keeps at least
/// `accept_size` samples or `max_reps` runs are done; then returns the first
/// accepted run or else the run with the largest final set. Aborted runs are
/// skipped; if all abort, the last SeverAborted is rethrown.
SeverResult amplify(const std::function<SeverResult(int)>& run, int max_reps,
                    std::size_t accept_size, int* reps_used = nullptr);

/// GMM-Sever repeated with child random sources until |S| >= (1 - accept_factor eps) n.
SeverResult amplified_gmm_sever(const MomentModel& model, const HyperParams& hp, const Vec& w0,
                                double R, RandomSource& rng);

/// One step of the radius schedule.
double next_radius(const HyperParams& hp, double R, double gamma);

/// Radii R_1 = R0, R_2, ... produced by the schedule up to and including the
/// first radius that exceeds half of its predecessor.
std::vector<double> radius_sequence(const HyperParams& hp, double gamma, int max_len = 10000);

/// Iterated GMM-Sever: shrink the ball around successive estimates while the
/// schedule halves the radius. Starts from w = 0 and R = R0.
EstimateReport iterated_gmm_sever(const MomentModel& model, const HyperParams& hp,
                                  RandomSource& rng);

}  // namespace rgmm
