#include "rgmm/filter.hpp"

#include "rgmm/numerics.hpp"

#include <cassert>
#include <vector>

namespace rgmm {

SpectralScores spectral_scores(const Mat& xi, RandomSource& rng) {
  const MeanCov mc = sample_mean_cov(xi);
  const Eigenpair top = top_eigenvector(mc.cov, rng);
  SpectralScores s;
  s.direction = top.vector;
  s.tau = ((xi.rowwise() - mc.mean.transpose()) * top.vector).array().square().matrix();
  s.mean_tau = s.tau.mean();
  s.max_tau = s.tau.maxCoeff();
  return s;
}

FilterOutcome filter(const Mat& xi, const ActiveSet& S, double M, RandomSource& rng,
                     double slack) {
  return filter(xi, S, M, rng, [&rng](double max_tau) { return rng.uniform() * max_tau; }, slack);
}

FilterOutcome filter(const Mat& xi, const ActiveSet& S, double M, RandomSource& rng,
                     const ThresholdDraw& draw, double slack) {
  if (S.empty()) throw Error("empty active set");
  if (static_cast<std::size_t>(xi.rows()) != S.size()) {
    throw Error("filter input rows do not match the active set");
  }
  if (!(M >= 0.0)) throw Error("filter bound M must be non-negative");
  if (!xi.allFinite()) throw Error("non-finite filter input");

  const SpectralScores sc = spectral_scores(xi, rng);
  FilterOutcome out;
  out.mean_tau = sc.mean_tau;
  out.direction = sc.direction;
  if (sc.mean_tau <= slack * M) {
    out.kept = S;
    return out;
  }
  // mean tau <= max tau, so a failed variance test implies max tau > 0.
  assert(sc.max_tau > 0.0);

  const double T = draw(sc.max_tau);
  out.threshold_used = T;
  std::vector<std::size_t> kept;
  std::vector<std::size_t> removed;
  kept.reserve(S.size());
  for (std::size_t r = 0; r < S.size(); ++r) {
    (sc.tau(static_cast<Eigen::Index>(r)) > T ? removed : kept).push_back(S[r]);
  }
  out.kept = ActiveSet(std::move(kept));
  out.removed = ActiveSet(std::move(removed));
  return out;
}

}  // namespace rgmm
