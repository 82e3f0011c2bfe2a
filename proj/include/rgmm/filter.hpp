#pragma once

#include "rgmm/core.hpp"
#include "rgmm/random.hpp"

#include <functional>
#include <optional>

namespace rgmm {

/// Spectral outlier scores of a vector collection: tau_i is the squared
/// deviation of xi_i from the mean along the top covariance direction.
struct SpectralScores {
  Vec tau;
  double mean_tau = 0.0;
  double max_tau = 0.0;
  Vec direction;
};

/// Rows of `xi` are the vectors; tau is indexed by row.
SpectralScores spectral_scores(const Mat& xi, RandomSource& rng);

struct FilterOutcome {
  ActiveSet kept;
  ActiveSet removed;
  double mean_tau = 0.0;
  /// Present iff the variance test failed and a threshold was drawn.
  std::optional<double> threshold_used;
  Vec direction;
};

/// Draws the removal threshold given max tau. The default draws Unif[0, max tau).
using ThresholdDraw = std::function<double(double max_tau)>;

/// Randomized spectral filter.
///
/// Row r of `xi` belongs to sample S[r]. If mean tau <= slack * M the set is
/// returned unchanged. Otherwise a threshold T is drawn and exactly the
/// samples with tau > T are removed; ties at T are kept.
FilterOutcome filter(const Mat& xi, const ActiveSet& S, double M, RandomSource& rng,
                     double slack = kFilterSlack);

/// Same as above with an explicit threshold draw (the eigenvector start still uses rng).
FilterOutcome filter(const Mat& xi, const ActiveSet& S, double M, RandomSource& rng,
                     const ThresholdDraw& draw, double slack = kFilterSlack);

}  // namespace rgmm
