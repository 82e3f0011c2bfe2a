#pragma once

#include "rgmm/core.hpp"
#include "rgmm/random.hpp"

#include <functional>
#include <optional>

namespace rgmm {

struct MeanCov {
  Vec mean;
  /// Population-style covariance, normalized by 1/|S|.
  Mat cov;
};

/// Mean and covariance of the rows of `rows`. Throws on an empty input.
MeanCov sample_mean_cov(const Mat& rows);

struct Eigenpair {
  Vec vector;
  double value = 0.0;
};

/// Largest eigenpair of a symmetric PSD matrix by power iteration.
///
/// The input is symmetrized first. The iteration runs on A^(2^s) (a few
/// repeated squarings) so that slow spectral gaps still reach a tight
/// residual within the 1000-iteration budget; the returned value is the
/// Rayleigh quotient of the original matrix. A zero matrix yields (e_1, 0).
Eigenpair top_eigenvector(const Mat& A, RandomSource& rng);

using GradientFn = std::function<Vec(const Vec&)>;
using ObjectiveFn = std::function<double(const Vec&)>;

/// Minimize-to-criticality problem over the closed ball B_R(center).
struct CriticalPointProblem {
  ObjectiveFn objective;
  GradientFn gradient;
  Vec center;
  double radius = 0.0;
  double gamma = 1e-8;
  /// 0 selects 10 d ceil(log(1/gamma)) clamped to [100, 100000].
  int max_iters = 0;
  /// Starting point (projected onto the ball); defaults to the center.
  std::optional<Vec> start;
};

struct LearnerResult {
  Vec x;
  bool tolerance_met = false;
  int iterations = 0;
  /// Criticality measure at x (see criticality_measure).
  double criticality = 0.0;
};

/// Euclidean projection onto B_R(center) by radial rescaling.
Vec project_to_ball(const Vec& x, const Vec& center, double radius);

/// Largest violation of the directional criticality condition at x:
/// max over feasible unit directions v of -(v . grad). In the interior this
/// is |grad|; on the boundary an outward-pointing radial part of -grad is
/// discarded before taking the norm.
double criticality_measure(const Vec& x, const Vec& grad, const Vec& center, double radius);

/// Projected gradient descent with Armijo backtracking. Returns a
/// gamma-approximate critical point, or the last iterate flagged with
/// tolerance_met = false when the iteration budget runs out.
LearnerResult projected_gradient_critical_point(const CriticalPointProblem& prob);

/// Central-difference Jacobian (g(w + h e_j) - g(w - h e_j)) / (2h), column by column.
Mat finite_diff_jacobian(const std::function<Vec(const Vec&)>& g, const Vec& w, double h);

/// Smallest singular value of a (possibly rectangular) matrix.
double smallest_singular_value(const Mat& A);

}  // namespace rgmm
