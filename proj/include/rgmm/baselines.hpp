#pragma once

#include "rgmm/core.hpp"

#include <optional>

namespace rgmm {

/// Classical IV. With p == d solves (sum Z_i X_i^T) w = sum Z_i Y_i; with
/// p > d runs two-stage least squares (X on Z, then Y on fitted X).
///
/// Throws Error("weak/collinear instruments") when the smallest singular value
/// of Z^T X falls below 1e-10 times the largest, and on p < d.
Vec two_stage_least_squares(const Dataset& data);

/// Huber loss: quadratic within `delta` of zero, linear outside.
double huber_loss(double r, double delta);

struct HuberFit {
  Vec w;
  bool converged = false;
  int iterations = 0;
  double delta = 0.0;
};

/// Huber M-regression of y on the columns of A by iteratively reweighted
/// least squares, stopping once the mean Huber gradient has norm <= 1e-8 or
/// after 500 iterations. With no delta, uses 1.345 times the MAD scale of the
/// least-squares residuals.
HuberFit huber_regression(const Mat& A, const Vec& y, std::optional<double> delta = std::nullopt);

struct TwoStageHuberFit {
  Vec w;
  /// False if any stage-one or stage-two IRLS hit the iteration cap.
  bool converged = true;
};

/// Two-stage least squares with both stages replaced by Huber regression.
/// Each regression picks its own delta from its residual scale unless
/// `huber_delta` is given.
TwoStageHuberFit two_stage_huber(const Dataset& data,
                                 std::optional<double> huber_delta = std::nullopt);

enum class AteMode {
  /// Treatment effect <X_i, w>, averaged over samples.
  hte_treatment_only,
  /// Parameters from scalar_treatment_design: ATE is the treatment coefficient.
  scalar_treatment,
};

/// Average treatment effect implied by estimated parameters. `data` is the
/// raw dataset (characteristics in X).
double ate_from_params(const Vec& w, const Dataset& data, AteMode mode);

}  // namespace rgmm
