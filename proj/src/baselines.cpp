#include "rgmm/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace rgmm {

namespace {

void check_instrument_strength(const Mat& zx) {
  Eigen::JacobiSVD<Mat> svd(zx);
  const Vec& s = svd.singularValues();
  if (s.size() == 0 || !(s.minCoeff() >= 1e-10 * s.maxCoeff()) || s.maxCoeff() == 0.0) {
    throw Error("weak/collinear instruments");
  }
}

double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

double mad_scale(const Vec& r) {
  std::vector<double> v(r.data(), r.data() + r.size());
  const double med = median(v);
  for (double& x : v) x = std::abs(x - med);
  return 1.4826 * median(std::move(v));
}

Vec least_squares(const Mat& A, const Vec& y) {
  return A.colPivHouseholderQr().solve(y);
}

}  // namespace

Vec two_stage_least_squares(const Dataset& data) {
  const Mat& X = data.x();
  const Mat& Z = data.z();
  if (data.p() < data.d()) throw Error("two-stage least squares needs p >= d");
  const Mat zx = Z.transpose() * X;
  check_instrument_strength(zx);
  if (data.p() == data.d()) {
    return zx.fullPivLu().solve(Z.transpose() * data.y());
  }
  const Mat xhat = Z * Z.colPivHouseholderQr().solve(X);
  return least_squares(xhat, data.y());
}

double huber_loss(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

namespace {

HuberFit irls(const Mat& A, const Vec& y, double delta, Vec start) {
  constexpr int kMaxIters = 500;
  const double n = static_cast<double>(A.rows());
  HuberFit fit;
  fit.delta = delta;
  fit.w = std::move(start);
  Vec r = y - A * fit.w;
  const double row_scale = std::sqrt(A.squaredNorm() / n);
  const double tol = 1e-8 * std::max(1.0, fit.delta * row_scale);

  for (int it = 0; it <= kMaxIters; ++it) {
    const Vec psi = r.unaryExpr([&](double v) { return std::clamp(v, -fit.delta, fit.delta); });
    const double grad = (A.transpose() * psi).norm() / n;
    fit.iterations = it;
    if (grad <= tol) {
      fit.converged = true;
      return fit;
    }
    if (it == kMaxIters) break;
    const Vec wts = r.unaryExpr([&](double v) {
      const double a = std::abs(v);
      return a <= fit.delta ? 1.0 : fit.delta / a;
    });
    const Mat Aw = A.array().colwise() * wts.array();
    const Mat normal = A.transpose() * Aw;
    const Vec next = normal.ldlt().solve(Aw.transpose() * y);
    if (!next.allFinite()) break;
    if ((next - fit.w).norm() <= 1e-15 * std::max(1.0, fit.w.norm())) {
      fit.w = next;
      fit.converged = true;
      return fit;
    }
    fit.w = next;
    r = y - A * fit.w;
  }
  return fit;
}

double default_delta(const Vec& r) {
  double scale = mad_scale(r);
  if (!(scale > 0.0)) scale = r.cwiseAbs().mean();
  if (!(scale > 0.0)) scale = 1.0;
  return 1.345 * scale;
}

}  // namespace

HuberFit huber_regression(const Mat& A, const Vec& y, std::optional<double> delta) {
  if (A.rows() != y.size() || A.rows() == 0) throw Error("huber_regression: shape mismatch");
  if (delta && !(*delta > 0.0)) throw Error("huber delta must be positive");
  const Vec start = least_squares(A, y);
  if (delta) return irls(A, y, *delta, start);

  // The scale is re-estimated from the current fit's residuals so that a few
  // gross outliers in the least-squares start do not inflate delta.
  constexpr int kMaxScalePasses = 50;
  HuberFit fit = irls(A, y, default_delta(y - A * start), start);
  for (int pass = 1; pass < kMaxScalePasses; ++pass) {
    const double next = default_delta(y - A * fit.w);
    if (std::abs(next - fit.delta) <= 1e-6 * fit.delta) break;
    fit = irls(A, y, next, fit.w);
  }
  return fit;
}

TwoStageHuberFit two_stage_huber(const Dataset& data, std::optional<double> huber_delta) {
  if (data.p() < data.d()) throw Error("two-stage Huber needs p >= d");
  check_instrument_strength(data.z().transpose() * data.x());
  const Mat& Z = data.z();
  const Mat& X = data.x();
  TwoStageHuberFit out;
  Mat xhat(X.rows(), X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const HuberFit first = huber_regression(Z, X.col(j), huber_delta);
    out.converged = out.converged && first.converged;
    xhat.col(j) = Z * first.w;
  }
  const HuberFit second = huber_regression(xhat, data.y(), huber_delta);
  out.converged = out.converged && second.converged;
  out.w = second.w;
  return out;
}

double ate_from_params(const Vec& w, const Dataset& data, AteMode mode) {
  if (mode == AteMode::hte_treatment_only) {
    if (w.size() != data.d()) throw Error("ATE mode mismatch: expected d parameters");
    return (data.x() * w).mean();
  }
  if (!data.has_treatment()) throw Error("ATE mode mismatch: dataset has no treatment");
  if (w.size() != data.d() + 1 && w.size() != data.d() + 2) {
    throw Error("ATE mode mismatch: expected treatment-design parameters");
  }
  return w(0);
}

}  // namespace rgmm
