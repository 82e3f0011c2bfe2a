#include "rgmm/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace rgmm {

MeanCov sample_mean_cov(const Mat& rows) {
  if (rows.rows() == 0) throw Error("empty vector collection");
  const double m = static_cast<double>(rows.rows());
  MeanCov out;
  out.mean = rows.colwise().sum().transpose() / m;
  const Mat centered = rows.rowwise() - out.mean.transpose();
  out.cov = (centered.transpose() * centered) / m;
  return out;
}

namespace {

constexpr int kPowerIters = 1000;
constexpr int kSquarings = 6;

Vec random_unit(Eigen::Index k, RandomSource& rng) {
  Vec v(k);
  for (Eigen::Index j = 0; j < k; ++j) v(j) = rng.normal();
  const double nv = v.norm();
  if (nv == 0.0) {
    v.setZero();
    v(0) = 1.0;
    return v;
  }
  return v / nv;
}

}  // namespace

Eigenpair top_eigenvector(const Mat& A, RandomSource& rng) {
  if (A.rows() != A.cols() || A.rows() == 0) throw Error("top_eigenvector needs a square matrix");
  const Eigen::Index k = A.rows();
  const Mat sym = 0.5 * (A + A.transpose());
  const double trace = sym.trace();

  Eigenpair out;
  out.vector = Vec::Unit(k, 0);
  if (sym.cwiseAbs().maxCoeff() == 0.0 || !(trace > 0.0)) return out;

  // Powers of the normalized matrix share eigenvectors with A and widen the
  // relative gap between the top eigenvalue and the rest.
  Mat power = sym / trace;
  for (int s = 0; s < kSquarings; ++s) {
    Mat next = power * power;
    const double tr = next.trace();
    if (!(tr > 0.0) || !std::isfinite(tr)) break;
    power = 0.5 * (next + next.transpose()) / tr;
  }

  Vec v = random_unit(k, rng);
  double mu = v.dot(sym * v);
  for (int it = 0; it < kPowerIters; ++it) {
    Vec next = power * v;
    double nv = next.norm();
    if (nv == 0.0 || !std::isfinite(nv)) {
      // Start landed in the null space of the power matrix; iterate on A itself.
      next = sym * v;
      nv = next.norm();
      if (nv == 0.0) {
        next = random_unit(k, rng);
        nv = 1.0;
      }
    }
    v = next / nv;
    const double mu_next = v.dot(sym * v);
    const bool converged = std::abs(mu_next - mu) < 1e-12 * trace;
    mu = mu_next;
    if (converged && it > 0) break;
  }
  out.vector = v / v.norm();
  out.value = out.vector.dot(sym * out.vector);
  return out;
}

Vec project_to_ball(const Vec& x, const Vec& center, double radius) {
  const Vec diff = x - center;
  const double nd = diff.norm();
  if (nd <= radius) return x;
  if (radius <= 0.0) return center;
  Vec out = center + diff * (radius / nd);
  // Rounding can leave the rescaled point a hair outside; pull it in.
  const double after = (out - center).norm();
  if (after > radius) out = center + (out - center) * (radius / after);
  return out;
}

double criticality_measure(const Vec& x, const Vec& grad, const Vec& center, double radius) {
  const Vec diff = x - center;
  const double nd = diff.norm();
  if (radius <= 0.0) return 0.0;
  if (nd < radius * (1.0 - 1e-9)) return grad.norm();
  const Vec normal = diff / nd;
  const double outward = -grad.dot(normal);
  if (outward <= 0.0) return grad.norm();
  return (-grad - outward * normal).norm();
}

LearnerResult projected_gradient_critical_point(const CriticalPointProblem& prob) {
  if (!prob.objective || !prob.gradient) throw Error("learner needs objective and gradient oracles");
  if (!(prob.radius >= 0.0)) throw Error("learner radius must be non-negative");
  if (!(prob.gamma > 0.0)) throw Error("learner tolerance must be positive");

  LearnerResult res;
  if (prob.radius == 0.0) {
    res.x = prob.center;
    res.tolerance_met = true;
    return res;
  }

  int max_iters = prob.max_iters;
  if (max_iters <= 0) {
    const double logs = std::max(1.0, std::ceil(std::log(1.0 / prob.gamma)));
    const double rule = 10.0 * static_cast<double>(prob.center.size()) * logs;
    max_iters = static_cast<int>(std::clamp(rule, 100.0, 100000.0));
  }

  Vec x = project_to_ball(prob.start ? *prob.start : prob.center, prob.center, prob.radius);
  double f = prob.objective(x);
  Vec g = prob.gradient(x);
  double step = 1.0;

  for (int it = 0; it < max_iters; ++it) {
    res.criticality = criticality_measure(x, g, prob.center, prob.radius);
    res.iterations = it;
    if (res.criticality <= prob.gamma) {
      res.x = x;
      res.tolerance_met = true;
      return res;
    }
    double t = step;
    bool accepted = false;
    Vec xn;
    double fn = f;
    while (t > 1e-30) {
      xn = project_to_ball(x - t * g, prob.center, prob.radius);
      const Vec dx = xn - x;
      if (dx.squaredNorm() == 0.0) break;
      fn = prob.objective(xn);
      if (fn <= f + 1e-4 * g.dot(dx)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    // Barzilai-Borwein step for the next trial, falling back to doubling.
    const Vec s = xn - x;
    Vec gn = prob.gradient(xn);
    const double sy = s.dot(gn - g);
    step = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-12, 1e12) : std::min(2.0 * t, 1e12);
    x = std::move(xn);
    f = fn;
    g = std::move(gn);
  }

  res.x = x;
  res.criticality = criticality_measure(x, g, prob.center, prob.radius);
  res.tolerance_met = res.criticality <= prob.gamma;
  return res;
}

Mat finite_diff_jacobian(const std::function<Vec(const Vec&)>& g, const Vec& w, double h) {
  if (!(h > 0.0)) throw Error("finite-difference step must be positive");
  const Vec g0 = g(w);
  Mat J(g0.size(), w.size());
  Vec wp = w;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    const double orig = wp(j);
    wp(j) = orig + h;
    const Vec gp = g(wp);
    wp(j) = orig - h;
    const Vec gm = g(wp);
    wp(j) = orig;
    J.col(j) = (gp - gm) / (2.0 * h);
  }
  return J;
}

double smallest_singular_value(const Mat& A) {
  if (A.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(A);
  return svd.singularValues().minCoeff();
}

}  // namespace rgmm
