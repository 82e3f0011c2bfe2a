#include "rgmm/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rgmm {

namespace {

void require_finite(const Eigen::Ref<const Mat>& m, const char* what) {
  if (!m.allFinite()) {
    throw Error(std::string("non-finite entry in ") + what);
  }
}

}  // namespace

Dataset::Dataset(Mat x, Vec y, Mat z, std::optional<Vec> t)
    : x_(std::move(x)), y_(std::move(y)), z_(std::move(z)), t_(std::move(t)) {
  if (y_.size() == 0) {
    throw Error("dataset must contain at least one sample");
  }
  if (x_.rows() != y_.size() || z_.rows() != y_.size() || (t_ && t_->size() != y_.size())) {
    throw Error("dataset row counts disagree");
  }
  if (x_.cols() == 0 || z_.cols() == 0) {
    throw Error("dataset needs at least one covariate and one instrument");
  }
  require_finite(x_, "X");
  require_finite(y_, "Y");
  require_finite(z_, "Z");
  if (t_) require_finite(*t_, "T");
}

const Vec& Dataset::t() const {
  if (!t_) throw Error("dataset has no treatment column");
  return *t_;
}

Dataset Dataset::with_x(Mat x) const { return Dataset(std::move(x), y_, z_, t_); }
Dataset Dataset::with_y(Vec y) const { return Dataset(x_, std::move(y), z_, t_); }
Dataset Dataset::with_z(Mat z) const { return Dataset(x_, y_, std::move(z), t_); }
Dataset Dataset::with_t(std::optional<Vec> t) const { return Dataset(x_, y_, z_, std::move(t)); }

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  const auto m = static_cast<Eigen::Index>(rows.size());
  Mat x(m, d());
  Vec y(m);
  Mat z(m, p());
  std::optional<Vec> t;
  if (t_) t = Vec(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)]);
    if (i < 0 || i >= y_.size()) throw Error("subset row out of range");
    x.row(r) = x_.row(i);
    y(r) = y_(i);
    z.row(r) = z_.row(i);
    if (t) (*t)(r) = (*t_)(i);
  }
  return Dataset(std::move(x), std::move(y), std::move(z), std::move(t));
}

ActiveSet::ActiveSet(std::vector<std::size_t> indices) : idx_(std::move(indices)) {
  std::sort(idx_.begin(), idx_.end());
  idx_.erase(std::unique(idx_.begin(), idx_.end()), idx_.end());
}

ActiveSet ActiveSet::full(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  ActiveSet s;
  s.idx_ = std::move(idx);
  return s;
}

bool ActiveSet::contains(std::size_t i) const {
  return std::binary_search(idx_.begin(), idx_.end(), i);
}

Vec mean_moment(const MomentModel& model, const ActiveSet& S, const Vec& w) {
  if (S.empty()) throw Error("empty active set");
  Vec acc = Vec::Zero(model.moment_dim());
  for (std::size_t i : S) acc += model.moment(i, w);
  return acc / static_cast<double>(S.size());
}

Mat mean_jacobian(const MomentModel& model, const ActiveSet& S, const Vec& w) {
  if (S.empty()) throw Error("empty active set");
  Mat acc = Mat::Zero(model.moment_dim(), model.param_dim());
  for (std::size_t i : S) acc += model.jacobian(i, w);
  return acc / static_cast<double>(S.size());
}

void HyperParams::validate() const {
  if (!(eps >= 0.0 && eps < 0.5)) throw Error("eps must be < 0.5");
  if (!(lambda > 0.0)) throw Error("lambda must be positive");
  if (!(L >= lambda)) throw Error("L must be at least lambda");
  if (!(sigma >= 0.0)) throw Error("sigma must be non-negative");
  if (gamma && !(*gamma > 0.0)) throw Error("gamma must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw Error("delta must lie in (0, 1)");
  if (!(R0 >= 0.0) || !std::isfinite(R0)) throw Error("R0 must be finite and non-negative");
  if (!(sched.c1 > 0.0 && sched.c2 > 0.0)) throw Error("schedule constants must be positive");
  if (!(filter_slack > 0.0)) throw Error("filter_slack must be positive");
  if (!(accept_factor > 0.0)) throw Error("accept_factor must be positive");
  if (learner_max_iters < 0) throw Error("learner_max_iters must be non-negative");
}

bool HyperParams::outside_guarantee_regime() const {
  return (L * L) / (lambda * lambda) * std::sqrt(eps) > 1.0 / 9648.0;
}

double resolved_gamma(const HyperParams& hp) {
  const double floor = 1e-10 * std::max(1.0, hp.lambda * hp.lambda * hp.R0);
  const double g = hp.gamma ? *hp.gamma : hp.sigma * std::pow(hp.L, 1.5) * std::sqrt(hp.eps);
  return std::max(g, floor);
}

const char* to_string(ScheduleKind kind) {
  return kind == ScheduleKind::affine ? "affine" : "halving";
}

ScheduleKind schedule_kind_from_string(const std::string& name) {
  if (name == "affine") return ScheduleKind::affine;
  if (name == "halving") return ScheduleKind::halving;
  throw Error("unknown schedule kind '" + name + "'");
}

const char* to_string(FilterKind kind) {
  return kind == FilterKind::jacobian ? "jacobian" : "moment";
}

}  // namespace rgmm
