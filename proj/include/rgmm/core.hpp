#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rgmm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Immutable column store of covariates X (n x d), responses Y (n),
/// instruments Z (n x p) and an optional scalar treatment T (n).
///
/// Construction rejects mismatched row counts, n == 0 and non-finite entries.
/// Corruption and preprocessing produce new datasets through the `with_*`
/// helpers; a Dataset is never modified after construction.
class Dataset {
 public:
  Dataset(Mat x, Vec y, Mat z, std::optional<Vec> t = std::nullopt);

  const Mat& x() const { return x_; }
  const Vec& y() const { return y_; }
  const Mat& z() const { return z_; }
  bool has_treatment() const { return t_.has_value(); }
  const Vec& t() const;

  std::size_t n() const { return static_cast<std::size_t>(y_.size()); }
  Eigen::Index d() const { return x_.cols(); }
  Eigen::Index p() const { return z_.cols(); }

  Dataset with_x(Mat x) const;
  Dataset with_y(Vec y) const;
  Dataset with_z(Mat z) const;
  Dataset with_t(std::optional<Vec> t) const;

  /// Rows selected by `rows` in the given order (duplicates allowed).
  Dataset subset(const std::vector<std::size_t>& rows) const;

 private:
  Mat x_;
  Vec y_;
  Mat z_;
  std::optional<Vec> t_;
};

/// Sorted, duplicate-free subset of {0, ..., n-1}.
class ActiveSet {
 public:
  ActiveSet() = default;
  /// Sorts and deduplicates.
  explicit ActiveSet(std::vector<std::size_t> indices);

  static ActiveSet full(std::size_t n);

  std::size_t size() const { return idx_.size(); }
  bool empty() const { return idx_.empty(); }
  std::size_t operator[](std::size_t k) const { return idx_[k]; }
  auto begin() const { return idx_.begin(); }
  auto end() const { return idx_.end(); }
  const std::vector<std::size_t>& indices() const { return idx_; }
  bool contains(std::size_t i) const;

  bool operator==(const ActiveSet&) const = default;

 private:
  std::vector<std::size_t> idx_;
};

/// Per-sample moment map g_i : R^d -> R^p with its Jacobian.
class MomentModel {
 public:
  virtual ~MomentModel() = default;

  virtual std::size_t num_samples() const = 0;
  virtual Eigen::Index param_dim() const = 0;
  virtual Eigen::Index moment_dim() const = 0;

  virtual Vec moment(std::size_t i, const Vec& w) const = 0;
  /// p x d matrix of partial derivatives of moment(i, .) at w.
  virtual Mat jacobian(std::size_t i, const Vec& w) const = 0;

  /// True when the Jacobian does not depend on w (affine moments).
  virtual bool jacobian_is_constant() const { return false; }

  /// jacobian(i, w)^T u. Models override this when a cheaper form exists.
  virtual Vec jacobian_transpose_times(std::size_t i, const Vec& w, const Vec& u) const {
    return jacobian(i, w).transpose() * u;
  }
};

/// (1/|S|) sum_{i in S} g_i(w). Throws Error("empty active set") on empty S.
Vec mean_moment(const MomentModel& model, const ActiveSet& S, const Vec& w);

/// (1/|S|) sum_{i in S} jacobian_i(w).
Mat mean_jacobian(const MomentModel& model, const ActiveSet& S, const Vec& w);

/// Shape of the radius schedule between stages.
enum class ScheduleKind {
  /// R' = c1 gamma / lambda^2 + c2 ((L^2 / lambda^2) R sqrt(eps) + sigma L^1.5 / lambda^2 sqrt(eps)).
  affine,
  /// R' = max(R / 2, c1 gamma / lambda^2 + c2 sigma L^1.5 / lambda^2 sqrt(eps)).
  halving,
};

const char* to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& name);

/// Multipliers of the radius schedule.
struct RadiusSchedule {
  double c1 = 4.0;
  double c2 = 2.0;
  ScheduleKind kind = ScheduleKind::affine;

  static RadiusSchedule theory() { return {4.0, 2412.0, ScheduleKind::affine}; }
  static RadiusSchedule practice() { return {4.0, 2.0, ScheduleKind::affine}; }
};

/// Default slack factor on the filter's variance test.
inline constexpr double kFilterSlack = 24.0;

struct HyperParams {
  double eps = 0.1;
  double lambda = 1.0;
  double L = 1.0;
  double sigma = 1.0;
  /// Learner tolerance; when empty the iterated estimator uses sigma L^1.5 sqrt(eps).
  std::optional<double> gamma;
  double delta = 0.1;
  double R0 = 1.0;
  RadiusSchedule sched;

  /// Slack on the filter variance test (mean tau <= slack * M keeps S).
  double filter_slack = kFilterSlack;
  /// A repetition of the amplified estimator is accepted once |S| >= (1 - accept_factor eps) n.
  double accept_factor = 10.0;
  /// Restart the learner from the previous iterate after a filter removal.
  bool warm_start = true;
  /// Cap on learner iterations; 0 selects the default rule.
  int learner_max_iters = 0;

  /// Throws Error on an invalid combination.
  void validate() const;

  /// (L^2/lambda^2) sqrt(eps) > 1/9648, the regime in which the recovery
  /// guarantee is not claimed. The algorithms still run.
  bool outside_guarantee_regime() const;
};

/// Learner tolerance actually used: the override, or sigma L^1.5 sqrt(eps),
/// floored at 1e-10 * max(1, lambda^2 R0).
double resolved_gamma(const HyperParams& hp);

enum class FilterKind { jacobian, moment };

const char* to_string(FilterKind kind);

struct FilterEvent {
  /// Outer (radius) stage; 1 for a standalone GMM-Sever run.
  int stage = 1;
  /// Learner round within the stage at which the filter fired.
  int iteration = 0;
  FilterKind kind = FilterKind::jacobian;
  std::size_t removed = 0;
};

struct EstimateReport {
  Vec w_hat;
  ActiveSet final_set;
  /// (t, R_t) pairs; strictly decreasing except for the final entry.
  std::vector<std::pair<int, double>> radius_trace;
  std::vector<FilterEvent> filter_events;
  std::map<std::string, double> diagnostics;
  std::vector<std::string> notes;
};

}  // namespace rgmm
