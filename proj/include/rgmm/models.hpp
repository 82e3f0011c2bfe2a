#pragma once

#include "rgmm/core.hpp"

#include <memory>

namespace rgmm {

/// Logistic function 1 / (1 + e^{-x}), evaluated without overflow.
double logistic(double x);
/// Derivative G(x) (1 - G(x)).
double logistic_deriv(double x);

/// g_i(w) = Z_i (Y_i - X_i^T w), Jacobian -Z_i X_i^T (constant in w).
class LinearIVModel final : public MomentModel {
 public:
  explicit LinearIVModel(std::shared_ptr<const Dataset> data);

  std::size_t num_samples() const override { return data_->n(); }
  Eigen::Index param_dim() const override { return data_->d(); }
  Eigen::Index moment_dim() const override { return data_->p(); }
  Vec moment(std::size_t i, const Vec& w) const override;
  Mat jacobian(std::size_t i, const Vec& w) const override;
  bool jacobian_is_constant() const override { return true; }
  Vec jacobian_transpose_times(std::size_t i, const Vec& w, const Vec& u) const override;

  const Dataset& data() const { return *data_; }

 private:
  std::shared_ptr<const Dataset> data_;
};

/// g_i(w) = Z_i (Y_i - G(X_i^T w)), Jacobian -G'(X_i^T w) Z_i X_i^T.
class LogisticIVModel final : public MomentModel {
 public:
  explicit LogisticIVModel(std::shared_ptr<const Dataset> data);

  std::size_t num_samples() const override { return data_->n(); }
  Eigen::Index param_dim() const override { return data_->d(); }
  Eigen::Index moment_dim() const override { return data_->p(); }
  Vec moment(std::size_t i, const Vec& w) const override;
  Mat jacobian(std::size_t i, const Vec& w) const override;
  Vec jacobian_transpose_times(std::size_t i, const Vec& w, const Vec& u) const override;

 private:
  std::shared_ptr<const Dataset> data_;
};

enum class HteMode {
  /// Instruments X Z, regressors T X, parameters w in R^d.
  treatment_only,
  /// Instruments [X Z; X], regressors [T X; X], parameters [w; beta] in R^{2d}.
  full,
};

/// Linear IV design of the heterogeneous-treatment-effect moment
/// E[X Z (Y - T <X, w> - <X, beta>)] = 0. Requires a treatment column and a
/// single scalar instrument. The result is a Dataset whose X holds the
/// regressors and Z the instruments, so any linear-IV routine applies.
Dataset hte_design(const Dataset& data, HteMode mode);

/// Linear IV design for a scalar treatment with exogenous covariates:
/// regressors [T, X, 1], instruments [Z, X, 1] (intercept optional).
/// The treatment coefficient is parameter 0.
Dataset scalar_treatment_design(const Dataset& data, bool intercept = true);

/// Heterogeneous-treatment-effect moment model.
class HTEModel final : public MomentModel {
 public:
  HTEModel(const Dataset& data, HteMode mode);

  std::size_t num_samples() const override { return inner_.num_samples(); }
  Eigen::Index param_dim() const override { return inner_.param_dim(); }
  Eigen::Index moment_dim() const override { return inner_.moment_dim(); }
  Vec moment(std::size_t i, const Vec& w) const override { return inner_.moment(i, w); }
  Mat jacobian(std::size_t i, const Vec& w) const override { return inner_.jacobian(i, w); }
  bool jacobian_is_constant() const override { return true; }
  Vec jacobian_transpose_times(std::size_t i, const Vec& w, const Vec& u) const override {
    return inner_.jacobian_transpose_times(i, w, u);
  }

  HteMode mode() const { return mode_; }
  const Dataset& design() const { return inner_.data(); }

 private:
  HteMode mode_;
  LinearIVModel inner_;
};

}  // namespace rgmm
