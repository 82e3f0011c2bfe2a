#include "rgmm/models.hpp"

#include <cmath>

namespace rgmm {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logistic_deriv(double x) {
  const double g = logistic(x);
  return g * (1.0 - g);
}

namespace {

std::shared_ptr<const Dataset> require(std::shared_ptr<const Dataset> data) {
  if (!data) throw Error("model needs a dataset");
  return data;
}

}  // namespace

LinearIVModel::LinearIVModel(std::shared_ptr<const Dataset> data) : data_(require(std::move(data))) {}

Vec LinearIVModel::moment(std::size_t i, const Vec& w) const {
  const auto r = static_cast<Eigen::Index>(i);
  const double resid = data_->y()(r) - data_->x().row(r).dot(w);
  return data_->z().row(r).transpose() * resid;
}

Mat LinearIVModel::jacobian(std::size_t i, const Vec&) const {
  const auto r = static_cast<Eigen::Index>(i);
  return -data_->z().row(r).transpose() * data_->x().row(r);
}

Vec LinearIVModel::jacobian_transpose_times(std::size_t i, const Vec&, const Vec& u) const {
  const auto r = static_cast<Eigen::Index>(i);
  return -data_->x().row(r).transpose() * data_->z().row(r).dot(u);
}

LogisticIVModel::LogisticIVModel(std::shared_ptr<const Dataset> data)
    : data_(require(std::move(data))) {}

Vec LogisticIVModel::moment(std::size_t i, const Vec& w) const {
  const auto r = static_cast<Eigen::Index>(i);
  const double resid = data_->y()(r) - logistic(data_->x().row(r).dot(w));
  return data_->z().row(r).transpose() * resid;
}

Mat LogisticIVModel::jacobian(std::size_t i, const Vec& w) const {
  const auto r = static_cast<Eigen::Index>(i);
  const double s = logistic_deriv(data_->x().row(r).dot(w));
  return -s * data_->z().row(r).transpose() * data_->x().row(r);
}

Vec LogisticIVModel::jacobian_transpose_times(std::size_t i, const Vec& w, const Vec& u) const {
  const auto r = static_cast<Eigen::Index>(i);
  const double s = logistic_deriv(data_->x().row(r).dot(w));
  return -s * data_->x().row(r).transpose() * data_->z().row(r).dot(u);
}

Dataset hte_design(const Dataset& data, HteMode mode) {
  if (!data.has_treatment()) throw Error("HTE design needs a treatment column");
  if (data.p() != 1) throw Error("HTE design needs a single scalar instrument");
  const Eigen::Index d = data.d();
  const auto n = static_cast<Eigen::Index>(data.n());
  const Vec& t = data.t();
  const auto zcol = data.z().col(0);

  const Mat xz = data.x().array().colwise() * zcol.array();
  const Mat tx = data.x().array().colwise() * t.array();
  if (mode == HteMode::treatment_only) {
    return Dataset(tx, data.y(), xz);
  }
  Mat inst(n, 2 * d);
  Mat reg(n, 2 * d);
  inst << xz, data.x();
  reg << tx, data.x();
  return Dataset(std::move(reg), data.y(), std::move(inst));
}

Dataset scalar_treatment_design(const Dataset& data, bool intercept) {
  if (!data.has_treatment()) throw Error("scalar-treatment design needs a treatment column");
  if (data.p() != 1) throw Error("scalar-treatment design needs a single instrument");
  const auto n = static_cast<Eigen::Index>(data.n());
  const Eigen::Index k = 1 + data.d() + (intercept ? 1 : 0);
  Mat reg(n, k);
  Mat inst(n, k);
  reg.col(0) = data.t();
  inst.col(0) = data.z().col(0);
  reg.middleCols(1, data.d()) = data.x();
  inst.middleCols(1, data.d()) = data.x();
  if (intercept) {
    reg.col(k - 1).setOnes();
    inst.col(k - 1).setOnes();
  }
  return Dataset(std::move(reg), data.y(), std::move(inst));
}

HTEModel::HTEModel(const Dataset& data, HteMode mode)
    : mode_(mode), inner_(std::make_shared<const Dataset>(hte_design(data, mode))) {}

}  // namespace rgmm
