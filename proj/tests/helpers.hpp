#pragma once

#include "rgmm/core.hpp"
#include "rgmm/random.hpp"

#include <cmath>
#include <memory>

namespace testing {

inline rgmm::Vec random_vec(Eigen::Index k, rgmm::RandomSource& rng, double scale = 1.0) {
  rgmm::Vec v(k);
  for (Eigen::Index j = 0; j < k; ++j) v(j) = scale * rng.normal();
  return v;
}

inline rgmm::Mat random_mat(Eigen::Index r, Eigen::Index c, rgmm::RandomSource& rng) {
  rgmm::Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  }
  return m;
}

// Linear IV data with Z = X and Y = X w + noise.
inline rgmm::Dataset regression_data(Eigen::Index n, const rgmm::Vec& w, double noise,
                                     rgmm::RandomSource& rng) {
  rgmm::Mat x = random_mat(n, w.size(), rng);
  rgmm::Vec y = x * w + random_vec(n, rng, noise);
  return rgmm::Dataset(x, y, x);
}

inline double rel_err(const rgmm::Mat& a, const rgmm::Mat& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

}  // namespace testing
