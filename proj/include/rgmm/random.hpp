#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace rgmm {

/// Seeded stream of uniform and normal variates.
///
/// Identical seeds give identical streams. Children derived with split()
/// depend only on the parent's seed and the label, never on how much of the
/// parent stream has been consumed, so parallel work can be seeded up front.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  bool bernoulli(double prob) { return uniform() < prob; }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  std::uint64_t next_u64() { return engine_(); }

  RandomSource split(std::string_view label) const;
  RandomSource split(std::uint64_t k) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// SplitMix64 finalizer; used to derive child seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace rgmm
