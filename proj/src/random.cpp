#include "rgmm/random.hpp"

namespace rgmm {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RandomSource::RandomSource(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

double RandomSource::uniform() {
  // 53 random mantissa bits; exactly representable and strictly below 1.
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RandomSource::normal() { return normal_(engine_); }

std::size_t RandomSource::index(std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

RandomSource RandomSource::split(std::string_view label) const {
  // FNV-1a keeps labels stable across standard library implementations.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return RandomSource(mix64(seed_ ^ mix64(h)));
}

RandomSource RandomSource::split(std::uint64_t k) const {
  return RandomSource(mix64(seed_ + 0x632be59bd9b4e019ULL * (k + 1)));
}

}  // namespace rgmm
