#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace transvis {

/// Seeded generator with distribution code written out by hand, so a given
/// seed yields the same stream on every standard library.
/// std::mt19937_64 output is fixed by the standard; the std distributions
/// are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n) {
    // Rejection on the top of the range keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller (one value per call).
  double normal() {
    double u1;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  bool coin() { return (engine_() >> 63) != 0; }

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      using std::swap;
      swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Fixed per-stage offsets from the master seed.
namespace seed_offset {
inline constexpr std::uint64_t kSynth = 101;
inline constexpr std::uint64_t kKMeans = 202;
inline constexpr std::uint64_t kPairs = 303;
inline constexpr std::uint64_t kTriplets = 404;
inline constexpr std::uint64_t kModelInit = 505;
inline constexpr std::uint64_t kEval = 606;
}  // namespace seed_offset

constexpr std::uint64_t stage_seed(std::uint64_t master, std::uint64_t offset) {
  return master + offset;
}

}  // namespace transvis
