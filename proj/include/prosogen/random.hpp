#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "prosogen/errors.hpp"

namespace prosogen {

namespace rng_detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

}  // namespace rng_detail

/// Deterministic random stream. All randomness in the library flows through
/// this class so that runs are bitwise reproducible across platforms; the
/// standard distributions are avoided on purpose (their algorithms are
/// implementation-defined).
///
/// fork() derives an independent substream from the parent's root seed and a
/// tag; it does not consume parent state, so the draw order of siblings is
/// irrelevant.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed)
      : root_(seed), gen_(rng_detail::splitmix64(seed)) {}

  RngStream fork(std::string_view tag) const {
    return RngStream(rng_detail::mix(root_, rng_detail::fnv1a(tag)));
  }

  RngStream fork(std::uint64_t key) const {
    return RngStream(rng_detail::mix(root_, key + 0x51ed2701ULL));
  }

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1), 53 mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (two uniforms per draw, no caching).
  double normal() {
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Uniform integer in [0, n), exact (rejection sampling).
  int uniform_int(int n) {
    if (n <= 0) throw ContractError("uniform_int requires n > 0");
    const auto un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<int>(x % un);
  }

  std::uint64_t root_seed() const { return root_; }

 private:
  std::uint64_t root_;
  std::mt19937_64 gen_;
};

}  // namespace prosogen
