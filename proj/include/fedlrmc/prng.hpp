#pragma once

#include <cmath>
#include <cstdint>

namespace fedlrmc {

/// Purpose-keyed random streams. Every generator is addressed by
/// (master seed, stream, salt), so modules draw independent sequences from a
/// single experiment seed and any draw can be replayed in isolation.
enum class RngStream : std::uint64_t {
  ground_truth = 1,
  mask = 2,
  split = 3,
  noise = 4,
  power_init = 5,
  trial = 6,
  generic = 7,
};

/// Counter-based 64-bit generator (splitmix64 over a keyed counter).
///
/// State advances by incrementing a counter; the output is a stateless hash of
/// (seed, stream, salt, counter). Identical keys give bit-identical sequences
/// on every run and platform.
class Prng {
 public:
  Prng(std::uint64_t seed, RngStream stream, std::uint64_t salt = 0)
      : key_(mix(mix(seed ^ 0x9e3779b97f4a7c15ull) ^ static_cast<std::uint64_t>(stream)) ^
             mix(salt ^ 0xbf58476d1ce4e5b9ull)) {}

  std::uint64_t next_u64() { return mix(key_ ^ counter_++); }

  /// Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [-1, 1].
  double next_signed_unit() { return 2.0 * next_double() - 1.0; }

  /// Standard normal via Box-Muller; consumes two uniforms per pair.
  double next_gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    cached_ = radius * std::sin(angle);
    has_cached_ = true;
    return radius * std::cos(angle);
  }

  /// Bernoulli(p) draw.
  bool next_bernoulli(double p) { return next_double() < p; }

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

/// Per-trial seed derivation: master seed xor a trial-index stream draw.
inline std::uint64_t trial_seed(std::uint64_t master_seed, std::uint64_t experiment_kind,
                                std::uint64_t trial_index) {
  Prng g(master_seed, RngStream::trial, (experiment_kind << 32) ^ trial_index);
  return master_seed ^ g.next_u64();
}

}  // namespace fedlrmc
