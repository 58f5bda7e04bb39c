#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace advpol {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// FNV-1a, used to turn role tags ("victim", "eval", ...) into seed material.
constexpr std::uint64_t tag(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Deterministic sub-seed derivation: derive_seed(base, a, b, ...) is a pure
/// function of its arguments and is order sensitive.
template <class... Parts>
constexpr std::uint64_t derive_seed(std::uint64_t base, Parts... parts) noexcept {
  std::uint64_t h = mix64(base);
  ((h = mix64(h ^ (mix64(static_cast<std::uint64_t>(parts)) + 0x632be59bd9b4e019ULL))), ...);
  return h;
}

// Distributions are written out instead of using <random>'s, whose outputs are
// implementation-defined; checkpoints and datasets must be reproducible across
// standard libraries.

/// Uniform double in [0, 1).
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Counter-based noise keyed by (seed, episode, step, lane). Two draws with the
/// same key are identical no matter which thread or in which order they run.
class CounterNoise {
 public:
  constexpr explicit CounterNoise(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  std::uint64_t bits(std::uint64_t episode, std::uint64_t step, std::uint64_t lane) const noexcept {
    return derive_seed(seed_, episode, step, lane);
  }

  double uniform(std::uint64_t episode, std::uint64_t step, std::uint64_t lane) const noexcept {
    return static_cast<double>(bits(episode, step, lane) >> 11) * 0x1.0p-53;
  }

  double normal(std::uint64_t episode, std::uint64_t step, std::uint64_t lane) const noexcept {
    double u1 = uniform(episode, step, 2 * lane);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform(episode, step, 2 * lane + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
};

}  // namespace advpol
