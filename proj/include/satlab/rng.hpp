#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace satlab {

// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

/// Child seed for `index` under `parent`. Order-independent: every child is a
/// pure function of (parent, index), so runs can be scheduled in any order.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept {
  return mix64(parent ^ mix64(index * kGolden + 0x632BE59BD9B4E019ULL));
}

/// Nested derivation: derive_seed(derive_seed(parent, a), b), ...
constexpr std::uint64_t derive_seed(std::uint64_t parent,
                                    std::initializer_list<std::uint64_t> path) noexcept {
  for (auto i : path) parent = derive_seed(parent, i);
  return parent;
}

/// SplitMix64 stream. Counter-based: draw k is mix64(seed + (k+1)*golden).
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += kGolden;
    return mix64(state_);
  }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard exponential via inversion; used for Dirichlet(1) draws.
  double exponential() noexcept { return -std::log1p(-uniform()); }

  /// Standard normal via Box-Muller (one value per call, deterministic).
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::uint64_t state_;
};

}  // namespace satlab
