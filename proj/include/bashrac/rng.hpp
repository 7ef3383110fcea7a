#pragma once

// Seedable, splittable random streams.
//
// Every random decision in the pipeline is drawn from a stream derived from
// (root seed, purpose tag, indices). Derivation is a pure hash, so results
// never depend on how work is scheduled across threads. Distributions are
// implemented here on top of the raw 64-bit engine output because the
// standard library distributions are implementation-defined.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

namespace bashrac {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t mix(std::uint64_t a, std::uint64_t b) noexcept {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

}  // namespace detail

/// Derives a child seed from a parent seed, a purpose tag and any number of
/// integer indices.
template <std::integral... Ix>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, Ix... ix) noexcept {
  std::uint64_t h = detail::mix(seed, detail::fnv1a(tag));
  ((h = detail::mix(h, static_cast<std::uint64_t>(ix))), ...);
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                    std::string_view key) noexcept {
  return detail::mix(detail::mix(seed, detail::fnv1a(tag)), detail::fnv1a(key));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  template <std::integral... Ix>
  static Rng stream(std::uint64_t seed, std::string_view tag, Ix... ix) {
    return Rng(derive_seed(seed, tag, ix...));
  }
  static Rng stream(std::uint64_t seed, std::string_view tag, std::string_view key) {
    return Rng(derive_seed(seed, tag, key));
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), unbiased (rejection on the top range).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: empty range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  /// Uniform integer in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one value per call, no caching so the
  /// consumption count is always two words).
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <class T>
  void shuffle(std::span<T> v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace bashrac
