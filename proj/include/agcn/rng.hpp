#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

namespace agcn {

/// Splittable counter-based generator. The full algorithm is pinned in
/// README.md (Reproducibility section) so that runs reproduce across
/// implementations: output i of a stream with seed s is
/// mix64(s + (i+1) * 0x9E3779B97F4A7C15), with mix64 the SplitMix64
/// finalizer. split(k) derives an independent stream without consuming
/// state from the parent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  static std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() {
    counter_ += 1;
    return mix64(seed_ + counter_ * 0x9E3779B97F4A7C15ull);
  }

  Rng split(std::uint64_t stream) const {
    return Rng(mix64(seed_ ^ (0xA0761D6478BD642Full + stream * 0xE7037ED1A0B428DBull)));
  }

  // Uniform in [0,1), 53 mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via the Box-Muller transform; the second draw of each
  // pair is cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();  // (0,1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  // Unbiased integer in [0,n) by rejection of the biased tail.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Fisher-Yates, back to front.
  template <typename It>
  void shuffle(It first, It last) {
    const std::uint64_t n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const std::uint64_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace agcn
