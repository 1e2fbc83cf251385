#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

namespace flywheel {

/// 64-bit FNV-1a; stable across platforms, used for ids and seed streams.
constexpr std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent seed from a base seed and a path of stream ids.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t part : path) h = splitmix64(h ^ splitmix64(part + 0x632be59bd9b4e019ULL));
  return h;
}

/// Seeded generator with portable draws: only raw mt19937_64 output is used,
/// never the implementation-defined std:: distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }

  double exponential(double mean) { return -mean * std::log1p(-uniform()); }

  /// Inverse-CDF categorical draw over nonnegative weights summing to ~1.
  template <typename Weights>
  std::size_t categorical(const Weights& probs) {
    const double u = uniform();
    double acc = 0.0;
    const auto n = static_cast<std::size_t>(probs.size());
    for (std::size_t i = 0; i < n; ++i) {
      acc += probs[static_cast<decltype(probs.size())>(i)];
      if (u < acc) return i;
    }
    // Rounding left u above the cumulative total: return the last positive entry.
    for (std::size_t i = n; i-- > 0;) {
      if (probs[static_cast<decltype(probs.size())>(i)] > 0.0) return i;
    }
    return n - 1;
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace flywheel
