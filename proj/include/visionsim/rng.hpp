#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace visionsim {

/// Seeded generator with distributions implemented in-house, so a seed yields
/// the same stream with every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). `n` must be > 0.
  std::size_t index(std::size_t n);

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Independent child stream, for per-block or per-scene generators.
  Rng fork() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.index(i);
    using std::swap;
    swap(first[i - 1], first[j]);
  }
}

}  // namespace visionsim
