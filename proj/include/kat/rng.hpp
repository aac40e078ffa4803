#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace kat {

// Deterministic RNG. std::mt19937_64 output is pinned by the standard, but
// the library distributions are not, so every draw here is hand-rolled to
// keep runs reproducible across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Derives an independent stream, e.g. per bag or per class.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next() { return eng_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) via rejection.
  std::uint64_t below(std::uint64_t n);

  // Standard normal, Box-Muller (pairs cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Normal(0, stddev) with |value| <= limit_sigmas * stddev, by resampling.
  double truncated_normal(double stddev, double limit_sigmas = 2.0);

  // Index sampled proportionally to non-negative weights.
  std::size_t weighted(const std::vector<double>& weights);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace kat
