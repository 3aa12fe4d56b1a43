#pragma once

#include <cmath>
#include <cstdint>
#include <random>

// Deterministic RNG helpers. Distributions are implemented by hand so the
// same seed yields the same stream on every platform and stdlib.

namespace meflow {

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t bits() { return eng_(); }

  // uniform in [0,1)
  double uniform() { return (double)(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * M_PI * u2;
    cached_ = r * std::sin(th);
    have_cached_ = true;
    return r * std::cos(th);
  }
  double normal(double mean, double sd) { return mean + sd * normal(); }

  double log_uniform(double a, double b) { return a * std::exp(uniform() * std::log(b / a)); }

  // integer in [0, n)
  int64_t below(int64_t n) {
    return (int64_t)((__uint128_t)eng_() * (uint64_t)n >> 64);
  }

  // independent substream
  Rng split(uint64_t key) const {
    uint64_t z = seed_mix_ ^ (key + 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return Rng(z ^ (z >> 31));
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = (int64_t)v.size() - 1; i > 0; --i) {
      const int64_t j = below(i + 1);
      std::swap(v[(size_t)i], v[(size_t)j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  uint64_t seed_mix_ = eng_();
  bool have_cached_ = false;
  double cached_ = 0;
};

}  // namespace meflow
