#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mspl/common.hpp"

namespace mspl {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// xoshiro256**. Every stochastic operation in the project takes one of these
// explicitly; the same seed always yields the same stream.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& word : state_) {
      word = splitmix64(sm);
    }
  }

  uint64_t next() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // 53-bit uniform in [0,1).
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }

  // Box-Muller without the cached spare: two draws per sample, stateless.
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  // Unbiased integer in [0, n) via rejection.
  uint64_t below(uint64_t n) {
    MSPL_CHECK(n > 0, "Rng::below requires n > 0");
    const uint64_t threshold = (0ULL - n) % n;
    for (;;) {
      const uint64_t r = next();
      if (r >= threshold) {
        return r % n;
      }
    }
  }

  // Inclusive range.
  int range(int lo, int hi) {
    MSPL_CHECK(lo <= hi, "Rng::range requires lo <= hi");
    return lo + int(below(uint64_t(hi - lo) + 1));
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = size_t(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Index draw proportional to non-negative weights.
  size_t weighted(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) {
      total += w;
    }
    MSPL_CHECK(total > 0.0, "Rng::weighted requires positive total weight");
    const double r = uniform() * total;
    double cum = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
      cum += weights[i];
      if (r < cum) {
        return i;
      }
    }
    return weights.size() - 1;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<uint64_t, 4> state_{};
};

// Convention for per-record / per-epoch derived streams.
inline Rng derived_rng(uint64_t seed, uint64_t tag) { return Rng(seed ^ tag); }

}  // namespace mspl
