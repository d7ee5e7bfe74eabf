#pragma once

#include <cmath>
#include <cstdint>

namespace latte {

// Deterministic counter-friendly RNG (splitmix64 core). Keeps sampled streams
// bit-stable across platforms, unlike std::normal_distribution.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in (0, 1]
  double uniform_pos() { return 1.0 - uniform(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  int64_t below(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

  // standard normal via Box-Muller (one value per pair, no cached state)
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // truncated normal: resample outside [-2s, 2s]
  double trunc_normal(double sigma) {
    for (;;) {
      double v = normal() * sigma;
      if (std::fabs(v) <= 2.0 * sigma) return v;
    }
  }

 private:
  uint64_t state_;
};

// Stable stream derivation: mix a master seed with stream tags so every
// consumer (data, noise, timesteps, init) gets an independent sequence that
// is a pure function of (seed, tags).
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  Rng r(seed ^ (a * 0xd6e8feb86659fd93ULL) ^ (b * 0xa0761d6478bd642fULL) ^
        (c * 0xe7037ed1a0b428dbULL));
  return r.next_u64();
}

}  // namespace latte
