#pragma once

#include <cmath>
#include <cstdint>

namespace changediff {

// Counter-based deterministic generator. All randomness in the project flows
// through explicit seeds; std:: distributions are avoided because their
// output is not pinned across standard libraries.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Folds a stream tag and counter into a base seed. Distinct (stream, counter)
// pairs give statistically independent streams.
inline uint64_t derive_seed(uint64_t base, uint64_t stream, uint64_t counter = 0) {
  uint64_t h = splitmix64(base ^ 0x6a09e667f3bcc909ULL);
  h = splitmix64(h ^ stream);
  h = splitmix64(h ^ counter);
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x243f6a8885a308d3ULL)) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n). n must be positive.
  uint32_t uniform_index(uint32_t n) {
    return static_cast<uint32_t>(uniform() * n) % n;
  }

  // Standard normal via Box-Muller; two uniforms per draw, no cached spare.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  uint64_t state_;
};

}  // namespace changediff
