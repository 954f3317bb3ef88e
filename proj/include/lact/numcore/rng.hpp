#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace lact::nc {

// Deterministic 64-bit RNG (splitmix64 core). The standard-library engines
// and distributions are implementation-defined, so everything that must be
// reproducible across builds goes through this.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  int index(int n) { return static_cast<int>(below(static_cast<uint64_t>(n))); }

  // Box-Muller; one draw per call (the spare is discarded to keep the
  // stream position independent of call parity).
  double gauss(double mu = 0.0, double sigma = 1.0) {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Truncated normal: redraw while |z| > 2 sigma.
  double trunc_gauss(double sigma) {
    for (;;) {
      const double z = gauss(0.0, sigma);
      if (std::abs(z) <= 2.0 * sigma) return z;
    }
  }

  // Derive an independent stream; mixing constant keeps child streams
  // decorrelated from sequential next_u64 draws.
  Rng fork(uint64_t salt) const {
    return Rng(state_ ^ (0x5851f42d4c957f2dull * (salt + 0x14057b7ef767814full)));
  }

 private:
  uint64_t state_;
};

// FNV-1a, used for content hashes and string bucketing.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

}  // namespace lact::nc
