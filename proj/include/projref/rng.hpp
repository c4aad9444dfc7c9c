// Seed derivation and counter-based Gaussian draws. Counter-based sampling
// keeps per-pixel noise independent of tiling and worker count.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace projref {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stable sub-seed for a named purpose (batch id, trial id, ...).
inline uint64_t derive_seed(uint64_t master, uint64_t stream, uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ (stream * 0x9e3779b97f4a7c15ULL)) ^ index);
}

inline double uniform01(uint64_t bits) {
  return double(bits >> 11) * 0x1.0p-53;  // [0,1)
}

/// One standard normal draw addressed by (seed, counter); Box-Muller.
inline double counter_gaussian(uint64_t seed, uint64_t counter) {
  uint64_t a = splitmix64(seed ^ (counter * 2 + 0));
  uint64_t b = splitmix64(seed ^ (counter * 2 + 1));
  double u1 = uniform01(a);
  double u2 = uniform01(b);
  u1 = std::max(u1, 0x1.0p-60);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Sequential RNG for sampling tasks (shuffles, index draws).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  double uniform() { return uniform01(engine_()); }

  /// Uniform integer in [0, n).
  size_t index(size_t n) {
    // rejection-free modulo bias is negligible for our n; keep it simple and portable
    return size_t(uniform() * double(n)) % n;
  }

  double gaussian() {
    double u1 = std::max(uniform(), 0x1.0p-60);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace projref
