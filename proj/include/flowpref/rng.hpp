// Seeded randomness. std::mt19937_64 supplies the raw stream (its output
// sequence is pinned by the standard); the value mappings below are spelled
// out explicitly because the standard library distributions are
// implementation-defined and would break bit-exact reproducibility claims.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace flowpref {

// SplitMix64 finalizer; used to whiten seeds and derive substreams.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t a) { return mix64(mix64(seed) ^ mix64(a ^ 0xa5a5a5a5a5a5a5a5ull)); }

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b) {
  return derive_seed(derive_seed(seed, a), b);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
  return derive_seed(derive_seed(seed, a, b), c);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(mix64(seed)) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n >= 1. Modulo bias is irrelevant at the
  // scales used here (n << 2^64) and keeps the draw a single call.
  uint64_t uniform_index(uint64_t n) { return gen_() % n; }

  // Standard normal via Box-Muller; the spare value is cached so vector
  // fills consume the stream pairwise.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <typename Derived>
  void fill_normal(Derived& m, double scale = 1.0) {
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j) m(i, j) = static_cast<typename Derived::Scalar>(scale * normal());
  }

  template <typename Derived>
  void fill_uniform(Derived& m, double lo, double hi) {
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j) m(i, j) = static_cast<typename Derived::Scalar>(uniform(lo, hi));
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace flowpref
