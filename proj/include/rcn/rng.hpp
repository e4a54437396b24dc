#pragma once

#include <cmath>
#include <cstdint>

#include "rcn/errors.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

// Deterministic xoshiro256** generator seeded through splitmix64.  Integer
// state only, so streams replay bit-identically across platforms; `fork`
// derives an independent child stream from the original seed and a salt,
// letting per-subject / per-seed work be reordered without changing results.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // One uniform integer in [0, n).  Rejection-free modulo is fine here: n is
  // always tiny (axis counts, dataset sizes) relative to 2^64.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  // Box-Muller; the spare deviate is cached so consecutive calls consume the
  // stream in a fixed pattern.
  double normal(double mean, double stddev) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = next_unit(), u2 = next_unit();
    while (u1 == 0.0) u1 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return mean + stddev * r * std::cos(a);
  }

  // Child stream keyed by (original seed, salt); does not consume from or
  // depend on this stream's position.
  Rng fork(std::uint64_t salt) const {
    std::uint64_t x = seed_;
    std::uint64_t a = splitmix64(x);
    x = seed_ ^ (0x9E3779B97F4A7C15ull * (salt + 1));
    std::uint64_t b = splitmix64(x);
    return Rng(a ^ b);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <typename T>
Tensor<T> rng_uniform(Rng& rng, Shape shape, double lo, double hi) {
  Tensor<T> t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
Tensor<T> rng_normal(Rng& rng, Shape shape, double mean, double stddev) {
  Tensor<T> t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal(mean, stddev));
  return t;
}

}  // namespace rcn
