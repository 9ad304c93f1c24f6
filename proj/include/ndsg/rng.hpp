#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace ndsg {

/// SplitMix64 step. This exact sequence is an interoperability contract for
/// stego host selection (see sideinfo.hpp); everything else in the project
/// just reuses it as a convenient seeded generator.
inline uint64_t splitmix64_next(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Deterministic generator used for initialization, data synthesis and batch
/// shuffling. Owns its normal-variate transform so results do not depend on
/// the standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  /// Derives an independent stream from (seed, tag) without consuming state.
  static Rng derive(uint64_t seed, uint64_t tag) {
    uint64_t s = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
    splitmix64_next(s);
    return Rng(s);
  }

  uint64_t next_u64() { return splitmix64_next(state_); }

  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; caches the second variate.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = static_cast<double>((next_u64() >> 11) + 1) *
                (1.0 / 9007199254740992.0);  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925287 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  float normal_f(float stddev) { return static_cast<float>(normal()) * stddev; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace ndsg
