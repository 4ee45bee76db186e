#pragma once

#include <cstdint>

namespace kpac {

/// SplitMix64. Tiny and counter-friendly, so every Monte-Carlo trial can own
/// a stream derived from (seed, trial index) independent of thread count.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}
  SplitMix64(uint64_t seed, uint64_t stream) : state_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ull))) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    return mix_raw(z);
  }
  uint64_t operator()() { return next(); }

  /// Uniform in [0, n) by rejection. n > 0.
  uint64_t below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do v = next();
    while (v >= limit);
    return v % n;
  }

  static uint64_t mix(uint64_t z) { return mix_raw(z + 0x9e3779b97f4a7c15ull); }

 private:
  static uint64_t mix_raw(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t state_;
};

}  // namespace kpac
