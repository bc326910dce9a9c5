#pragma once

#include <cstdint>
#include <string_view>

namespace waveden {

// Splittable counter-free PRNG built on SplitMix64. Every stochastic choice
// in the project (weight init, batch sampling, augmentation, noise synthesis)
// derives from a run seed through split(), so any draw is a pure function of
// (seed, derivation path). Not cryptographic.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

  // Derive an independent stream keyed by an integer tag.
  Rng split(uint64_t tag) const {
    return Rng(mix(state_ + mix(tag + 0xd1b54a32d192ed03ull)));
  }
  Rng split(std::string_view tag) const { return split(fnv1a(tag)); }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform in [0, 1).
  double uniform() {
    return double(next_u64() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n > 0.
  int64_t uniform_int(int64_t n);

  // Standard normal via Box-Muller (second value of each pair is cached).
  double normal();

  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace waveden
