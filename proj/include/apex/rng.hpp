#pragma once

// Deterministic counter-based random numbers.
//
// Every draw is a pure function of (seed, counter, dimension). Monte Carlo
// loops index their draws explicitly, so results do not depend on evaluation
// order and a run can be reproduced bit for bit from its seed alone. The
// mixer is the SplitMix64 finalizer.

#include <cstdint>

namespace apex {

inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stateless keyed hash of (seed, counter, dim).
inline uint64_t counter_hash(uint64_t seed, uint64_t counter, uint64_t dim) {
  return mix64(mix64(mix64(seed) ^ counter) ^ (dim * 0xd1b54a32d192ed03ULL + 1));
}

// Uniform double in [0, 1) from the top 53 bits of the hash.
inline double uniform01(uint64_t seed, uint64_t counter, uint64_t dim) {
  return static_cast<double>(counter_hash(seed, counter, dim) >> 11) * 0x1.0p-53;
}

// Small sequential generator for test fixtures. Same mixer, explicit state.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return mix64(state_++); }

  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound).
  uint64_t next_below(uint64_t bound) { return next_u64() % bound; }

 private:
  uint64_t state_;
};

}  // namespace apex
