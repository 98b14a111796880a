#pragma once

#include <cstdint>
#include <random>

#include "semfed/matrix.hpp"

namespace semfed {

// Deterministic generator: a 64-bit Mersenne Twister seeded through
// SplitMix64. Identical seed and call sequence give identical output within
// one build; streams derived with `derive` are independent of the parent's
// consumption so far.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  // Uniform in [0, 1).
  double uniform();
  // Uniform integer in [0, n); n must be positive.
  std::size_t uniform_index(std::size_t n);
  double normal(double mean = 0.0, double stddev = 1.0);
  Real uniform_real(Real lo, Real hi);

  std::uint64_t next_u64() { return engine_(); }

  Rng derive(std::uint64_t stream) const;

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

// Stable per-purpose seed derivation: mix(seed, tag) with a string tag.
std::uint64_t derive_seed(std::uint64_t seed, const char* tag, std::uint64_t index = 0);

}  // namespace semfed
