#include "semfed/rng.hpp"

#include "semfed/error.hpp"

namespace semfed {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, const char* tag, std::uint64_t index) {
  // FNV-1a over the tag, then mixed with the seed and index.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const char* p = tag; *p != '\0'; ++p) {
    h ^= static_cast<unsigned char>(*p);
    h *= 0x100000001B3ULL;
  }
  return splitmix64(splitmix64(seed ^ h) + index);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

double Rng::uniform() {
  // 53 random mantissa bits.
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) fail(ErrorCode::kInput, "uniform_index over empty range");
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

double Rng::normal(double mean, double stddev) {
  return mean + stddev * normal_(engine_);
}

Real Rng::uniform_real(Real lo, Real hi) {
  return lo + static_cast<Real>(uniform()) * (hi - lo);
}

Rng Rng::derive(std::uint64_t stream) const {
  return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x5851F42D4C957F2DULL)));
}

}  // namespace semfed
