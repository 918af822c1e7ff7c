#pragma once

#include <cstdint>
#include <random>

namespace bb {

using Rng = std::mt19937_64;

// Uniform double in [0, 1) from the top 53 bits. Used instead of
// std::uniform_real_distribution so generated data does not depend on the
// standard library implementation.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Uniform index in [0, n) by rejection; portable across implementations.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

}  // namespace bb
