#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "emflow/types.hpp"

namespace emflow {

// All randomness in this library goes through these helpers instead of the
// std <random> distributions, whose output is not pinned by the standard.
// That keeps generated corpora, checkpoints and logs byte-identical for a
// given seed regardless of standard library version.

using RngEngine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream derived from (seed, stream); used for counter-based
// per-instance seeding during data generation.
inline RngEngine make_engine(std::uint64_t seed, std::uint64_t stream = 0) {
  return RngEngine(splitmix64(seed ^ splitmix64(stream)));
}

// Uniform double in [0, 1) with 53 bits of mantissa.
inline double uniform01(RngEngine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline double uniform(RngEngine& eng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(eng);
}

// Unbiased integer in [0, n) via rejection sampling.
inline std::uint64_t uniform_below(RngEngine& eng, std::uint64_t n) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v = eng();
  while (v >= limit) v = eng();
  return v % n;
}

inline Index uniform_index(RngEngine& eng, Index n) {
  return static_cast<Index>(uniform_below(eng, static_cast<std::uint64_t>(n)));
}

// Box-Muller; consumes exactly two engine draws per sample.
inline double gaussian(RngEngine& eng) {
  const double u1 = 1.0 - uniform01(eng);  // (0, 1]
  const double u2 = uniform01(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline Vector gaussian_vector(RngEngine& eng, Index n, double scale = 1.0) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = scale * gaussian(eng);
  return v;
}

inline Vector uniform_vector(RngEngine& eng, Index n, double lo, double hi) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = uniform(eng, lo, hi);
  return v;
}

}  // namespace emflow
