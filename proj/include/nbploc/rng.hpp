#pragma once

#include <cstdint>
#include <random>

namespace nbploc {

// SplitMix64 finalizer. Used to derive substream seeds from (seed, index...)
// tuples so that every message update and every Monte Carlo trial owns an
// independent, schedule-independent random stream.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(a) + 0x632be59bd9b4e019ULL * b);
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

using RngEngine = std::mt19937_64;

inline RngEngine make_rng(std::uint64_t seed) { return RngEngine(splitmix64(seed)); }

// Uniform draw in [0, 1).
inline double uniform01(RngEngine& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace nbploc
