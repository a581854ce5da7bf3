#pragma once

#include <cstdint>
#include <random>

namespace feel {

using Rng = std::mt19937_64;

// splitmix64 finalizer; decorrelates (seed, tag) pairs before seeding.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Independent named sub-streams of one run seed.
enum class Stream : std::uint64_t {
  kPlacement = 1,
  kData = 2,
  kPartition = 3,
  kFading = 4,
  kScheduler = 5,
  kModelInit = 6,
  kCompute = 7,
};

inline Rng make_stream(std::uint64_t seed, Stream stream) {
  return Rng(mix_seed(seed, static_cast<std::uint64_t>(stream)));
}

// Uniform double in [0, 1) built from the top 53 bits; identical on every
// standard library, unlike std::uniform_real_distribution.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace feel
