#pragma once

#include <cstdint>
#include <random>

namespace fairscl {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to expand one base seed into independent streams.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Named sub-streams. Each consumer of randomness owns one, so enabling an
// extra component (e.g. discriminators) never perturbs another's draws.
enum class Stream : std::uint64_t {
  kData = 1,
  kEncoderInit = 2,
  kHeadInit = 3,
  kBatches = 4,
  kDiscriminators = 5,
  kProbe = 6,
  kInlp = 7,
};

constexpr std::uint64_t derive_seed(std::uint64_t base, Stream stream, std::uint64_t index = 0) {
  return mix64(mix64(base ^ mix64(static_cast<std::uint64_t>(stream))) + index);
}

inline Rng make_rng(std::uint64_t base, Stream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(base, stream, index));
}

}  // namespace fairscl
