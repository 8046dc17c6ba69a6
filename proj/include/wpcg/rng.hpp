#pragma once

#include <cstdint>
#include <random>

namespace wpcg {

using Engine = std::mt19937_64;

// SplitMix64 step (Steele, Lea & Flood). Advances `state` and returns the
// mixed output.
constexpr std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Seed of stream `stream` under `master`: one SplitMix64 step from the state
// master ^ (stream * 0xD1B54A32D192ED03). Documented in the README; alternate
// implementations must reproduce it bit-exactly.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t state = master ^ (stream * 0xD1B54A32D192ED03ULL);
  return splitmix64_next(state);
}

// Stream identifiers below a master seed.
namespace streams {
inline constexpr std::uint64_t kScheme = 1;
inline constexpr std::uint64_t kData = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kObjective = 4;
inline constexpr std::uint64_t kDiagnostics = 5;
inline constexpr std::uint64_t kReference = 6;
inline constexpr std::uint64_t kModelInit = 7;
// Per-block particle noise and companion pairing: kBlockBase + j.
inline constexpr std::uint64_t kBlockBase = 1000;
}  // namespace streams

inline Engine make_engine(std::uint64_t master, std::uint64_t stream) {
  return Engine(derive_seed(master, stream));
}

}  // namespace wpcg
