#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedil {

// Every random decision in the simulator draws from a generator seeded by
// derive_seed(base, {purpose, round, client, ...}). Streams never share
// state, so skipping one (e.g. a disabled inference pass) cannot shift another.

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base,
                                    std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t p : parts) {
    h = splitmix64(h ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
  }
  return h;
}

/// Stream tags for derive_seed.
enum class Stream : std::uint64_t {
  kInit = 1,
  kSplit,
  kPartition,
  kSelect,
  kServerShuffle,
  kClientShuffle,
  kAugmentWeak,
  kAugmentStrong,
  kInference,
  kPseudoShuffle,
  kSynthetic,
  kTestSet,
};

constexpr std::uint64_t tag(Stream s) noexcept { return static_cast<std::uint64_t>(s); }

using Rng = std::mt19937_64;

}  // namespace fedil
