#pragma once

#include <cstdint>
#include <random>

namespace permagg {

/// SplitMix64 finalizer (Steele, Lea & Flood 2014). Bijective on 64-bit words,
/// used only to turn structured seed material into well-mixed generator seeds.
inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Stable child-seed derivation. The (master, tag) pair always maps to the
/// same child seed, so replication-level work can be scheduled on any number
/// of threads without changing a single random draw.
inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) noexcept {
    return mix64(master ^ mix64(tag + 0xd1b54a32d192ed03ULL));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

}  // namespace permagg
