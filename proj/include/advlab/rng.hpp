#ifndef ADVLAB_RNG_HPP
#define ADVLAB_RNG_HPP

#include <cstdint>
#include <random>

namespace advlab {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Independent stream for (seed, stream, index); parallel and serial callers
/// that use the same triple see the same numbers.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
    return Rng(mix64(mix64(mix64(seed) ^ stream) ^ index));
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Stream ids used across the code base.
namespace streams {
inline constexpr std::uint64_t kPhantom = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kVirtual = 3;
inline constexpr std::uint64_t kInit = 4;
inline constexpr std::uint64_t kShuffle = 5;
inline constexpr std::uint64_t kTrainNoise = 6;
inline constexpr std::uint64_t kTrainAttack = 7;
inline constexpr std::uint64_t kEvalAttack = 8;
inline constexpr std::uint64_t kOodSeed = 9;
inline constexpr std::uint64_t kOodAttack = 10;
} // namespace streams

} // namespace advlab

#endif // ADVLAB_RNG_HPP
