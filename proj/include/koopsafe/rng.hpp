#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace koopsafe {

// All randomness flows through these helpers. std::mt19937_64 output is
// pinned by the standard, but the std distributions and std::shuffle are
// implementation-defined, so draws are scaled by hand.

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// Uniform in [0, 1) with 53 bits of resolution.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// Inclusive bounds. Modulo bias is irrelevant at these ranges.
inline int uniform_int(Rng& rng, int lo, int hi) {
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

// Fisher-Yates; std::shuffle would not be reproducible across toolchains.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

// splitmix64 finalizer; gives sub-tasks decorrelated streams from one seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27; x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

}  // namespace koopsafe
