#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace mia {

// Stable, platform-independent seed derivation. std::hash is not pinned by
// the standard, so all per-sample randomness goes through these instead.

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// (global seed, stream id, draw index) -> independent seed.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stream_id,
                                 std::uint64_t index) {
    std::uint64_t h = splitmix64(global_seed);
    h = splitmix64(h ^ fnv1a64(stream_id));
    h = splitmix64(h ^ index);
    return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

// Uniform in [0,1) from the top 53 bits; pinned here because the standard
// distributions leave their algorithms implementation-defined.
inline double uniform_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n). Requires n >= 1.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
    const auto v = static_cast<std::uint64_t>(uniform_unit(rng) * static_cast<double>(n));
    return v >= n ? n - 1 : v;
}

// Fisher-Yates with the pinned draw above (std::shuffle is likewise
// implementation-defined).
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::uint64_t j = uniform_below(rng, i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace mia
