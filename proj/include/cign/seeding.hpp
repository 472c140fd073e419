#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace cign {

// splitmix64; used to derive independent seed streams from one run seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 0x51ed2701ull));
}

// Unbiased draw from [0, n) with rejection sampling. Unlike the standard
// distributions this is pinned down to the bit, so shuffles and reservoir
// draws replay identically everywhere.
template <typename Rng>
inline std::uint64_t bounded_rand(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = rng();
    while (x >= limit) x = rng();
    return x % n;
}

template <typename T, typename Rng>
inline void fisher_yates_shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[bounded_rand(rng, i)]);
    }
}

}  // namespace cign
