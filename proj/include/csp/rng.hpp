#pragma once

#include <cstdint>
#include <random>

namespace csp {

// splitmix64 step, used to fold several seed components into one stream key
// so per-step / per-record generators are independent of iteration order.
inline std::uint64_t mix_seed(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b)
{
    return mix_seed(mix_seed(a) ^ b);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c)
{
    return mix_seed(mix_seed(a, b) ^ c);
}

inline std::mt19937_64 make_rng(std::uint64_t seed)
{
    return std::mt19937_64(mix_seed(seed));
}

} // namespace csp
