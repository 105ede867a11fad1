#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace cdnb {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Counter-based seed splitting: the seed of a stream depends only on the
/// master seed and the stream's path, never on how many other streams exist.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::string_view> path,
                                 std::uint64_t counter = 0) {
    std::uint64_t s = splitmix64(master);
    for (auto part : path) s = splitmix64(s ^ fnv1a(part));
    return splitmix64(s ^ splitmix64(counter + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t counter) {
    return splitmix64(splitmix64(master) ^ splitmix64(counter + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::string_view> path,
                    std::uint64_t counter = 0) {
    return Rng(derive_seed(master, path, counter));
}

}  // namespace cdnb
