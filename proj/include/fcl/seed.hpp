#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fcl {

using Rng = std::mt19937_64;

// Labeled sub-seed derivation: FNV-1a over the label, mixed with the parent
// seed through splitmix64. Distinct labels give independent streams.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(parent ^ splitmix64(h));
}

}  // namespace fcl
