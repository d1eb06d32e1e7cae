#pragma once

#include <cstdint>
#include <random>

namespace witu {

using Rng = std::mt19937_64;

// SplitMix64 finalizer applied to base + golden*(index+1). For a fixed base
// it is a bijection of index, so distinct indices give distinct seeds.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace witu
