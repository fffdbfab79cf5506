#pragma once

#include <cstdint>
#include <random>

namespace nfem {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Derives an independent stream seed from (global seed, index, stream id).
// Every problem index gets its own generator so batches can be generated in
// any order or in parallel without changing the result.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream = 0) noexcept;

inline Rng make_rng(std::uint64_t seed, std::uint64_t index = 0, std::uint64_t stream = 0) {
    return Rng(derive_seed(seed, index, stream));
}

// Uniform double in [0, 1) built from the top 53 bits; unlike
// std::uniform_real_distribution this is identical across standard libraries.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

double standard_normal(Rng& rng);

} // namespace nfem
