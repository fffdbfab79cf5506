#include "nfem/error.hpp"
#include "nfem/rng.hpp"

#include <cmath>
#include <numbers>

namespace nfem {

std::string_view category_name(ErrorCategory category) noexcept {
    switch (category) {
    case ErrorCategory::usage: return "usage";
    case ErrorCategory::io: return "io";
    case ErrorCategory::format: return "format";
    case ErrorCategory::config: return "config";
    case ErrorCategory::mesh: return "mesh";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::domain: return "domain";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::internal: return "internal";
    }
    return "internal";
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) noexcept {
    return splitmix64(splitmix64(splitmix64(seed) ^ index) ^ (stream * 0xd1b54a32d192ed03ULL));
}

// Box-Muller on our own uniform source so draws are reproducible everywhere.
double standard_normal(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) {
        u1 = uniform01(rng);
    }
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace nfem
