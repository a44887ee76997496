#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace hexbench {

// mt19937_64 output is fully specified by the standard, so streams are
// reproducible across standard libraries. The std:: distributions are not;
// the transforms below are pinned here instead.
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Pure derivation of a child seed from (seed, stream ids); any run is
/// re-executable in isolation given the same ids.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix64(splitmix64(splitmix64(master) ^ a) ^ splitmix64(b ^ 0xa5a5a5a5a5a5a5a5ULL));
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

inline double log_uniform(Rng& rng, double lo, double hi) {
    return std::exp(uniform(rng, std::log(lo), std::log(hi)));
}

/// Integer in [0, n), rejection-free modulo bias is negligible for the
/// small n used here but avoided anyway via rejection sampling.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

/// Standard normal via Box-Muller (the non-caching branch: one value per
/// two uniforms, stateless).
inline double normal01(Rng& rng) {
    double u1;
    do {
        u1 = uniform01(rng);
    } while (u1 <= 0.0);
    const double u2 = uniform01(rng);
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

inline double normal(Rng& rng, double mean, double sd) {
    return mean + sd * normal01(rng);
}

}  // namespace hexbench
