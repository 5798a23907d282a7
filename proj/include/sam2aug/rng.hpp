#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace sam2aug
{

inline std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) noexcept
{
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Derive an independent stream seed for a named case.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view case_id) noexcept
{
    return splitmix64(seed ^ splitmix64(fnv1a(case_id)));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept
{
    return splitmix64(seed ^ splitmix64(salt + 0x632BE59BD9B4E019ULL));
}

/// Seeded stream. The engine is mt19937_64 (fully specified by the standard);
/// the distributions below are written out so draws are identical across
/// standard library implementations.
class Rng
{
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform integer in [lo, hi], inclusive. Rejection sampling, no modulo bias.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi)
    {
        if (hi <= lo)
            return lo;
        const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
        if (range == 0)
            return static_cast<std::int64_t>(next());
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % range);
        std::uint64_t x;
        do
            x = next();
        while (x >= limit);
        return lo + static_cast<std::int64_t>(x % range);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    /// Standard normal via Box-Muller (one value per call; the pair mate is dropped).
    double normal()
    {
        double u1 = uniform01();
        while (u1 <= 0.0)
            u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::mt19937_64 engine_;
};

} // namespace sam2aug
