#pragma once

// Portable sampling helpers. The standard distributions are implementation
// defined, so traces would differ between standard libraries; these only rely
// on the bit-exact output of std::mt19937_64.

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace gridos
{
    using Rng = std::mt19937_64;

    /// Uniform in [0, 1).
    inline double uniform01(Rng& rng)
    {
        return static_cast<double>(rng() >> 11) * 0x1.0p-53;
    }

    inline double uniform_real(Rng& rng, double lo, double hi)
    {
        return lo + (hi - lo) * uniform01(rng);
    }

    /// Uniform integer in [0, bound) by rejection, bound > 0.
    inline std::uint64_t uniform_below(Rng& rng, std::uint64_t bound)
    {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = rng();
        while (x >= limit)
        {
            x = rng();
        }
        return x % bound;
    }

    template <typename T>
    void shuffle(std::span<T> items, Rng& rng)
    {
        for (std::size_t i = items.size(); i > 1; --i)
        {
            const auto j = static_cast<std::size_t>(uniform_below(rng, i));
            using std::swap;
            swap(items[i - 1], items[j]);
        }
    }
}
