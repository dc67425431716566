#pragma once

#include "net_model.hpp"

#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace gridos
{
    using Bytes = std::vector<std::uint8_t>;

    struct SubGridId
    {
        std::uint64_t value = 0;

        friend constexpr auto operator<=>(SubGridId, SubGridId) = default;
    };

    inline std::string to_string(SubGridId s) { return std::to_string(s.value); }

    struct JobId
    {
        std::uint64_t value = 0;

        friend constexpr auto operator<=>(JobId, JobId) = default;
    };

    /// Thread identity that stays unique across nodes and node restarts: the
    /// creating node, the simulated time that node (re)started, and a per-epoch
    /// counter.
    struct GridThreadId
    {
        PeerId node;
        SimTime epoch = 0.0;
        std::uint64_t counter = 0;

        friend constexpr auto operator<=>(const GridThreadId&, const GridThreadId&) = default;
        friend constexpr bool operator==(const GridThreadId&, const GridThreadId&) = default;
    };

    inline std::string to_string(const GridThreadId& id)
    {
        return to_string(id.node) + "@" + std::to_string(id.epoch) + "#" + std::to_string(id.counter);
    }
}

template <>
struct std::hash<gridos::SubGridId>
{
    std::size_t operator()(gridos::SubGridId s) const noexcept { return std::hash<std::uint64_t>{}(s.value); }
};

template <>
struct std::hash<gridos::GridThreadId>
{
    std::size_t operator()(const gridos::GridThreadId& id) const noexcept
    {
        std::size_t h = std::hash<std::uint64_t>{}(id.node.value);
        h ^= std::hash<double>{}(id.epoch) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        h ^= std::hash<std::uint64_t>{}(id.counter) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        return h;
    }
};
