#pragma once

// Quality of a subGrid partition: mean estimated bandwidth over every
// intra-subGrid pair, against random partitions with the same group sizes.

#include "discovery.hpp"
#include "error.hpp"
#include "net_model.hpp"
#include "random.hpp"
#include "trace.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

namespace gridos
{
    /// Groups in subGrid-id order, members ascending.
    using Partition = std::vector<std::vector<PeerId>>;

    inline Partition canonical(Partition p)
    {
        for (auto& g : p)
        {
            std::sort(g.begin(), g.end());
        }
        return p;
    }

    inline Partition partition_from_state(const OverlayState& s) { return canonical(partition_of(s)); }

    /// Rebuild the final partition from overlay records alone.
    inline Partition partition_from_trace(const Trace& trace)
    {
        std::map<std::uint64_t, std::set<PeerId>> groups;
        auto peer = [](const TraceRecord& r) { return PeerId{r.data.at("peer").get<std::uint64_t>()}; };
        auto subgrid = [](const TraceRecord& r) { return r.data.at("subgrid").get<std::uint64_t>(); };
        for (const auto& r : trace.records())
        {
            if (r.kind == "PeerJoined" || r.kind == "SubGridCreated")
            {
                groups[subgrid(r)].insert(peer(r));
            }
            else if (r.kind == "PeerMoved")
            {
                groups[r.data.at("from").get<std::uint64_t>()].erase(peer(r));
                groups[subgrid(r)].insert(peer(r));
            }
            else if (r.kind == "PeerFailed" || r.kind == "MasterFailed")
            {
                groups[subgrid(r)].erase(peer(r));
            }
            else if (r.kind == "SubGridDissolved")
            {
                groups.erase(subgrid(r));
            }
        }
        Partition out;
        for (const auto& [id, members] : groups)
        {
            if (!members.empty())
            {
                out.emplace_back(members.begin(), members.end());
            }
        }
        return out;
    }

    /// Pooled over all unordered intra-group pairs; 0 when there are none.
    inline double mean_intra_bandwidth(const Partition& p, const NetworkTopology& topology)
    {
        double sum = 0.0;
        std::size_t pairs = 0;
        for (const auto& g : p)
        {
            for (std::size_t i = 0; i < g.size(); ++i)
            {
                for (std::size_t j = i + 1; j < g.size(); ++j)
                {
                    sum += topology.bandwidth(g[i], g[j]).value;
                    ++pairs;
                }
            }
        }
        return pairs == 0 ? 0.0 : sum / static_cast<double>(pairs);
    }

    struct PartitionComparison
    {
        std::size_t subgrids = 0;
        std::size_t trials = 0;
        double formed = 0.0;
        double random_mean = 0.0;
        double win_fraction = 0.0; // share of random partitions the formed one matches or beats

        [[nodiscard]] bool formed_wins() const noexcept { return formed > random_mean; }

        friend bool operator==(const PartitionComparison&, const PartitionComparison&) = default;
    };

    inline constexpr std::uint64_t kBaselineSeedSalt = 0x9e3779b97f4a7c15ULL;

    inline PartitionComparison compare_partition(const Partition& formed, const NetworkTopology& topology,
                                                 std::uint64_t seed, std::size_t trials)
    {
        const Partition p = canonical(formed);
        if (p.size() < 2)
        {
            throw Error(Errc::TooFewSubGrids, "need at least two subGrids, have " + std::to_string(p.size()));
        }
        if (trials == 0)
        {
            throw Error(Errc::InvalidSpec, "trials must be positive");
        }
        std::vector<PeerId> members;
        for (const auto& g : p)
        {
            members.insert(members.end(), g.begin(), g.end());
        }
        std::sort(members.begin(), members.end());

        PartitionComparison out;
        out.subgrids = p.size();
        out.trials = trials;
        out.formed = mean_intra_bandwidth(p, topology);

        Rng rng(seed ^ kBaselineSeedSalt);
        double sum = 0.0;
        std::size_t wins = 0;
        for (std::size_t t = 0; t < trials; ++t)
        {
            std::vector<PeerId> order = members;
            shuffle(std::span<PeerId>(order), rng);
            Partition random;
            std::size_t at = 0;
            for (const auto& g : p)
            {
                random.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                                    order.begin() + static_cast<std::ptrdiff_t>(at + g.size()));
                at += g.size();
            }
            const double m = mean_intra_bandwidth(random, topology);
            sum += m;
            wins += out.formed >= m ? 1 : 0;
        }
        out.random_mean = sum / static_cast<double>(trials);
        out.win_fraction = static_cast<double>(wins) / static_cast<double>(trials);
        return out;
    }
}
