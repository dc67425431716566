#pragma once

#include <gridos/net_model.hpp>

#include <array>
#include <vector>

namespace gridos::testing
{
    struct FixtureLink
    {
        std::uint64_t peer;
        double rtt;
        double loss;
    };

    // Source peer 0 and six candidates whose RTT order and bandwidth order disagree.
    inline constexpr std::array<FixtureLink, 6> kSixPeerLinks{{
        {1, 0.06, 0.0016},
        {2, 0.03, 0.026},
        {3, 0.05, 0.021},
        {4, 0.02, 0.0053},
        {5, 0.04, 0.0083},
        {6, 0.01, 0.033},
    }};

    inline NetworkTopology six_peer_topology()
    {
        NetworkTopology t;
        for (const auto& l : kSixPeerLinks)
        {
            t.set_link(PeerId{0}, PeerId{l.peer}, LinkMetrics::make(l.rtt, l.loss));
        }
        return t;
    }

    inline std::vector<PeerId> six_peer_candidates()
    {
        std::vector<PeerId> out;
        for (const auto& l : kSixPeerLinks)
        {
            out.push_back(PeerId{l.peer});
        }
        return out;
    }

    inline std::vector<PeerId> ids(std::initializer_list<std::uint64_t> values)
    {
        std::vector<PeerId> out;
        for (auto v : values)
        {
            out.push_back(PeerId{v});
        }
        return out;
    }
}
