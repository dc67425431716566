#pragma once

#include "error.hpp"
#include "random.hpp"

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gridos
{
    /// Simulated time in seconds.
    using SimTime = double;

    struct PeerId
    {
        std::uint64_t value = 0;

        friend constexpr auto operator<=>(PeerId, PeerId) = default;
    };

    inline std::string to_string(PeerId p) { return std::to_string(p.value); }

    /// Metrics of one (symmetric) link. Construct through make() to get the
    /// invariants checked.
    struct LinkMetrics
    {
        double rtt = 0.0;         // seconds, > 0
        double packet_loss = 0.0; // probability in [0, 1]
        double mss = 0.0;         // bytes, > 0

        static LinkMetrics make(double rtt, double packet_loss, double mss = 1460.0)
        {
            LinkMetrics m{rtt, packet_loss, mss};
            m.validate();
            return m;
        }

        void validate() const
        {
            if (!(rtt > 0.0) || !std::isfinite(rtt))
            {
                throw Error(Errc::InvalidLinkMetrics, "rtt must be finite and > 0");
            }
            if (!(packet_loss >= 0.0 && packet_loss <= 1.0))
            {
                throw Error(Errc::InvalidLinkMetrics, "packet_loss must lie in [0, 1]");
            }
            if (!(mss > 0.0) || !std::isfinite(mss))
            {
                throw Error(Errc::InvalidLinkMetrics, "mss must be finite and > 0");
            }
        }

        friend bool operator==(const LinkMetrics&, const LinkMetrics&) = default;
    };

    /// Bytes per second.
    struct Bandwidth
    {
        double value = 0.0;

        friend constexpr auto operator<=>(Bandwidth, Bandwidth) = default;
    };

    inline constexpr double kDefaultMss = 1460.0;

    /// Lower clamp on packet loss before it enters the estimator; without it a
    /// lossless link would have unbounded bandwidth.
    inline constexpr double kLossFloor = 1e-6;

    /// Upper bound on available TCP bandwidth, (MSS / RTT) / sqrt(loss), used
    /// directly as the point estimate.
    inline Bandwidth estimate_bandwidth(const LinkMetrics& link) noexcept
    {
        const double loss = std::max(link.packet_loss, kLossFloor);
        return Bandwidth{(link.mss / link.rtt) * (1.0 / std::sqrt(loss))};
    }

    /// Complete graph of symmetric link metrics over a peer set.
    class NetworkTopology
    {
    public:
        void add_peer(PeerId p) { peers_.insert(p); }

        void set_link(PeerId a, PeerId b, const LinkMetrics& m)
        {
            if (a == b)
            {
                throw Error(Errc::InvalidSpec, "self link for peer " + to_string(a));
            }
            m.validate();
            add_peer(a);
            add_peer(b);
            links_[key(a, b)] = m;
        }

        [[nodiscard]] bool has_peer(PeerId p) const { return peers_.contains(p); }

        [[nodiscard]] bool has_link(PeerId a, PeerId b) const { return links_.contains(key(a, b)); }

        [[nodiscard]] const LinkMetrics& link(PeerId a, PeerId b) const
        {
            const auto it = links_.find(key(a, b));
            if (it == links_.end())
            {
                throw Error(Errc::MissingLink, "no link " + to_string(a) + "-" + to_string(b));
            }
            return it->second;
        }

        [[nodiscard]] Bandwidth bandwidth(PeerId a, PeerId b) const { return estimate_bandwidth(link(a, b)); }

        [[nodiscard]] const std::set<PeerId>& peers() const noexcept { return peers_; }

        /// Links keyed by (lower id, higher id).
        [[nodiscard]] const std::map<std::pair<PeerId, PeerId>, LinkMetrics>& links() const noexcept
        {
            return links_;
        }

        /// Throws MissingLink unless every unordered pair of distinct peers has metrics.
        void validate_complete() const
        {
            for (auto a = peers_.begin(); a != peers_.end(); ++a)
            {
                for (auto b = std::next(a); b != peers_.end(); ++b)
                {
                    if (!has_link(*a, *b))
                    {
                        throw Error(Errc::MissingLink, "no link " + to_string(*a) + "-" + to_string(*b));
                    }
                }
            }
        }

        friend bool operator==(const NetworkTopology&, const NetworkTopology&) = default;

    private:
        static std::pair<PeerId, PeerId> key(PeerId a, PeerId b) { return a < b ? std::pair{a, b} : std::pair{b, a}; }

        std::set<PeerId> peers_;
        std::map<std::pair<PeerId, PeerId>, LinkMetrics> links_;
    };

    enum class RankCriterion
    {
        ByRtt,
        ByBandwidth,
    };

    /// Candidates ordered by ascending RTT or descending estimated bandwidth,
    /// ties by ascending PeerId.
    inline std::vector<PeerId> rank_peers(PeerId source, std::span<const PeerId> candidates,
                                          const NetworkTopology& topology, RankCriterion criterion)
    {
        if (candidates.empty())
        {
            throw Error(Errc::EmptyCandidateSet, "rank_peers from " + to_string(source));
        }
        struct Keyed
        {
            double key;
            PeerId peer;
        };
        std::vector<Keyed> keyed;
        keyed.reserve(candidates.size());
        for (PeerId c : candidates)
        {
            const LinkMetrics& m = topology.link(source, c);
            // Negate bandwidth so both criteria sort ascending.
            keyed.push_back({criterion == RankCriterion::ByRtt ? m.rtt : -estimate_bandwidth(m).value, c});
        }
        std::sort(keyed.begin(), keyed.end(), [](const Keyed& l, const Keyed& r) {
            return l.key != r.key ? l.key < r.key : l.peer < r.peer;
        });
        std::vector<PeerId> out;
        out.reserve(keyed.size());
        for (const auto& k : keyed)
        {
            out.push_back(k.peer);
        }
        return out;
    }

    /// The candidate with maximal estimated bandwidth from `source`; ties go to
    /// the lowest PeerId.
    inline PeerId nearest_peer(PeerId source, std::span<const PeerId> candidates, const NetworkTopology& topology)
    {
        if (candidates.empty())
        {
            throw Error(Errc::EmptyCandidateSet, "nearest_peer from " + to_string(source));
        }
        PeerId best = candidates.front();
        double best_bw = topology.bandwidth(source, best).value;
        for (PeerId c : candidates.subspan(1))
        {
            const double bw = topology.bandwidth(source, c).value;
            if (bw > best_bw || (bw == best_bw && c < best))
            {
                best = c;
                best_bw = bw;
            }
        }
        return best;
    }

    enum class TopologyModel
    {
        /// Every link draws rtt and loss independently.
        Uniform,
        /// Peers placed in the unit square; rtt grows linearly with distance,
        /// loss drawn independently per link.
        Euclidean,
    };

    struct TopologyGenSpec
    {
        std::uint64_t peer_count = 0;
        double rtt_min = 0.01;
        double rtt_max = 0.2;
        double loss_min = 1e-4;
        double loss_max = 0.05;
        double mss = kDefaultMss;
        TopologyModel model = TopologyModel::Uniform;

        void validate() const
        {
            if (peer_count == 0)
            {
                throw Error(Errc::InvalidSpec, "peer_count must be positive");
            }
            if (!(rtt_min > 0.0) || !(rtt_max >= rtt_min) || !std::isfinite(rtt_max))
            {
                throw Error(Errc::InvalidSpec, "rtt range must satisfy 0 < rtt_min <= rtt_max");
            }
            if (!(loss_min >= 0.0) || !(loss_max >= loss_min) || loss_max > 1.0)
            {
                throw Error(Errc::InvalidSpec, "loss range must satisfy 0 <= loss_min <= loss_max <= 1");
            }
            if (!(mss > 0.0) || !std::isfinite(mss))
            {
                throw Error(Errc::InvalidSpec, "mss must be positive");
            }
        }

        friend bool operator==(const TopologyGenSpec&, const TopologyGenSpec&) = default;
    };

    /// Peers are numbered 1..peer_count. Deterministic in (spec, seed).
    inline NetworkTopology generate_topology(const TopologyGenSpec& spec, std::uint64_t seed)
    {
        spec.validate();
        Rng rng(seed);
        NetworkTopology topo;
        const auto n = spec.peer_count;
        for (std::uint64_t i = 1; i <= n; ++i)
        {
            topo.add_peer(PeerId{i});
        }

        std::vector<std::pair<double, double>> position;
        if (spec.model == TopologyModel::Euclidean)
        {
            position.resize(n);
            for (auto& p : position)
            {
                p.first = uniform01(rng);
                p.second = uniform01(rng);
            }
        }

        for (std::uint64_t a = 1; a <= n; ++a)
        {
            for (std::uint64_t b = a + 1; b <= n; ++b)
            {
                double rtt = 0.0;
                if (spec.model == TopologyModel::Euclidean)
                {
                    const auto& pa = position[a - 1];
                    const auto& pb = position[b - 1];
                    const double d = std::hypot(pa.first - pb.first, pa.second - pb.second) / std::sqrt(2.0);
                    rtt = spec.rtt_min + (spec.rtt_max - spec.rtt_min) * d;
                }
                else
                {
                    rtt = uniform_real(rng, spec.rtt_min, spec.rtt_max);
                }
                const double loss = uniform_real(rng, spec.loss_min, spec.loss_max);
                topo.set_link(PeerId{a}, PeerId{b}, LinkMetrics{rtt, loss, spec.mss});
            }
        }
        return topo;
    }

    /// One-way delivery time of a message of `bytes` over the link: half the
    /// round trip plus serialization at the estimated bandwidth.
    inline SimTime transfer_latency(const LinkMetrics& link, double bytes)
    {
        const double serialization = bytes > 0.0 ? bytes / estimate_bandwidth(link).value : 0.0;
        return link.rtt / 2.0 + serialization;
    }
}

template <>
struct std::hash<gridos::PeerId>
{
    std::size_t operator()(gridos::PeerId p) const noexcept { return std::hash<std::uint64_t>{}(p.value); }
};
