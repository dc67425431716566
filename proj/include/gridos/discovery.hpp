#pragma once

// Topology-aware self-organisation of peers into a RootGrid made of
// capacity-bounded subGrids, each with one master and its slaves. Masters
// exchange resource advertisements with each other and fan them out to their
// slaves.

#include "error.hpp"
#include "ids.hpp"
#include "net_model.hpp"
#include "resources.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace gridos
{
    inline constexpr std::size_t kDefaultLim = 8;

    /// Relative bandwidth gain a slave needs before it leaves its subGrid for a
    /// newly announced one.
    inline constexpr double kMoveHysteresis = 0.10;

    struct SubGrid
    {
        SubGridId id;
        PeerId master;
        std::set<PeerId> slaves;
        std::size_t lim = kDefaultLim;

        [[nodiscard]] std::size_t size() const noexcept { return 1 + slaves.size(); }
        [[nodiscard]] bool has_room() const noexcept { return size() < lim; }

        friend bool operator==(const SubGrid&, const SubGrid&) = default;
    };

    /// An advertisement or the tombstone of a failed peer. Merging is
    /// last-writer-wins on (timestamp, removed).
    struct ViewEntry
    {
        ResourceAdvertisement adv;
        bool removed = false;

        [[nodiscard]] bool newer_than(const ViewEntry& o) const noexcept
        {
            if (adv.timestamp != o.adv.timestamp)
            {
                return adv.timestamp > o.adv.timestamp;
            }
            return removed && !o.removed;
        }

        friend bool operator==(const ViewEntry&, const ViewEntry&) = default;
    };

    using ResourceView = std::map<PeerId, ViewEntry>;

    /// Merge one entry; returns true when the view changed.
    inline bool merge_entry(ResourceView& view, const ViewEntry& e)
    {
        auto [it, inserted] = view.try_emplace(e.adv.origin, e);
        if (inserted)
        {
            return true;
        }
        if (e.newer_than(it->second))
        {
            it->second = e;
            return true;
        }
        return false;
    }

    inline ViewEntry tombstone(PeerId origin, SimTime at)
    {
        ViewEntry e;
        e.adv.origin = origin;
        e.adv.share_limits.owner = origin;
        e.adv.timestamp = at;
        e.removed = true;
        return e;
    }

    struct NearestEntry
    {
        SubGridId subgrid;
        Bandwidth bandwidth;

        friend bool operator==(const NearestEntry&, const NearestEntry&) = default;
    };

    struct OverlayState
    {
        std::size_t lim = kDefaultLim;
        bool root_exists = false;
        std::map<SubGridId, SubGrid> subgrids;
        std::map<PeerId, SubGridId> membership;
        std::map<PeerId, std::vector<NearestEntry>> nearest_tables;
        std::map<PeerId, ResourceView> resource_views;
        std::set<PeerId> ever_joined;
        std::set<PeerId> failed;
        std::uint64_t next_subgrid = 1;

        explicit OverlayState(std::size_t lim_ = kDefaultLim) : lim(lim_)
        {
            if (lim == 0)
            {
                throw Error(Errc::InvalidSpec, "lim must be positive");
            }
        }

        [[nodiscard]] bool is_live(PeerId p) const { return ever_joined.contains(p) && !failed.contains(p); }

        [[nodiscard]] bool is_master(PeerId p) const
        {
            const auto it = membership.find(p);
            return it != membership.end() && subgrids.at(it->second).master == p;
        }

        [[nodiscard]] const SubGrid& subgrid_of(PeerId p) const
        {
            const auto it = membership.find(p);
            if (it == membership.end())
            {
                throw Error(Errc::NotJoined, "peer " + to_string(p));
            }
            return subgrids.at(it->second);
        }

        [[nodiscard]] std::vector<PeerId> live_peers() const
        {
            std::vector<PeerId> out;
            for (PeerId p : ever_joined)
            {
                if (!failed.contains(p))
                {
                    out.push_back(p);
                }
            }
            return out;
        }

        [[nodiscard]] std::vector<PeerId> live_masters() const
        {
            std::vector<PeerId> out;
            for (const auto& [id, sg] : subgrids)
            {
                if (!failed.contains(sg.master))
                {
                    out.push_back(sg.master);
                }
            }
            return out;
        }
    };

    enum class OverlayEventKind
    {
        PeerJoined,
        RootGridCreated,
        SubGridCreated,
        SubGridAnnounced,
        PeerMoved,
        MasterElected,
        MasterFailed,
        ResourceRegistered,
        InfoPropagated,
        PeerFailed,
        SubGridDissolved,
    };

    inline constexpr std::string_view to_string(OverlayEventKind k) noexcept
    {
        switch (k)
        {
        case OverlayEventKind::PeerJoined: return "PeerJoined";
        case OverlayEventKind::RootGridCreated: return "RootGridCreated";
        case OverlayEventKind::SubGridCreated: return "SubGridCreated";
        case OverlayEventKind::SubGridAnnounced: return "SubGridAnnounced";
        case OverlayEventKind::PeerMoved: return "PeerMoved";
        case OverlayEventKind::MasterElected: return "MasterElected";
        case OverlayEventKind::MasterFailed: return "MasterFailed";
        case OverlayEventKind::ResourceRegistered: return "ResourceRegistered";
        case OverlayEventKind::InfoPropagated: return "InfoPropagated";
        case OverlayEventKind::PeerFailed: return "PeerFailed";
        case OverlayEventKind::SubGridDissolved: return "SubGridDissolved";
        }
        return "?";
    }

    /// `peer` is the subject (joining, moving, elected, failed peer, message
    /// sender); `other` is a counterpart (announcement recipient, message
    /// receiver, deposed master).
    struct OverlayEvent
    {
        OverlayEventKind kind;
        SimTime timestamp = 0.0;
        PeerId peer;
        SubGridId subgrid;
        std::optional<PeerId> other;
        std::optional<SubGridId> from;
        std::size_t count = 0;  // InfoPropagated: entries carried
        double latency = 0.0;   // InfoPropagated: one-way delivery time

        friend bool operator==(const OverlayEvent&, const OverlayEvent&) = default;
    };

    using OverlayEvents = std::vector<OverlayEvent>;

    namespace detail
    {
        inline void require_live(const OverlayState& s, PeerId p)
        {
            if (!s.is_live(p))
            {
                throw Error(Errc::NotJoined, "peer " + to_string(p) + " is not a live member");
            }
        }

        inline void remove_from_tables(OverlayState& s, SubGridId gone)
        {
            for (auto& [peer, table] : s.nearest_tables)
            {
                std::erase_if(table, [&](const NearestEntry& e) { return e.subgrid == gone; });
            }
        }
    }

    /// Estimated bandwidth from `peer` to every live subGrid master other than
    /// itself, best first (ties by lower SubGridId).
    inline std::vector<NearestEntry> compute_nearest_table(const OverlayState& s, PeerId peer,
                                                           const NetworkTopology& topology)
    {
        std::vector<NearestEntry> table;
        for (const auto& [id, sg] : s.subgrids)
        {
            if (sg.master == peer || s.failed.contains(sg.master))
            {
                continue;
            }
            table.push_back({id, topology.bandwidth(peer, sg.master)});
        }
        std::stable_sort(table.begin(), table.end(), [](const NearestEntry& l, const NearestEntry& r) {
            return l.bandwidth.value > r.bandwidth.value;
        });
        return table;
    }

    /// The subGrid whose master has maximal estimated bandwidth from `peer`.
    inline SubGridId find_nearest_subgrid(const OverlayState& s, PeerId peer, const NetworkTopology& topology)
    {
        const auto table = compute_nearest_table(s, peer, topology);
        if (table.empty())
        {
            throw Error(Errc::NoSubGrids, "no subGrid reachable from peer " + to_string(peer));
        }
        return table.front().subgrid;
    }

    namespace detail
    {
        inline OverlayEvents found_subgrid(OverlayState& s, PeerId master, SimTime now, bool announce)
        {
            const SubGridId id{s.next_subgrid++};
            s.subgrids.emplace(id, SubGrid{id, master, {}, s.lim});
            s.membership[master] = id;
            OverlayEvents ev{{OverlayEventKind::SubGridCreated, now, master, id}};
            if (announce)
            {
                for (PeerId p : s.live_peers())
                {
                    if (p != master)
                    {
                        ev.push_back({OverlayEventKind::SubGridAnnounced, now, p, id, master});
                    }
                }
            }
            return ev;
        }
    }

    /// Admit a new peer. The first peer creates the RootGrid and its first
    /// subGrid; later peers join the nearest subGrid when it has room and
    /// otherwise found a new subGrid that is announced to everyone else.
    inline OverlayEvents join_peer(OverlayState& s, PeerId peer, const NetworkTopology& topology, SimTime now = 0.0)
    {
        if (s.ever_joined.contains(peer))
        {
            throw Error(Errc::AlreadyJoined, "peer " + to_string(peer));
        }
        if (!topology.has_peer(peer))
        {
            throw Error(Errc::UnknownPeer, "peer " + to_string(peer) + " is not in the topology");
        }
        s.ever_joined.insert(peer);
        s.resource_views[peer];
        OverlayEvents ev{{OverlayEventKind::PeerJoined, now, peer}};

        auto append = [&ev](OverlayEvents more) { ev.insert(ev.end(), more.begin(), more.end()); };

        if (!s.root_exists)
        {
            s.root_exists = true;
            ev.push_back({OverlayEventKind::RootGridCreated, now, peer});
            append(detail::found_subgrid(s, peer, now, false));
        }
        else
        {
            auto table = compute_nearest_table(s, peer, topology);
            if (!table.empty() && s.subgrids.at(table.front().subgrid).has_room())
            {
                SubGrid& sg = s.subgrids.at(table.front().subgrid);
                sg.slaves.insert(peer);
                s.membership[peer] = sg.id;
            }
            else
            {
                append(detail::found_subgrid(s, peer, now, true));
            }
        }
        ev[0].subgrid = s.membership.at(peer);
        s.nearest_tables[peer] = compute_nearest_table(s, peer, topology);
        return ev;
    }

    /// Store `adv` at the peer and at its master. Older timestamps lose.
    inline OverlayEvents register_resources(OverlayState& s, PeerId peer, const ResourceAdvertisement& adv,
                                            SimTime now = 0.0)
    {
        detail::require_live(s, peer);
        if (adv.origin != peer)
        {
            throw Error(Errc::InvalidAdvertisement, "advertisement origin differs from registering peer");
        }
        adv.validate();
        const ViewEntry e{adv, false};
        merge_entry(s.resource_views[peer], e);
        const SubGrid& sg = s.subgrid_of(peer);
        if (sg.master != peer)
        {
            merge_entry(s.resource_views[sg.master], e);
        }
        return {{OverlayEventKind::ResourceRegistered, now, peer, sg.id, sg.master}};
    }

    /// Recompute `peer`'s nearest-subGrid table and move it to `announced` if
    /// that master is more than kMoveHysteresis better than its own and there
    /// is room. Masters never move.
    inline OverlayEvents handle_subgrid_announcement(OverlayState& s, PeerId peer, SubGridId announced,
                                                     const NetworkTopology& topology, SimTime now = 0.0)
    {
        detail::require_live(s, peer);
        const auto target_it = s.subgrids.find(announced);
        if (target_it == s.subgrids.end())
        {
            throw Error(Errc::UnknownSubGrid, "subGrid " + to_string(announced));
        }
        s.nearest_tables[peer] = compute_nearest_table(s, peer, topology);

        SubGrid& target = target_it->second;
        const SubGridId current_id = s.membership.at(peer);
        SubGrid& current = s.subgrids.at(current_id);
        if (current.master == peer || current_id == announced || !target.has_room()
            || s.failed.contains(target.master) || s.failed.contains(current.master))
        {
            return {};
        }
        const double to_current = topology.bandwidth(peer, current.master).value;
        const double to_target = topology.bandwidth(peer, target.master).value;
        if (!(to_target > (1.0 + kMoveHysteresis) * to_current))
        {
            return {};
        }

        current.slaves.erase(peer);
        target.slaves.insert(peer);
        s.membership[peer] = announced;
        OverlayEvents ev{{OverlayEventKind::PeerMoved, now, peer, announced, target.master, current_id}};

        // Bring our own advertisement to the new master.
        const ResourceView& own = s.resource_views[peer];
        if (const auto it = own.find(peer); it != own.end())
        {
            merge_entry(s.resource_views[target.master], it->second);
            ev.push_back({OverlayEventKind::ResourceRegistered, now, peer, announced, target.master});
        }
        return ev;
    }

    /// The live slave with the highest mean estimated bandwidth to the other
    /// live members; ties go to the lowest PeerId.
    inline PeerId elect_master(const OverlayState& s, SubGridId id, const NetworkTopology& topology)
    {
        const auto it = s.subgrids.find(id);
        if (it == s.subgrids.end())
        {
            throw Error(Errc::UnknownSubGrid, "subGrid " + to_string(id));
        }
        const SubGrid& sg = it->second;
        std::vector<PeerId> members;
        if (!s.failed.contains(sg.master))
        {
            members.push_back(sg.master);
        }
        std::vector<PeerId> candidates;
        for (PeerId p : sg.slaves)
        {
            if (!s.failed.contains(p))
            {
                candidates.push_back(p);
                members.push_back(p);
            }
        }
        if (candidates.empty())
        {
            throw Error(Errc::NoSlaves, "subGrid " + to_string(id));
        }

        std::optional<PeerId> best;
        double best_score = 0.0;
        for (PeerId c : candidates)
        {
            double sum = 0.0;
            std::size_t n = 0;
            for (PeerId m : members)
            {
                if (m != c)
                {
                    sum += topology.bandwidth(c, m).value;
                    ++n;
                }
            }
            const double score = n > 0 ? sum / static_cast<double>(n) : 0.0;
            if (!best || score > best_score)
            {
                best = c;
                best_score = score;
            }
        }
        return *best;
    }

    /// Take a peer out of the overlay. A failed slave leaves its subGrid at
    /// once and its master records a tombstone; a failed master stays in place
    /// until handle_master_failure() runs.
    inline OverlayEvents mark_failed(OverlayState& s, PeerId peer, SimTime now = 0.0)
    {
        if (!s.ever_joined.contains(peer))
        {
            throw Error(Errc::NotJoined, "peer " + to_string(peer));
        }
        if (s.failed.contains(peer))
        {
            throw Error(Errc::AlreadyFailed, "peer " + to_string(peer));
        }
        s.failed.insert(peer);
        s.nearest_tables.erase(peer);
        s.resource_views.erase(peer);

        const SubGridId id = s.membership.at(peer);
        SubGrid& sg = s.subgrids.at(id);
        if (sg.master == peer)
        {
            return {{OverlayEventKind::MasterFailed, now, peer, id}};
        }
        sg.slaves.erase(peer);
        s.membership.erase(peer);
        if (!s.failed.contains(sg.master))
        {
            merge_entry(s.resource_views[sg.master], tombstone(peer, now));
        }
        return {{OverlayEventKind::PeerFailed, now, peer, id, sg.master}};
    }

    /// Promote the best slave of a subGrid whose master failed, or dissolve the
    /// subGrid when no slave is left. Survivors re-register with the new master.
    inline OverlayEvents handle_master_failure(OverlayState& s, SubGridId id, const NetworkTopology& topology,
                                               SimTime now = 0.0)
    {
        const auto it = s.subgrids.find(id);
        if (it == s.subgrids.end())
        {
            throw Error(Errc::UnknownSubGrid, "subGrid " + to_string(id));
        }
        SubGrid& sg = it->second;
        const PeerId old_master = sg.master;
        if (!s.failed.contains(old_master))
        {
            throw Error(Errc::MasterNotFailed, "master of subGrid " + to_string(id) + " is live");
        }
        s.membership.erase(old_master);

        if (sg.slaves.empty())
        {
            s.subgrids.erase(it);
            detail::remove_from_tables(s, id);
            for (PeerId m : s.live_masters())
            {
                merge_entry(s.resource_views[m], tombstone(old_master, now));
            }
            return {{OverlayEventKind::SubGridDissolved, now, old_master, id}};
        }

        const PeerId elected = elect_master(s, id, topology);
        sg.slaves.erase(elected);
        sg.master = elected;
        ResourceView& view = s.resource_views[elected];
        merge_entry(view, tombstone(old_master, now));
        for (PeerId slave : sg.slaves)
        {
            const ResourceView& own = s.resource_views[slave];
            if (const auto e = own.find(slave); e != own.end())
            {
                merge_entry(view, e->second);
            }
        }
        return {{OverlayEventKind::MasterElected, now, elected, id, old_master}};
    }

    /// One dissemination round. Every live master first pushes to every other
    /// live master the entries the receiver lacks (or holds older copies of),
    /// computed against the views as they stood when the round began; each
    /// master then pushes its merged view to its slaves the same way. A round
    /// over converged views emits nothing.
    inline OverlayEvents propagate(OverlayState& s, const NetworkTopology& topology, SimTime now = 0.0)
    {
        OverlayEvents ev;
        const std::vector<PeerId> masters = s.live_masters();
        std::map<PeerId, ResourceView> snapshot;
        for (PeerId m : masters)
        {
            snapshot[m] = s.resource_views[m];
        }

        for (PeerId from : masters)
        {
            for (PeerId to : masters)
            {
                if (from == to)
                {
                    continue;
                }
                std::size_t carried = 0;
                ResourceView& dest = s.resource_views[to];
                const ResourceView& before = snapshot.at(to);
                for (const auto& [origin, entry] : snapshot.at(from))
                {
                    const auto known = before.find(origin);
                    if (known == before.end() || entry.newer_than(known->second))
                    {
                        merge_entry(dest, entry);
                        ++carried;
                    }
                }
                if (carried > 0)
                {
                    ev.push_back({OverlayEventKind::InfoPropagated, now, from, s.membership.at(from), to,
                                  std::nullopt, carried, transfer_latency(topology.link(from, to), 0.0)});
                }
            }
        }

        for (PeerId m : masters)
        {
            const SubGrid& sg = s.subgrid_of(m);
            const ResourceView& source = s.resource_views[m];
            for (PeerId slave : sg.slaves)
            {
                if (s.failed.contains(slave))
                {
                    continue;
                }
                std::size_t carried = 0;
                ResourceView& dest = s.resource_views[slave];
                for (const auto& [origin, entry] : source)
                {
                    if (merge_entry(dest, entry))
                    {
                        ++carried;
                    }
                }
                if (carried > 0)
                {
                    ev.push_back({OverlayEventKind::InfoPropagated, now, m, sg.id, slave, std::nullopt, carried,
                                  transfer_latency(topology.link(m, slave), 0.0)});
                }
            }
        }
        return ev;
    }

    /// Live advertisements known to `peer`, ordered by origin.
    inline std::vector<ResourceAdvertisement> resource_view(const OverlayState& s, PeerId peer)
    {
        detail::require_live(s, peer);
        std::vector<ResourceAdvertisement> out;
        const auto it = s.resource_views.find(peer);
        if (it == s.resource_views.end())
        {
            return out;
        }
        for (const auto& [origin, entry] : it->second)
        {
            if (!entry.removed)
            {
                out.push_back(entry.adv);
            }
        }
        return out;
    }

    /// Join and immediately deliver every resulting announcement, in recipient
    /// order. Convenience for driving the protocol without an event loop.
    inline OverlayEvents join_and_settle(OverlayState& s, PeerId peer, const NetworkTopology& topology,
                                         SimTime now = 0.0)
    {
        OverlayEvents ev = join_peer(s, peer, topology, now);
        const std::size_t n = ev.size();
        for (std::size_t i = 0; i < n; ++i)
        {
            if (ev[i].kind == OverlayEventKind::SubGridAnnounced)
            {
                auto more = handle_subgrid_announcement(s, ev[i].peer, ev[i].subgrid, topology, now);
                ev.insert(ev.end(), more.begin(), more.end());
            }
        }
        return ev;
    }

    /// Mark a peer failed and, if it was a master, run failover.
    inline OverlayEvents fail_peer(OverlayState& s, PeerId peer, const NetworkTopology& topology, SimTime now = 0.0)
    {
        OverlayEvents ev = mark_failed(s, peer, now);
        if (ev.front().kind == OverlayEventKind::MasterFailed)
        {
            auto more = handle_master_failure(s, ev.front().subgrid, topology, now);
            ev.insert(ev.end(), more.begin(), more.end());
        }
        return ev;
    }

    /// Structural invariants of the overlay; returns one message per breach.
    inline std::vector<std::string> check_invariants(const OverlayState& s)
    {
        std::vector<std::string> bad;
        for (const auto& [id, sg] : s.subgrids)
        {
            const std::string where = "subGrid " + to_string(id) + ": ";
            if (sg.id != id)
            {
                bad.push_back(where + "id mismatch");
            }
            if (s.failed.contains(sg.master))
            {
                bad.push_back(where + "master " + to_string(sg.master) + " has failed");
            }
            if (sg.slaves.contains(sg.master))
            {
                bad.push_back(where + "master is also a slave");
            }
            if (sg.size() > s.lim)
            {
                bad.push_back(where + "size " + std::to_string(sg.size()) + " exceeds lim");
            }
            auto check_member = [&](PeerId p) {
                const auto m = s.membership.find(p);
                if (m == s.membership.end() || m->second != id)
                {
                    bad.push_back(where + "member " + to_string(p) + " not mapped back");
                }
                if (s.failed.contains(p))
                {
                    bad.push_back(where + "member " + to_string(p) + " has failed");
                }
            };
            check_member(sg.master);
            for (PeerId p : sg.slaves)
            {
                check_member(p);
            }
        }
        for (const auto& [p, id] : s.membership)
        {
            const auto sg = s.subgrids.find(id);
            if (sg == s.subgrids.end() || (sg->second.master != p && !sg->second.slaves.contains(p)))
            {
                bad.push_back("peer " + to_string(p) + " mapped to subGrid " + to_string(id) + " but not in it");
            }
        }
        for (PeerId p : s.live_peers())
        {
            if (!s.membership.contains(p))
            {
                bad.push_back("live peer " + to_string(p) + " belongs to no subGrid");
            }
        }
        if (!s.ever_joined.empty() && !s.root_exists)
        {
            bad.push_back("peers joined but no RootGrid");
        }
        return bad;
    }

    /// Current partition of live peers, one member list per subGrid (master first).
    inline std::vector<std::vector<PeerId>> partition_of(const OverlayState& s)
    {
        std::vector<std::vector<PeerId>> out;
        for (const auto& [id, sg] : s.subgrids)
        {
            std::vector<PeerId> group{sg.master};
            group.insert(group.end(), sg.slaves.begin(), sg.slaves.end());
            out.push_back(std::move(group));
        }
        return out;
    }
}
