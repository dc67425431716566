#include "../fixtures.hpp"

#include <gridos/discovery.hpp>
#include <gridos/random.hpp>

#include <gtest/gtest.h>

#include <algorithm>

using namespace gridos;
using gridos::testing::ids;

namespace
{
    ResourceAdvertisement advert(PeerId p, SimTime at, double cpu = 4.0)
    {
        ResourceAdvertisement a;
        a.origin = p;
        a.cpu_capacity = 4.0;
        a.cpu_available = cpu;
        a.mem_total = 8e9;
        a.mem_available = 8e9;
        a.storage_available = 1e11;
        a.share_limits = SharingPolicy::open(p, 8e9, 1e11);
        a.timestamp = at;
        return a;
    }

    std::size_t count(const OverlayEvents& ev, OverlayEventKind k)
    {
        return static_cast<std::size_t>(std::count_if(ev.begin(), ev.end(), [k](const auto& e) { return e.kind == k; }));
    }

    // Uniform links except the ones overridden by `fast`.
    NetworkTopology flat_topology(std::uint64_t n, double rtt = 0.1)
    {
        NetworkTopology t;
        for (std::uint64_t a = 1; a <= n; ++a)
        {
            for (std::uint64_t b = a + 1; b <= n; ++b)
            {
                t.set_link(PeerId{a}, PeerId{b}, LinkMetrics::make(rtt, 0.01));
            }
        }
        return t;
    }

    bool views_converged(const OverlayState& s)
    {
        const auto live = s.live_peers();
        for (PeerId p : live)
        {
            if (resource_view(s, p) != resource_view(s, live.front()))
            {
                return false;
            }
        }
        return true;
    }
}

TEST(Join, FirstPeerCreatesRootAndFirstSubGrid)
{
    OverlayState s(3);
    const auto t = flat_topology(4);
    const auto ev = join_peer(s, PeerId{1}, t);
    ASSERT_EQ(ev.size(), 3u);
    EXPECT_EQ(ev[0].kind, OverlayEventKind::PeerJoined);
    EXPECT_EQ(ev[1].kind, OverlayEventKind::RootGridCreated);
    EXPECT_EQ(ev[2].kind, OverlayEventKind::SubGridCreated);
    EXPECT_TRUE(s.root_exists);
    EXPECT_TRUE(s.is_master(PeerId{1}));
    EXPECT_EQ(s.subgrid_of(PeerId{1}).id, SubGridId{1});
}

TEST(Join, FullSubGridForcesNewSubGridAndAnnouncement)
{
    OverlayState s(2);
    const auto t = flat_topology(4);
    join_peer(s, PeerId{1}, t);
    const auto second = join_peer(s, PeerId{2}, t);
    EXPECT_EQ(count(second, OverlayEventKind::SubGridCreated), 0u);
    EXPECT_EQ(s.subgrid_of(PeerId{2}).id, SubGridId{1});

    const auto third = join_peer(s, PeerId{3}, t);
    EXPECT_EQ(count(third, OverlayEventKind::SubGridCreated), 1u);
    EXPECT_EQ(count(third, OverlayEventKind::SubGridAnnounced), 2u);
    EXPECT_TRUE(s.is_master(PeerId{3}));
    EXPECT_EQ(s.subgrids.size(), 2u);
}

TEST(Join, PicksSubGridWithBestBandwidthToItsMaster)
{
    OverlayState s(1);
    auto t = flat_topology(4);
    join_peer(s, PeerId{1}, t);
    join_and_settle(s, PeerId{2}, t);
    s.lim = 8;
    for (auto& [id, sg] : s.subgrids)
    {
        sg.lim = 8;
    }
    t.set_link(PeerId{3}, PeerId{2}, LinkMetrics::make(0.02, 0.01));
    join_peer(s, PeerId{3}, t);
    EXPECT_EQ(s.subgrid_of(PeerId{3}).master, PeerId{2});
    EXPECT_EQ(find_nearest_subgrid(s, PeerId{3}, t), s.membership.at(PeerId{3}));
}

TEST(Join, RejectsDuplicateAndUnknownPeers)
{
    OverlayState s;
    const auto t = flat_topology(2);
    join_peer(s, PeerId{1}, t);
    try
    {
        join_peer(s, PeerId{1}, t);
        FAIL();
    }
    catch (const Error& e)
    {
        EXPECT_EQ(e.code(), Errc::AlreadyJoined);
    }
    try
    {
        join_peer(s, PeerId{9}, t);
        FAIL();
    }
    catch (const Error& e)
    {
        EXPECT_EQ(e.code(), Errc::UnknownPeer);
    }
}

TEST(Announcement, MovesOnlyPastHysteresis)
{
    OverlayState s(8);
    NetworkTopology t = flat_topology(4, 0.1);
    join_peer(s, PeerId{1}, t);
    join_peer(s, PeerId{2}, t);
    s.subgrids.at(SubGridId{1}).lim = 2;
    s.lim = 2;
    join_peer(s, PeerId{3}, t);
    ASSERT_TRUE(s.is_master(PeerId{3}));
    s.lim = 8;
    for (auto& [id, sg] : s.subgrids)
    {
        sg.lim = 8;
    }

    // 5% better: stays.
    t.set_link(PeerId{2}, PeerId{3}, LinkMetrics::make(0.1 / 1.05, 0.01));
    EXPECT_TRUE(handle_subgrid_announcement(s, PeerId{2}, SubGridId{2}, t).empty());
    EXPECT_EQ(s.membership.at(PeerId{2}), SubGridId{1});

    // 20% better: moves.
    t.set_link(PeerId{2}, PeerId{3}, LinkMetrics::make(0.1 / 1.2, 0.01));
    const auto ev = handle_subgrid_announcement(s, PeerId{2}, SubGridId{2}, t);
    ASSERT_EQ(count(ev, OverlayEventKind::PeerMoved), 1u);
    EXPECT_EQ(ev.front().from, SubGridId{1});
    EXPECT_EQ(s.membership.at(PeerId{2}), SubGridId{2});

    // Masters never move.
    t.set_link(PeerId{1}, PeerId{3}, LinkMetrics::make(0.001, 0.01));
    EXPECT_TRUE(handle_subgrid_announcement(s, PeerId{1}, SubGridId{2}, t).empty());
    EXPECT_TRUE(s.is_master(PeerId{1}));
    EXPECT_TRUE(check_invariants(s).empty());
}

TEST(Announcement, UnknownSubGridThrows)
{
    OverlayState s;
    const auto t = flat_topology(2);
    join_peer(s, PeerId{1}, t);
    join_peer(s, PeerId{2}, t);
    EXPECT_THROW(handle_subgrid_announcement(s, PeerId{2}, SubGridId{42}, t), Error);
}

TEST(Election, HighestMeanBandwidthWinsTiesToLowestId)
{
    OverlayState s(8);
    NetworkTopology t = flat_topology(4, 0.1);
    for (std::uint64_t p = 1; p <= 4; ++p)
    {
        join_peer(s, PeerId{p}, t);
    }
    mark_failed(s, PeerId{1});
    EXPECT_EQ(elect_master(s, SubGridId{1}, t), PeerId{2});

    t.set_link(PeerId{4}, PeerId{2}, LinkMetrics::make(0.05, 0.01));
    t.set_link(PeerId{4}, PeerId{3}, LinkMetrics::make(0.05, 0.01));
    EXPECT_EQ(elect_master(s, SubGridId{1}, t), PeerId{4});
}

TEST(Failure, SlaveFailureLeavesTombstoneAtMaster)
{
    OverlayState s(8);
    const auto t = flat_topology(3);
    for (std::uint64_t p = 1; p <= 3; ++p)
    {
        join_peer(s, PeerId{p}, t);
        register_resources(s, PeerId{p}, advert(PeerId{p}, 0.0));
    }
    propagate(s, t);
    const auto ev = fail_peer(s, PeerId{3}, t, 5.0);
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(ev[0].kind, OverlayEventKind::PeerFailed);
    EXPECT_TRUE(s.resource_views.at(PeerId{1}).at(PeerId{3}).removed);
    propagate(s, t);
    EXPECT_EQ(resource_view(s, PeerId{2}).size(), 2u);
}

TEST(Failure, MasterFailureElectsAndRebuildsView)
{
    OverlayState s(8);
    const auto t = flat_topology(4);
    for (std::uint64_t p = 1; p <= 4; ++p)
    {
        join_peer(s, PeerId{p}, t);
        register_resources(s, PeerId{p}, advert(PeerId{p}, 0.0));
    }
    const PeerId expected = [&] {
        OverlayState copy = s;
        mark_failed(copy, PeerId{1});
        return elect_master(copy, SubGridId{1}, t);
    }();
    const auto ev = fail_peer(s, PeerId{1}, t, 3.0);
    ASSERT_EQ(count(ev, OverlayEventKind::MasterFailed), 1u);
    ASSERT_EQ(count(ev, OverlayEventKind::MasterElected), 1u);
    EXPECT_EQ(ev.back().peer, expected);
    EXPECT_TRUE(s.is_master(expected));
    const auto& view = s.resource_views.at(expected);
    EXPECT_TRUE(view.at(PeerId{1}).removed);
    for (std::uint64_t p = 2; p <= 4; ++p)
    {
        EXPECT_FALSE(view.at(PeerId{p}).removed);
    }
    EXPECT_TRUE(check_invariants(s).empty());
}

TEST(Failure, LoneMasterDissolvesSubGrid)
{
    OverlayState s(1);
    const auto t = flat_topology(3);
    for (std::uint64_t p = 1; p <= 3; ++p)
    {
        join_and_settle(s, PeerId{p}, t);
    }
    ASSERT_EQ(s.subgrids.size(), 3u);
    const auto ev = fail_peer(s, PeerId{2}, t, 1.0);
    EXPECT_EQ(count(ev, OverlayEventKind::SubGridDissolved), 1u);
    EXPECT_EQ(s.subgrids.size(), 2u);
    EXPECT_TRUE(s.resource_views.at(PeerId{1}).at(PeerId{2}).removed);
    for (const auto& [p, table] : s.nearest_tables)
    {
        for (const auto& e : table)
        {
            EXPECT_NE(e.subgrid, SubGridId{2});
        }
    }
    try
    {
        fail_peer(s, PeerId{2}, t);
        FAIL();
    }
    catch (const Error& e)
    {
        EXPECT_EQ(e.code(), Errc::AlreadyFailed);
    }
}

TEST(Merge, LastWriterWinsAndTombstoneWinsTies)
{
    ResourceView v;
    EXPECT_TRUE(merge_entry(v, {advert(PeerId{1}, 2.0, 1.0), false}));
    EXPECT_FALSE(merge_entry(v, {advert(PeerId{1}, 1.0, 3.0), false}));
    EXPECT_EQ(v.at(PeerId{1}).adv.cpu_available, 1.0);
    EXPECT_TRUE(merge_entry(v, tombstone(PeerId{1}, 2.0)));
    EXPECT_TRUE(v.at(PeerId{1}).removed);
    EXPECT_FALSE(merge_entry(v, {advert(PeerId{1}, 2.0, 2.0), false}));
    EXPECT_TRUE(merge_entry(v, {advert(PeerId{1}, 3.0, 2.0), false}));
    EXPECT_FALSE(v.at(PeerId{1}).removed);
}

TEST(Propagation, ConvergesAndThenFallsSilent)
{
    OverlayState s(3);
    const auto t = generate_topology({12}, 8);
    for (std::uint64_t p = 1; p <= 12; ++p)
    {
        join_and_settle(s, PeerId{p}, t, 0.0);
        register_resources(s, PeerId{p}, advert(PeerId{p}, 0.0));
    }
    ASSERT_GE(s.subgrids.size(), 4u);
    std::size_t rounds = 0;
    while (!views_converged(s))
    {
        ASSERT_LT(++rounds, 10u);
        const auto ev = propagate(s, t, static_cast<double>(rounds));
        for (const auto& e : ev)
        {
            EXPECT_EQ(e.kind, OverlayEventKind::InfoPropagated);
            EXPECT_GT(e.count, 0u);
            EXPECT_DOUBLE_EQ(e.latency, t.link(e.peer, *e.other).rtt / 2.0);
        }
    }
    EXPECT_EQ(resource_view(s, PeerId{1}).size(), 12u);
    EXPECT_TRUE(propagate(s, t).empty());
}

TEST(Property, MembershipInvariantsOnRandomTraces)
{
    for (std::uint64_t seed = 1; seed <= 100; ++seed)
    {
        Rng rng(seed);
        const std::uint64_t n = 5 + uniform_below(rng, 20);
        const auto t = generate_topology({n}, seed);
        OverlayState s(1 + uniform_below(rng, 5));
        std::vector<PeerId> pending;
        for (std::uint64_t p = 1; p <= n; ++p)
        {
            pending.push_back(PeerId{p});
        }
        shuffle(std::span<PeerId>(pending), rng);
        std::vector<std::pair<PeerId, SubGridId>> inbox;
        while (!pending.empty() || !inbox.empty())
        {
            const auto roll = uniform_below(rng, 10);
            if (roll < 5 && !pending.empty())
            {
                for (const auto& e : join_peer(s, pending.back(), t))
                {
                    if (e.kind == OverlayEventKind::SubGridAnnounced)
                    {
                        inbox.emplace_back(e.peer, e.subgrid);
                    }
                }
                pending.pop_back();
            }
            else if (roll < 8 && !inbox.empty())
            {
                const auto i = uniform_below(rng, inbox.size());
                const auto [p, sg] = inbox[i];
                inbox.erase(inbox.begin() + static_cast<std::ptrdiff_t>(i));
                if (s.is_live(p) && s.subgrids.contains(sg))
                {
                    handle_subgrid_announcement(s, p, sg, t);
                }
            }
            else if (roll == 9)
            {
                const auto live = s.live_peers();
                if (live.size() > 1)
                {
                    fail_peer(s, live[uniform_below(rng, live.size())], t);
                }
            }
            const auto bad = check_invariants(s);
            ASSERT_TRUE(bad.empty()) << "seed " << seed << ": " << bad.front();
        }
    }
}

TEST(Property, MovesStrictlyImproveBandwidthToMaster)
{
    for (std::uint64_t seed = 1; seed <= 30; ++seed)
    {
        const auto t = generate_topology({40}, seed);
        OverlayState s(4);
        for (std::uint64_t p = 1; p <= 40; ++p)
        {
            for (const auto& e : join_and_settle(s, PeerId{p}, t))
            {
                if (e.kind == OverlayEventKind::PeerMoved)
                {
                    const PeerId old_master = s.subgrids.at(*e.from).master;
                    EXPECT_GT(t.bandwidth(e.peer, *e.other).value,
                              1.10 * t.bandwidth(e.peer, old_master).value);
                }
            }
        }
        EXPECT_TRUE(check_invariants(s).empty());
    }
}
