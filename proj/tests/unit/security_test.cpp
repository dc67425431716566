#include <gridos/random.hpp>
#include <gridos/security.hpp>

#include <gtest/gtest.h>

#include <map>

using namespace gridos;

namespace
{
    SharingPolicy policy(double quota, double mem_cap, double storage_cap,
                         ViolationResponse r = ViolationResponse::Throttle)
    {
        SharingPolicy p;
        p.owner = PeerId{1};
        p.cpu_quota = quota;
        p.mem_cap = mem_cap;
        p.storage_cap = storage_cap;
        p.on_violation = r;
        return p;
    }

    GridThreadId thread(std::uint64_t n) { return {PeerId{2}, 0.0, n}; }
}

TEST(Admission, ClosedBoundOnRemainingQuota)
{
    const auto p = policy(0.5, 4e9, 1e10); // 2 of 4 cores
    EXPECT_TRUE(check_admission({2.0, 4e9, 1e10}, p, {4.0, {}, 0.0}).admitted());
    EXPECT_EQ(check_admission({2.0001, 0, 0}, p, {4.0, {}, 0.0}).denied, DenyReason::CpuQuota);
    EXPECT_EQ(check_admission({1.0, 0, 0}, p, {4.0, {1.5, 0, 0}, 0.0}).denied, DenyReason::CpuQuota);
    EXPECT_EQ(check_admission({0, 3e9, 0}, p, {4.0, {0, 2e9, 0}, 0.0}).denied, DenyReason::MemCap);
    EXPECT_EQ(check_admission({0, 0, 2e10}, p, {4.0, {}, 0.0}).denied, DenyReason::StorageCap);
}

TEST(Admission, IdleOnlyHostsRefuseWhenBusy)
{
    auto p = policy(1.0, 4e9, 1e10);
    p.idle_only = true;
    EXPECT_EQ(check_admission({0.1, 0, 0}, p, {4.0, {}, 0.2}).denied, DenyReason::NotIdle);
    EXPECT_TRUE(check_admission({0.1, 0, 0}, p, {4.0, {}, 0.0}).admitted());
}

TEST(Admission, NeverExceedsRemainingQuota)
{
    Rng rng(3);
    for (int i = 0; i < 5000; ++i)
    {
        const auto p = policy(uniform01(rng), uniform_real(rng, 0, 8e9), uniform_real(rng, 0, 1e11));
        const HostUsage host{4.0, {uniform_real(rng, 0, 3), uniform_real(rng, 0, 4e9), 0}, 0.0};
        const JobRequirements req{uniform_real(rng, 0, 3), uniform_real(rng, 0, 6e9), uniform_real(rng, 0, 1e11)};
        if (check_admission(req, p, host).admitted())
        {
            const auto limit = p.limits(4.0);
            EXPECT_LE(req.min_cpu, limit.cpu - host.foreign.cpu);
            EXPECT_LE(req.min_mem, limit.mem - host.foreign.mem);
            EXPECT_LE(req.min_storage, limit.storage - host.foreign.storage);
        }
    }
}

TEST(Policy, ValidationBounds)
{
    EXPECT_THROW(policy(1.5, 1, 1).validate(10, 10), Error);
    EXPECT_THROW(policy(0.5, 11, 1).validate(10, 10), Error);
    EXPECT_THROW(policy(0.5, 1, -1).validate(10, 10), Error);
    EXPECT_NO_THROW(policy(0.5, 10, 10).validate(10, 10));
}

TEST(Monitor, ViolationOnlyOnOffendingAxisAndOncePerTick)
{
    UsageMonitor m(PeerId{1}, policy(0.5, 100, 100), 4.0);
    EXPECT_TRUE(m.record_usage(thread(1), {1.5, 50, 0}, 1.0).empty());
    const auto v = m.record_usage(thread(2), {1.0, 10, 0}, 1.0);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].axis, Axis::Cpu);
    EXPECT_EQ(v[0].thread, thread(2));
    EXPECT_DOUBLE_EQ(v[0].observed, 2.5);
    EXPECT_DOUBLE_EQ(v[0].limit, 2.0);
    EXPECT_TRUE(m.record_usage(thread(2), {0.5, 0, 0}, 1.0).empty());
    EXPECT_EQ(m.record_usage(thread(2), {0.5, 0, 0}, 2.0).size(), 0u);
    EXPECT_EQ(m.live().violations.at(Axis::Cpu), 1u);
}

TEST(Monitor, ExactlyAtLimitIsNotAViolation)
{
    UsageMonitor m(PeerId{1}, policy(0.5, 100, 100), 4.0);
    EXPECT_TRUE(m.record_usage(thread(1), {2.0, 100, 100}, 0.0).empty());
}

TEST(Monitor, FuzzedStreamsAgreeWithDirectCount)
{
    Rng rng(19);
    for (int trial = 0; trial < 200; ++trial)
    {
        const auto p = policy(uniform01(rng), uniform_real(rng, 1, 100), uniform_real(rng, 1, 100));
        UsageMonitor m(PeerId{1}, p, 4.0);
        const auto limit = p.limits(4.0);
        std::map<Axis, std::size_t> expected;
        for (int tick = 0; tick < 30; ++tick)
        {
            const ResourceUsage u{uniform_real(rng, 0, 2 * limit.cpu), uniform_real(rng, 0, 2 * limit.mem),
                                  uniform_real(rng, 0, 2 * limit.storage)};
            const auto v = m.record_usage(thread(1), u, tick);
            std::size_t over = 0;
            for (Axis a : kAllAxes)
            {
                if (axis_value(u, a) > axis_value(limit, a))
                {
                    ++expected[a];
                    ++over;
                }
            }
            ASSERT_EQ(v.size(), over);
        }
        EXPECT_EQ(replay(m.log()), m.live());
        for (const auto& [axis, n] : expected)
        {
            EXPECT_EQ(m.live().violations.at(axis), n);
        }
    }
}

TEST(Enforcement, ThrottleBlocksForOneTickTerminateKills)
{
    const ViolationEvent v{PeerId{1}, thread(4), Axis::Mem, 3.0, 2.0, 1.0};
    const auto t = enforce(v, policy(1, 1, 1, ViolationResponse::Throttle), 0.5);
    ASSERT_EQ(t.size(), 2u);
    EXPECT_EQ(t[0], (EnforcementAction{EnforcementKind::ThreadBlocked, thread(4), 3.0}));
    EXPECT_EQ(t[1], (EnforcementAction{EnforcementKind::ThreadResumed, thread(4), 3.5}));
    const auto k = enforce(v, policy(1, 1, 1, ViolationResponse::Terminate), 0.5);
    ASSERT_EQ(k.size(), 2u);
    EXPECT_EQ(k[0].kind, EnforcementKind::ThreadKilled);
    EXPECT_EQ(k[1].kind, EnforcementKind::OriginNotified);
}

TEST(ProtectedRegion, OnlyTheOwnerGetsIn)
{
    ProtectedRegion r(thread(1), PeerId{1}, Bytes{1, 2, 3});
    UsageMonitor audit(PeerId{1}, policy(1, 1, 1), 1.0);
    const auto own = access_protected(JobAccessor{thread(1)}, r, &audit, 0.0);
    ASSERT_TRUE(own.granted());
    EXPECT_EQ(*own.data, (Bytes{1, 2, 3}));
    EXPECT_FALSE(access_protected(JobAccessor{thread(2)}, r, &audit, 1.0).granted());
    EXPECT_FALSE(access_protected(HostLocal{PeerId{1}}, r, &audit, 2.0).granted());
    EXPECT_EQ(audit.live().denials, 2u);
    EXPECT_EQ(replay(audit.log()), audit.live());
    EXPECT_EQ(r.size(), 3u);
    EXPECT_EQ(r.owner_job(), thread(1));
}
