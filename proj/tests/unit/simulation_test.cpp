#include <gridos/emit.hpp>
#include <gridos/metrics.hpp>
#include <gridos/simulation.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace gridos;

namespace
{
    Scenario base(std::size_t peers = 6, std::size_t lim = 2)
    {
        Scenario s;
        s.seed = 4;
        s.lim = lim;
        s.generate = TopologyGenSpec{peers};
        s.baseline_trials = 10;
        return s;
    }

    // Peer 1 is too busy to run anything itself.
    Scenario offload(ViolationResponse response, double usage_cpu)
    {
        Scenario s = base(3, 8);
        for (std::uint64_t p = 1; p <= 3; ++p)
        {
            PeerSpec ps;
            ps.id = PeerId{p};
            ps.join_at = 0.1 * static_cast<double>(p - 1);
            SharingPolicy pol = SharingPolicy::open(ps.id, ps.mem_total, ps.storage_available);
            pol.cpu_quota = 0.5;
            pol.on_violation = response;
            ps.policy = pol;
            if (p == 1)
            {
                ps.cpu_available = 0.5;
                ps.load = 0.9;
            }
            s.peers.push_back(ps);
        }
        JobSpec j;
        j.id = JobId{1};
        j.submitter = PeerId{1};
        j.submit_at = 5.0;
        j.task.rounds = 40;
        j.task.state_bytes = 20000;
        j.task.call_cost = 0.05;
        j.requirements = {1.0, 1e6, 0, 20000};
        j.usage = ResourceUsage{usage_cpu, 1e3, 0};
        s.jobs.push_back(j);
        return s;
    }

    std::vector<const TraceRecord*> of_kind(const Trace& t, std::string_view kind)
    {
        std::vector<const TraceRecord*> out;
        for (const auto& r : t.records())
        {
            if (r.kind == kind)
            {
                out.push_back(&r);
            }
        }
        return out;
    }
}

TEST(Simulation, FormsOverlayAndReplaysMetrics)
{
    const auto r = run_scenario(base(12, 3));
    EXPECT_TRUE(r.invariant_violations.empty());
    EXPECT_EQ(r.metrics.peers_joined, 12u);
    EXPECT_GE(r.metrics.subgrids, 4u);
    EXPECT_GT(r.metrics.info_messages, 0u);
    EXPECT_EQ(r.trace.records().back().kind, "RunFinished");
    EXPECT_EQ(metrics_from_trace(r.trace), r.metrics);
    EXPECT_EQ(partition_from_trace(r.trace), r.partition);

    const auto rounds = of_kind(r.trace, "PropagationRound");
    ASSERT_FALSE(rounds.empty());
    EXPECT_EQ(rounds.back()->data.at("messages").get<std::size_t>(), 0u);
}

TEST(Simulation, TraceTimesNeverDecrease)
{
    const auto r = run_scenario(offload(ViolationResponse::Throttle, 0.1));
    for (std::size_t i = 1; i < r.trace.size(); ++i)
    {
        ASSERT_LE(r.trace.records()[i - 1].time, r.trace.records()[i].time);
        ASSERT_EQ(r.trace.records()[i].seq, i);
    }
}

TEST(Simulation, MessagesArriveNoSoonerThanLinkLatency)
{
    const Scenario s = offload(ViolationResponse::Throttle, 0.1);
    const auto r = run_scenario(s);
    const auto topo = s.build_topology(s.seed);
    for (const auto* c : of_kind(r.trace, "CallForwarded"))
    {
        const PeerId a{c->data.at("from").get<std::uint64_t>()};
        const PeerId b{c->data.at("to").get<std::uint64_t>()};
        const double bytes = c->data.at("bytes").get<double>();
        EXPECT_GE(c->data.at("deliver_at").get<double>(), c->time + transfer_latency(topo.link(a, b), bytes) - 1e-12);
    }
    for (const auto* m : of_kind(r.trace, "MigrationStarted"))
    {
        const PeerId a{m->data.at("from").get<std::uint64_t>()};
        const PeerId b{m->data.at("to").get<std::uint64_t>()};
        EXPECT_DOUBLE_EQ(m->data.at("arrive_at").get<double>(),
                         m->time + transfer_latency(topo.link(a, b), m->data.at("bytes").get<double>()));
    }
}

TEST(Simulation, BusySubmitterOffloadsJob)
{
    const auto r = run_scenario(offload(ViolationResponse::Throttle, 0.1));
    const auto sched = of_kind(r.trace, "JobScheduled");
    ASSERT_EQ(sched.size(), 1u);
    EXPECT_NE(sched[0]->data.at("chosen").get<std::uint64_t>(), 1u);
    EXPECT_EQ(r.metrics.migrations_started, 4u);
    EXPECT_EQ(r.metrics.migrations_committed, 4u);
    EXPECT_EQ(r.metrics.jobs_completed, 1u);
    EXPECT_EQ(r.metrics.violations, 0u);
    EXPECT_GT(r.metrics.mean_response_time, 0.0);
    EXPECT_EQ(metrics_from_trace(r.trace), r.metrics);
}

TEST(Simulation, OverQuotaThreadsAreThrottled)
{
    // Four threads at 0.6 cores each against a 2-core quota.
    const auto r = run_scenario(offload(ViolationResponse::Throttle, 0.6));
    EXPECT_GT(r.metrics.violations, 0u);
    EXPECT_GT(r.trace.count("ThreadBlocked"), 0u);
    EXPECT_EQ(r.trace.count("ThreadBlocked"), r.trace.count("ThreadResumed"));
    EXPECT_EQ(r.trace.count("ThreadKilled"), 0u);
    EXPECT_EQ(r.metrics.jobs_completed, 1u);
    EXPECT_EQ(metrics_from_trace(r.trace), r.metrics);
}

TEST(Simulation, OverQuotaThreadsAreTerminated)
{
    const auto r = run_scenario(offload(ViolationResponse::Terminate, 0.6));
    EXPECT_GT(r.trace.count("ThreadKilled"), 0u);
    EXPECT_EQ(r.trace.count("ThreadKilled"), r.trace.count("OriginNotified"));
    EXPECT_EQ(r.metrics.jobs_completed, 0u);
    EXPECT_TRUE(r.invariant_violations.empty());
}

TEST(Simulation, MonitorsReplayToLiveAccounting)
{
    Simulation sim(offload(ViolationResponse::Throttle, 0.6));
    sim.run();
    std::size_t records = 0;
    for (const auto& [node, m] : sim.monitors())
    {
        EXPECT_EQ(replay(m.log()), m.live()) << "node " << node.value;
        records += m.log().size();
    }
    EXPECT_GT(records, 0u);
}

TEST(Simulation, UnplaceableJobIsRejected)
{
    Scenario s = offload(ViolationResponse::Throttle, 0.1);
    s.jobs[0].requirements.min_cpu = 64;
    const auto r = run_scenario(s);
    EXPECT_EQ(r.metrics.jobs_rejected, 1u);
    EXPECT_EQ(r.metrics.broker_decisions, 0u);
    EXPECT_EQ(metrics_from_trace(r.trace), r.metrics);
}

TEST(Simulation, MasterFailureElectsBeforeNextRoundCompletes)
{
    Scenario s = base(9, 3);
    std::optional<PeerId> victim;
    {
        Simulation probe(s);
        probe.run();
        for (const auto& [id, sg] : probe.overlay().subgrids)
        {
            if (!sg.slaves.empty())
            {
                victim = sg.master;
                break;
            }
        }
    }
    ASSERT_TRUE(victim.has_value());
    s.failures.push_back({*victim, 5.0});
    Simulation sim(s);
    const auto r = sim.run();
    bool failed = false;
    bool elected = false;
    for (const auto& rec : r.trace.records())
    {
        if (rec.kind == "MasterFailed")
        {
            failed = true;
        }
        if (failed && rec.kind == "MasterElected")
        {
            elected = true;
        }
        if (failed && rec.kind == "PropagationRound")
        {
            break;
        }
    }
    EXPECT_TRUE(failed);
    EXPECT_TRUE(elected);
    EXPECT_TRUE(r.invariant_violations.empty());
    EXPECT_EQ(metrics_from_trace(r.trace), r.metrics);
}

TEST(Simulation, BadFailuresAreRecordedNotFatal)
{
    Scenario s = base(4, 8);
    s.failures.push_back({PeerId{3}, 0.0}); // before it joins
    s.failures.push_back({PeerId{2}, 5.0});
    s.failures.push_back({PeerId{2}, 6.0}); // twice
    const auto r = run_scenario(s);
    const auto errors = of_kind(r.trace, "Error");
    ASSERT_EQ(errors.size(), 2u);
    EXPECT_EQ(errors[0]->data.at("code"), "NotJoined");
    EXPECT_EQ(errors[1]->data.at("code"), "AlreadyFailed");
    EXPECT_EQ(r.metrics.peers_failed, 1u);
}

TEST(Simulation, DeterministicPerSeed)
{
    Scenario s = offload(ViolationResponse::Throttle, 0.6);
    s.failures.push_back({PeerId{3}, 7.0});
    EXPECT_EQ(run_scenario(s).trace.to_ndjson(), run_scenario(s).trace.to_ndjson());
    const Scenario g = base(10, 3);
    SimOptions other;
    other.seed = 99;
    EXPECT_NE(run_scenario(g).trace.to_ndjson(), run_scenario(g, other).trace.to_ndjson());
}

TEST(Simulation, SerializedTraceReplaysToSameMetrics)
{
    Scenario s = offload(ViolationResponse::Throttle, 0.6);
    s.failures.push_back({PeerId{2}, 9.0});
    const auto r = run_scenario(s);
    const Trace back = Trace::from_ndjson(r.trace.to_ndjson());
    EXPECT_EQ(back.to_ndjson(), r.trace.to_ndjson());
    EXPECT_EQ(metrics_from_trace(back), r.metrics);
}

TEST(Trace, RejectsBackwardsTimeAndGaps)
{
    Trace t;
    t.append(1.0, "A");
    EXPECT_THROW(t.append(0.5, "B"), Error);
    EXPECT_THROW(Trace::from_ndjson("{\"seq\":1,\"t\":0,\"kind\":\"A\"}\n"), Error);
    EXPECT_THROW(Trace::from_ndjson("{\"seq\":0,\n"), Error);
}

TEST(EventQueue, OrdersByTimeThenInsertion)
{
    EventQueue q;
    std::vector<int> order;
    q.schedule(2.0, [&] { order.push_back(3); });
    q.schedule(1.0, [&] { order.push_back(1); });
    q.schedule(1.0, [&] { order.push_back(2); });
    q.run();
    EXPECT_EQ(order, (std::vector<int>{1, 2, 3}));
    EXPECT_THROW(q.schedule(1.0, [] {}), Error);
}

TEST(Emit, WritesRequestedFiles)
{
    const auto dir = std::filesystem::temp_directory_path() / "gridos_emit_test";
    std::filesystem::remove_all(dir);
    const auto r = run_scenario(base(5, 2));
    emit_run(r, dir, parse_formats("trace,metrics,summary"));
    std::ifstream csv(dir / "metrics.csv");
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, kMetricsCsvHeader);
    std::ifstream trace(dir / "trace.ndjson");
    EXPECT_EQ(metrics_from_trace(Trace::read_ndjson(trace)), r.metrics);
    EXPECT_TRUE(std::filesystem::exists(dir / "summary.txt"));
    EXPECT_THROW(parse_formats("trace,pdf"), Error);
    std::filesystem::remove_all(dir);
}
