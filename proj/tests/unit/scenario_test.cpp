#include <gridos/scenario.hpp>

#include <gtest/gtest.h>

using namespace gridos;

namespace
{
    const char* kExplicit = R"({
      "format": "gridos-scenario", "version": 1, "name": "three", "seed": 9, "lim": 2,
      "topology": {"links": [
        {"a": 1, "b": 2, "rtt": 0.05, "loss": 0.01},
        {"a": 1, "b": 3, "rtt": 0.08, "loss": 0.02, "mss": 9000},
        {"a": 2, "b": 3, "rtt": 0.02, "loss": 0.001}]},
      "peers": [
        {"id": 1, "join_at": 0},
        {"id": 2, "join_at": 0.5, "cpu_capacity": 8, "policy": {"cpu_quota": 0.5, "on_violation": "terminate"}},
        {"id": 3, "join_at": 1.0, "load": 0.3}],
      "jobs": [{"id": 1, "submitter": 1, "submit_at": 4,
                "task": {"workload": "fork_join_sum", "threads": 3, "rounds": 2},
                "requirements": {"min_cpu": 1, "data_size": 4096},
                "usage": {"cpu": 0.5}}],
      "failures": [{"peer": 3, "at": 10}]
    })";

    Errc code_of(const std::string& text)
    {
        try
        {
            load_scenario_text(text);
        }
        catch (const Error& e)
        {
            return e.code();
        }
        return Errc::IoError;
    }

    std::string with(const std::string& key, const std::string& value)
    {
        return R"({"format": "gridos-scenario", "version": 1, "topology": {"generate": {"peers": 4}}, ")" + key
             + "\": " + value + "}";
    }
}

TEST(Scenario, ParsesExplicitScenario)
{
    const Scenario s = load_scenario_text(kExplicit);
    EXPECT_EQ(s.name, "three");
    EXPECT_EQ(s.lim, 2u);
    ASSERT_EQ(s.links.size(), 3u);
    EXPECT_EQ(s.links[1].metrics.mss, 9000.0);
    EXPECT_EQ(s.links[0].metrics.mss, kDefaultMss);
    ASSERT_EQ(s.peers.size(), 3u);
    EXPECT_EQ(s.peers[1].cpu_available, 8.0);
    ASSERT_TRUE(s.peers[1].policy.has_value());
    EXPECT_EQ(s.peers[1].policy->on_violation, ViolationResponse::Terminate);
    EXPECT_EQ(s.peers[1].policy->owner, PeerId{2});
    EXPECT_EQ(s.jobs[0].task.workload, "fork_join_sum");
    EXPECT_EQ(s.jobs[0].per_thread_usage(), (ResourceUsage{0.5, 0, 0}));
    EXPECT_EQ(s.failures[0].peer, PeerId{3});
    EXPECT_NO_THROW(s.build_topology(1).validate_complete());
}

TEST(Scenario, GeneratedRosterDefaults)
{
    const Scenario s = load_scenario_text(with("join_spacing", "0.25"));
    const auto roster = s.roster();
    ASSERT_EQ(roster.size(), 4u);
    EXPECT_EQ(roster[3].id, PeerId{4});
    EXPECT_DOUBLE_EQ(roster[3].join_at, 0.75);
    EXPECT_EQ(s.build_topology(3), generate_topology({4}, 3));
}

TEST(Scenario, DefaultUsageSplitsRequirements)
{
    JobSpec j;
    j.task.threads = 4;
    j.requirements = {2.0, 4e6, 8.0};
    EXPECT_EQ(j.per_thread_usage(), (ResourceUsage{0.5, 1e6, 2.0}));
}

TEST(Scenario, RoundTripsThroughCanonicalJson)
{
    const Scenario s = load_scenario_text(kExplicit);
    const std::string text = serialize_scenario(s);
    const Scenario back = load_scenario_text(text);
    EXPECT_EQ(back, s);
    EXPECT_EQ(serialize_scenario(back), text);

    const Scenario g = load_scenario_text(with("lim", "3"));
    EXPECT_EQ(load_scenario_text(serialize_scenario(g)), g);
}

TEST(Scenario, ParseErrors)
{
    EXPECT_EQ(code_of("{not json"), Errc::ParseError);
    EXPECT_EQ(code_of("[]"), Errc::ParseError);
    EXPECT_EQ(code_of(R"({"format": "other", "version": 1})"), Errc::ParseError);
    EXPECT_EQ(code_of(R"({"format": "gridos-scenario", "version": 2})"), Errc::ParseError);
    EXPECT_EQ(code_of(with("lim", "\"eight\"")), Errc::ParseError);
    EXPECT_EQ(code_of(with("peers", "{}")), Errc::ParseError);
    EXPECT_EQ(code_of(with("jobs", R"([{"submitter": 1}])")), Errc::ParseError);
}

TEST(Scenario, ValidationErrors)
{
    EXPECT_EQ(code_of(with("lim", "0")), Errc::ValidationError);
    EXPECT_EQ(code_of(with("tick", "0")), Errc::ValidationError);
    EXPECT_EQ(code_of(with("failures", R"([{"peer": 9, "at": 1}])")), Errc::ValidationError);
    EXPECT_EQ(code_of(with("jobs", R"([{"id": 1, "submitter": 7}])")), Errc::ValidationError);
    EXPECT_EQ(code_of(with("jobs", R"([{"id": 1, "submitter": 1, "task": {"workload": "nope"}}])")),
              Errc::ValidationError);
    EXPECT_EQ(code_of(with("peers", R"([{"id": 1}, {"id": 1}])")), Errc::ValidationError);
    EXPECT_EQ(code_of(with("peers", R"([{"id": 1, "policy": {"cpu_quota": 2}}])")), Errc::ValidationError);
    EXPECT_EQ(code_of(R"({"format": "gridos-scenario", "version": 1,
                          "topology": {"links": [{"a": 1, "b": 2, "rtt": 0.1, "loss": 0.1}]},
                          "peers": [{"id": 1}, {"id": 2}, {"id": 3}]})"),
              Errc::ValidationError);
    EXPECT_EQ(code_of(R"({"format": "gridos-scenario", "version": 1,
                          "topology": {"links": [{"a": 1, "b": 2, "rtt": -0.1, "loss": 0.1}]},
                          "peers": [{"id": 1}, {"id": 2}]})"),
              Errc::ValidationError);
}

TEST(Scenario, MissingFileIsIoError)
{
    try
    {
        load_scenario("/nonexistent/scenario.json");
        FAIL();
    }
    catch (const Error& e)
    {
        EXPECT_EQ(e.code(), Errc::IoError);
    }
}
