#pragma once

// Scenario files: JSON documents with a versioned header.
//
//   {
//     "format": "gridos-scenario", "version": 1,
//     "name": "...", "seed": 1, "lim": 8, "tick": 1.0,
//     "propagation_interval": 1.0, "baseline_trials": 20,
//     "broker_weights": {"cpu": 0.4, "mem": 0.2, "load": 0.1, "bandwidth": 0.3, "t_ref": 1.0},
//     "topology": {"generate": {"peers": 10, "rtt": [0.01, 0.2], "loss": [1e-4, 0.05],
//                               "mss": 1460, "model": "uniform"}}
//              or {"links": [{"a": 1, "b": 2, "rtt": 0.05, "loss": 0.01, "mss": 1460}, ...]},
//     "join_spacing": 0.1,
//     "peers": [{"id": 1, "join_at": 0.0, "cpu_capacity": 4, "cpu_available": 4,
//                "mem_total": 8e9, "mem_available": 8e9, "storage_available": 1e11, "load": 0,
//                "policy": {"cpu_quota": 0.5, "mem_cap": 4e9, "storage_cap": 5e10,
//                           "idle_only": false, "on_violation": "throttle"}}],
//     "jobs": [{"id": 1, "submitter": 1, "submit_at": 5.0,
//               "task": {"workload": "ring", "threads": 4, "rounds": 8,
//                        "payload_bytes": 0, "state_bytes": 65536, "call_cost": 0.0},
//               "requirements": {"min_cpu": 1, "min_mem": 1e6, "min_storage": 0,
//                                "data_size": 65536, "interactive": false},
//               "usage": {"cpu": 0.25, "mem": 2.5e5, "storage": 0}}],
//     "failures": [{"peer": 3, "at": 20.0}]
//   }
//
// With a generated topology and no "peers" list, peers 1..N join at
// (i - 1) * join_spacing with default resources and an open policy.

#include "broker.hpp"
#include "error.hpp"
#include "ids.hpp"
#include "net_model.hpp"
#include "resources.hpp"
#include "trace.hpp"
#include "workload.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace gridos
{
    inline constexpr std::string_view kScenarioFormat = "gridos-scenario";
    inline constexpr int kScenarioVersion = 1;

    struct LinkSpec
    {
        PeerId a;
        PeerId b;
        LinkMetrics metrics;

        friend bool operator==(const LinkSpec&, const LinkSpec&) = default;
    };

    struct PeerSpec
    {
        PeerId id;
        SimTime join_at = 0.0;
        double cpu_capacity = 4.0;
        double cpu_available = 4.0;
        double mem_total = 8e9;
        double mem_available = 8e9;
        double storage_available = 1e11;
        double load = 0.0;
        std::optional<SharingPolicy> policy; // absent: open policy

        [[nodiscard]] SharingPolicy effective_policy() const
        {
            return policy ? *policy : SharingPolicy::open(id, mem_total, storage_available);
        }

        [[nodiscard]] ResourceAdvertisement advertisement(SimTime at, const ResourceUsage& foreign = {}) const
        {
            ResourceAdvertisement adv;
            adv.origin = id;
            adv.cpu_capacity = cpu_capacity;
            adv.cpu_available = std::max(0.0, cpu_available - foreign.cpu);
            adv.mem_total = mem_total;
            adv.mem_available = std::max(0.0, mem_available - foreign.mem);
            adv.storage_available = std::max(0.0, storage_available - foreign.storage);
            adv.load = load;
            adv.share_limits = effective_policy();
            adv.foreign_usage = foreign;
            adv.timestamp = at;
            return adv;
        }

        friend bool operator==(const PeerSpec&, const PeerSpec&) = default;
    };

    struct JobSpec
    {
        JobId id;
        PeerId submitter;
        SimTime submit_at = 0.0;
        TaskSpec task;
        JobRequirements requirements;
        std::optional<ResourceUsage> usage; // per thread per tick; absent: requirements split evenly

        [[nodiscard]] ResourceUsage per_thread_usage() const
        {
            if (usage)
            {
                return *usage;
            }
            const double n = static_cast<double>(std::max<std::size_t>(task.threads, 1));
            return {requirements.min_cpu / n, requirements.min_mem / n, requirements.min_storage / n};
        }

        friend bool operator==(const JobSpec&, const JobSpec&) = default;
    };

    struct FailureSpec
    {
        PeerId peer;
        SimTime at = 0.0;

        friend bool operator==(const FailureSpec&, const FailureSpec&) = default;
    };

    struct Scenario
    {
        std::string name;
        std::uint64_t seed = 1;
        std::size_t lim = 8;
        SimTime tick = 1.0;
        SimTime propagation_interval = 1.0;
        std::size_t baseline_trials = 20;
        BrokerWeights weights;
        std::optional<TopologyGenSpec> generate;
        std::vector<LinkSpec> links;
        SimTime join_spacing = 0.1;
        std::vector<PeerSpec> peers;
        std::vector<JobSpec> jobs;
        std::vector<FailureSpec> failures;

        friend bool operator==(const Scenario&, const Scenario&) = default;

        /// Roster actually used: explicit peers, or the generated default one.
        [[nodiscard]] std::vector<PeerSpec> roster() const
        {
            if (!peers.empty() || !generate)
            {
                return peers;
            }
            std::vector<PeerSpec> out;
            for (std::uint64_t i = 1; i <= generate->peer_count; ++i)
            {
                PeerSpec p;
                p.id = PeerId{i};
                p.join_at = static_cast<double>(i - 1) * join_spacing;
                out.push_back(p);
            }
            return out;
        }

        [[nodiscard]] NetworkTopology build_topology(std::uint64_t run_seed) const
        {
            if (generate)
            {
                return generate_topology(*generate, run_seed);
            }
            NetworkTopology t;
            for (const auto& p : peers)
            {
                t.add_peer(p.id);
            }
            for (const auto& l : links)
            {
                t.set_link(l.a, l.b, l.metrics);
            }
            return t;
        }
    };

    namespace detail
    {
        template <typename T>
        T field(const Json& obj, const char* key, const std::string& path)
        {
            if (!obj.contains(key))
            {
                throw Error(Errc::ParseError, path + "." + key + ": missing");
            }
            try
            {
                return obj.at(key).get<T>();
            }
            catch (const nlohmann::json::exception&)
            {
                throw Error(Errc::ParseError, path + "." + key + ": wrong type");
            }
        }

        template <typename T>
        T field_or(const Json& obj, const char* key, T fallback, const std::string& path)
        {
            return obj.contains(key) ? field<T>(obj, key, path) : fallback;
        }

        inline void require_object(const Json& j, const std::string& path)
        {
            if (!j.is_object())
            {
                throw Error(Errc::ParseError, path + ": expected an object");
            }
        }

        inline void require_array(const Json& j, const std::string& path)
        {
            if (!j.is_array())
            {
                throw Error(Errc::ParseError, path + ": expected an array");
            }
        }

        inline std::pair<double, double> range(const Json& obj, const char* key, std::pair<double, double> fallback,
                                               const std::string& path)
        {
            if (!obj.contains(key))
            {
                return fallback;
            }
            const Json& r = obj.at(key);
            if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number())
            {
                throw Error(Errc::ParseError, path + "." + key + ": expected [min, max]");
            }
            return {r[0].get<double>(), r[1].get<double>()};
        }

        inline ViolationResponse response_from(const std::string& s, const std::string& path)
        {
            if (s == "throttle")
            {
                return ViolationResponse::Throttle;
            }
            if (s == "terminate")
            {
                return ViolationResponse::Terminate;
            }
            throw Error(Errc::ParseError, path + ": on_violation must be \"throttle\" or \"terminate\"");
        }

        inline ResourceUsage usage_from(const Json& j, const std::string& path)
        {
            require_object(j, path);
            return {field_or<double>(j, "cpu", 0.0, path), field_or<double>(j, "mem", 0.0, path),
                    field_or<double>(j, "storage", 0.0, path)};
        }
    }

    /// Parse and validate. ParseError for syntax, shape and type problems;
    /// ValidationError for values and dangling references.
    inline Scenario parse_scenario(const std::string& text)
    {
        using namespace detail;
        Json j;
        try
        {
            j = Json::parse(text);
        }
        catch (const nlohmann::json::parse_error& e)
        {
            throw Error(Errc::ParseError, std::string("byte ") + std::to_string(e.byte) + ": " + e.what());
        }
        require_object(j, "$");
        if (field<std::string>(j, "format", "$") != kScenarioFormat)
        {
            throw Error(Errc::ParseError, "$.format: expected \"gridos-scenario\"");
        }
        if (field<int>(j, "version", "$") != kScenarioVersion)
        {
            throw Error(Errc::ParseError, "$.version: unsupported version");
        }

        Scenario s;
        s.name = field_or<std::string>(j, "name", "", "$");
        s.seed = field_or<std::uint64_t>(j, "seed", 1, "$");
        s.lim = field_or<std::size_t>(j, "lim", kDefaultLim, "$");
        s.tick = field_or<double>(j, "tick", 1.0, "$");
        s.propagation_interval = field_or<double>(j, "propagation_interval", 1.0, "$");
        s.baseline_trials = field_or<std::size_t>(j, "baseline_trials", 20, "$");
        s.join_spacing = field_or<double>(j, "join_spacing", 0.1, "$");

        if (j.contains("broker_weights"))
        {
            const Json& w = j.at("broker_weights");
            require_object(w, "$.broker_weights");
            const std::string p = "$.broker_weights";
            s.weights = {field_or<double>(w, "cpu", 0.4, p), field_or<double>(w, "mem", 0.2, p),
                         field_or<double>(w, "load", 0.1, p), field_or<double>(w, "bandwidth", 0.3, p),
                         field_or<double>(w, "t_ref", 1.0, p)};
        }

        const Json& topo = j.contains("topology") ? j.at("topology") : Json::object();
        require_object(topo, "$.topology");
        if (topo.contains("generate"))
        {
            const Json& g = topo.at("generate");
            const std::string p = "$.topology.generate";
            require_object(g, p);
            TopologyGenSpec spec;
            spec.peer_count = field<std::uint64_t>(g, "peers", p);
            std::tie(spec.rtt_min, spec.rtt_max) = range(g, "rtt", {spec.rtt_min, spec.rtt_max}, p);
            std::tie(spec.loss_min, spec.loss_max) = range(g, "loss", {spec.loss_min, spec.loss_max}, p);
            spec.mss = field_or<double>(g, "mss", kDefaultMss, p);
            const auto model = field_or<std::string>(g, "model", "uniform", p);
            if (model == "uniform")
            {
                spec.model = TopologyModel::Uniform;
            }
            else if (model == "euclidean")
            {
                spec.model = TopologyModel::Euclidean;
            }
            else
            {
                throw Error(Errc::ParseError, p + ".model: expected \"uniform\" or \"euclidean\"");
            }
            s.generate = spec;
        }
        if (topo.contains("links"))
        {
            const Json& links = topo.at("links");
            require_array(links, "$.topology.links");
            for (std::size_t i = 0; i < links.size(); ++i)
            {
                const std::string p = "$.topology.links[" + std::to_string(i) + "]";
                require_object(links[i], p);
                s.links.push_back({PeerId{field<std::uint64_t>(links[i], "a", p)},
                                   PeerId{field<std::uint64_t>(links[i], "b", p)},
                                   LinkMetrics{field<double>(links[i], "rtt", p), field<double>(links[i], "loss", p),
                                               field_or<double>(links[i], "mss", kDefaultMss, p)}});
            }
        }

        if (j.contains("peers"))
        {
            const Json& peers = j.at("peers");
            require_array(peers, "$.peers");
            for (std::size_t i = 0; i < peers.size(); ++i)
            {
                const std::string p = "$.peers[" + std::to_string(i) + "]";
                const Json& o = peers[i];
                require_object(o, p);
                PeerSpec ps;
                ps.id = PeerId{field<std::uint64_t>(o, "id", p)};
                ps.join_at = field_or<double>(o, "join_at", 0.0, p);
                ps.cpu_capacity = field_or<double>(o, "cpu_capacity", ps.cpu_capacity, p);
                ps.cpu_available = field_or<double>(o, "cpu_available", ps.cpu_capacity, p);
                ps.mem_total = field_or<double>(o, "mem_total", ps.mem_total, p);
                ps.mem_available = field_or<double>(o, "mem_available", ps.mem_total, p);
                ps.storage_available = field_or<double>(o, "storage_available", ps.storage_available, p);
                ps.load = field_or<double>(o, "load", 0.0, p);
                if (o.contains("policy"))
                {
                    const Json& pol = o.at("policy");
                    const std::string pp = p + ".policy";
                    require_object(pol, pp);
                    SharingPolicy sp;
                    sp.owner = ps.id;
                    sp.cpu_quota = field_or<double>(pol, "cpu_quota", 1.0, pp);
                    sp.mem_cap = field_or<double>(pol, "mem_cap", ps.mem_total, pp);
                    sp.storage_cap = field_or<double>(pol, "storage_cap", ps.storage_available, pp);
                    sp.idle_only = field_or<bool>(pol, "idle_only", false, pp);
                    sp.on_violation = response_from(field_or<std::string>(pol, "on_violation", "throttle", pp), pp);
                    ps.policy = sp;
                }
                s.peers.push_back(ps);
            }
        }

        if (j.contains("jobs"))
        {
            const Json& jobs = j.at("jobs");
            require_array(jobs, "$.jobs");
            for (std::size_t i = 0; i < jobs.size(); ++i)
            {
                const std::string p = "$.jobs[" + std::to_string(i) + "]";
                const Json& o = jobs[i];
                require_object(o, p);
                JobSpec js;
                js.id = JobId{field<std::uint64_t>(o, "id", p)};
                js.submitter = PeerId{field<std::uint64_t>(o, "submitter", p)};
                js.submit_at = field_or<double>(o, "submit_at", 0.0, p);
                if (o.contains("task"))
                {
                    const Json& t = o.at("task");
                    const std::string tp = p + ".task";
                    require_object(t, tp);
                    js.task.workload = field_or<std::string>(t, "workload", "ring", tp);
                    js.task.threads = field_or<std::size_t>(t, "threads", 4, tp);
                    js.task.rounds = field_or<std::uint64_t>(t, "rounds", 8, tp);
                    js.task.payload_bytes = field_or<std::uint64_t>(t, "payload_bytes", 0, tp);
                    js.task.state_bytes = field_or<std::uint64_t>(t, "state_bytes", 0, tp);
                    js.task.call_cost = field_or<double>(t, "call_cost", 0.0, tp);
                }
                if (o.contains("requirements"))
                {
                    const Json& r = o.at("requirements");
                    const std::string rp = p + ".requirements";
                    require_object(r, rp);
                    js.requirements = {field_or<double>(r, "min_cpu", 0.0, rp), field_or<double>(r, "min_mem", 0.0, rp),
                                       field_or<double>(r, "min_storage", 0.0, rp),
                                       field_or<double>(r, "data_size", 0.0, rp),
                                       field_or<bool>(r, "interactive", false, rp)};
                }
                if (o.contains("usage"))
                {
                    js.usage = usage_from(o.at("usage"), p + ".usage");
                }
                s.jobs.push_back(js);
            }
        }

        if (j.contains("failures"))
        {
            const Json& fs = j.at("failures");
            require_array(fs, "$.failures");
            for (std::size_t i = 0; i < fs.size(); ++i)
            {
                const std::string p = "$.failures[" + std::to_string(i) + "]";
                require_object(fs[i], p);
                s.failures.push_back({PeerId{field<std::uint64_t>(fs[i], "peer", p)}, field<double>(fs[i], "at", p)});
            }
        }
        return s;
    }

    /// Value and reference checks. Throws ValidationError naming the field.
    inline void validate(const Scenario& s)
    {
        auto fail = [](const std::string& what) { throw Error(Errc::ValidationError, what); };
        auto time_ok = [](double t) { return t >= 0.0 && std::isfinite(t); };
        if (s.lim == 0)
        {
            fail("$.lim: must be positive");
        }
        if (!(s.tick > 0.0) || !(s.propagation_interval > 0.0) || !time_ok(s.join_spacing))
        {
            fail("$.tick/$.propagation_interval: must be positive");
        }
        if (s.generate && !s.links.empty())
        {
            fail("$.topology: give either generate or links, not both");
        }
        if (!s.generate && s.peers.empty())
        {
            fail("$.peers: explicit topologies need a peer roster");
        }
        if (s.generate)
        {
            try
            {
                s.generate->validate();
            }
            catch (const Error& e)
            {
                fail(std::string("$.topology.generate: ") + e.what());
            }
        }

        const auto roster = s.roster();
        std::set<PeerId> ids;
        for (std::size_t i = 0; i < roster.size(); ++i)
        {
            const auto& p = roster[i];
            const std::string path = "$.peers[" + std::to_string(i) + "]";
            if (!ids.insert(p.id).second)
            {
                fail(path + ".id: duplicate peer " + to_string(p.id));
            }
            if (!time_ok(p.join_at))
            {
                fail(path + ".join_at: must be a non-negative time");
            }
            if (s.generate && (p.id.value < 1 || p.id.value > s.generate->peer_count))
            {
                fail(path + ".id: peer " + to_string(p.id) + " is not in the generated topology");
            }
            try
            {
                p.advertisement(0.0).validate();
                p.effective_policy().validate(p.mem_total, p.storage_available);
            }
            catch (const Error& e)
            {
                fail(path + ": " + e.what());
            }
        }
        for (std::size_t i = 0; i < s.links.size(); ++i)
        {
            const auto& l = s.links[i];
            const std::string path = "$.topology.links[" + std::to_string(i) + "]";
            if (!ids.contains(l.a) || !ids.contains(l.b))
            {
                fail(path + ": references a peer missing from $.peers");
            }
            try
            {
                l.metrics.validate();
            }
            catch (const Error& e)
            {
                fail(path + ": " + e.what());
            }
        }
        if (!s.generate)
        {
            try
            {
                s.build_topology(s.seed).validate_complete();
            }
            catch (const Error& e)
            {
                fail(std::string("$.topology.links: ") + e.what());
            }
        }

        std::set<JobId> jobs;
        for (std::size_t i = 0; i < s.jobs.size(); ++i)
        {
            const auto& jb = s.jobs[i];
            const std::string path = "$.jobs[" + std::to_string(i) + "]";
            if (!jobs.insert(jb.id).second)
            {
                fail(path + ".id: duplicate job");
            }
            if (!ids.contains(jb.submitter))
            {
                fail(path + ".submitter: unknown peer " + to_string(jb.submitter));
            }
            if (!time_ok(jb.submit_at))
            {
                fail(path + ".submit_at: must be a non-negative time");
            }
            if (!time_ok(jb.task.call_cost))
            {
                fail(path + ".task.call_cost: must be a non-negative time");
            }
            try
            {
                jb.requirements.validate();
                make_workload(jb.task);
            }
            catch (const Error& e)
            {
                fail(path + ": " + e.what());
            }
        }
        for (std::size_t i = 0; i < s.failures.size(); ++i)
        {
            const auto& f = s.failures[i];
            const std::string path = "$.failures[" + std::to_string(i) + "]";
            if (!ids.contains(f.peer))
            {
                fail(path + ".peer: unknown peer " + to_string(f.peer));
            }
            if (!time_ok(f.at))
            {
                fail(path + ".at: must be a non-negative time");
            }
        }
    }

    inline Scenario load_scenario_text(const std::string& text)
    {
        Scenario s = parse_scenario(text);
        validate(s);
        return s;
    }

    inline Scenario load_scenario(const std::string& path)
    {
        std::ifstream in(path);
        if (!in)
        {
            throw Error(Errc::IoError, "cannot open scenario " + path);
        }
        std::stringstream buf;
        buf << in.rdbuf();
        return load_scenario_text(buf.str());
    }

    /// Canonical JSON form; every field written explicitly.
    inline Json scenario_to_json(const Scenario& s)
    {
        Json j;
        j["format"] = kScenarioFormat;
        j["version"] = kScenarioVersion;
        j["name"] = s.name;
        j["seed"] = s.seed;
        j["lim"] = s.lim;
        j["tick"] = s.tick;
        j["propagation_interval"] = s.propagation_interval;
        j["baseline_trials"] = s.baseline_trials;
        j["join_spacing"] = s.join_spacing;
        j["broker_weights"] = {{"cpu", s.weights.cpu}, {"mem", s.weights.mem}, {"load", s.weights.load},
                               {"bandwidth", s.weights.bandwidth}, {"t_ref", s.weights.t_ref}};
        Json topo = Json::object();
        if (s.generate)
        {
            const auto& g = *s.generate;
            topo["generate"] = {{"peers", g.peer_count}, {"rtt", {g.rtt_min, g.rtt_max}},
                                {"loss", {g.loss_min, g.loss_max}}, {"mss", g.mss},
                                {"model", g.model == TopologyModel::Uniform ? "uniform" : "euclidean"}};
        }
        if (!s.links.empty())
        {
            Json links = Json::array();
            for (const auto& l : s.links)
            {
                links.push_back({{"a", l.a.value}, {"b", l.b.value}, {"rtt", l.metrics.rtt},
                                 {"loss", l.metrics.packet_loss}, {"mss", l.metrics.mss}});
            }
            topo["links"] = links;
        }
        j["topology"] = topo;

        Json peers = Json::array();
        for (const auto& p : s.peers)
        {
            Json o = {{"id", p.id.value}, {"join_at", p.join_at}, {"cpu_capacity", p.cpu_capacity},
                      {"cpu_available", p.cpu_available}, {"mem_total", p.mem_total},
                      {"mem_available", p.mem_available}, {"storage_available", p.storage_available},
                      {"load", p.load}};
            if (p.policy)
            {
                o["policy"] = {{"cpu_quota", p.policy->cpu_quota}, {"mem_cap", p.policy->mem_cap},
                               {"storage_cap", p.policy->storage_cap}, {"idle_only", p.policy->idle_only},
                               {"on_violation",
                                p.policy->on_violation == ViolationResponse::Throttle ? "throttle" : "terminate"}};
            }
            peers.push_back(o);
        }
        j["peers"] = peers;

        Json jobs = Json::array();
        for (const auto& jb : s.jobs)
        {
            Json o = {{"id", jb.id.value}, {"submitter", jb.submitter.value}, {"submit_at", jb.submit_at},
                      {"task",
                       {{"workload", jb.task.workload}, {"threads", jb.task.threads}, {"rounds", jb.task.rounds},
                        {"payload_bytes", jb.task.payload_bytes}, {"state_bytes", jb.task.state_bytes},
                        {"call_cost", jb.task.call_cost}}},
                      {"requirements",
                       {{"min_cpu", jb.requirements.min_cpu}, {"min_mem", jb.requirements.min_mem},
                        {"min_storage", jb.requirements.min_storage}, {"data_size", jb.requirements.data_size},
                        {"interactive", jb.requirements.interactive}}}};
            if (jb.usage)
            {
                o["usage"] = {{"cpu", jb.usage->cpu}, {"mem", jb.usage->mem}, {"storage", jb.usage->storage}};
            }
            jobs.push_back(o);
        }
        j["jobs"] = jobs;

        Json fails = Json::array();
        for (const auto& f : s.failures)
        {
            fails.push_back({{"peer", f.peer.value}, {"at", f.at}});
        }
        j["failures"] = fails;
        return j;
    }

    inline std::string serialize_scenario(const Scenario& s) { return scenario_to_json(s).dump(2) + "\n"; }
}
