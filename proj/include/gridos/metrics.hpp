#pragma once

#include "partition.hpp"
#include "trace.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>

namespace gridos
{
    struct MetricsReport
    {
        std::uint64_t seed = 0;
        std::size_t peers_joined = 0;
        std::size_t peers_failed = 0;
        std::size_t subgrids = 0;
        std::map<std::size_t, std::size_t> subgrid_sizes; // size -> number of subGrids
        double mean_intra_bandwidth = 0.0;
        std::optional<double> random_baseline; // needs two or more subGrids
        std::optional<double> baseline_win_fraction;
        std::size_t propagation_rounds = 0;
        std::size_t active_rounds = 0;
        std::size_t info_messages = 0;
        std::size_t broker_decisions = 0;
        std::size_t jobs_rejected = 0;
        double mean_placement_latency = 0.0; // submit to process start
        std::size_t jobs_completed = 0;
        double mean_response_time = 0.0; // submit to result back at the origin
        std::size_t migrations_started = 0;
        std::size_t migrations_committed = 0;
        std::size_t migrations_failed = 0;
        double migration_bytes = 0.0;
        std::size_t remote_calls = 0;
        std::size_t violations = 0;
        std::size_t errors = 0;
        std::size_t invariant_violations = 0;
        std::size_t trace_events = 0;

        friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
    };

    inline constexpr std::string_view kMetricsCsvHeader =
        "seed,peers_joined,peers_failed,subgrids,subgrid_sizes,mean_intra_bandwidth,random_baseline,"
        "baseline_win_fraction,propagation_rounds,active_rounds,info_messages,broker_decisions,jobs_rejected,"
        "mean_placement_latency,jobs_completed,mean_response_time,migrations_started,migrations_committed,"
        "migrations_failed,migration_bytes,remote_calls,violations,errors,invariant_violations,trace_events";

    inline std::string format_double(double v)
    {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    }

    inline std::string to_csv_row(const MetricsReport& m)
    {
        std::ostringstream os;
        std::string sizes;
        for (const auto& [size, count] : m.subgrid_sizes)
        {
            sizes += (sizes.empty() ? "" : ";") + std::to_string(size) + ":" + std::to_string(count);
        }
        auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
        os << m.seed << ',' << m.peers_joined << ',' << m.peers_failed << ',' << m.subgrids << ',' << sizes << ','
           << format_double(m.mean_intra_bandwidth) << ',' << opt(m.random_baseline) << ','
           << opt(m.baseline_win_fraction) << ',' << m.propagation_rounds << ',' << m.active_rounds << ','
           << m.info_messages << ',' << m.broker_decisions << ',' << m.jobs_rejected << ','
           << format_double(m.mean_placement_latency) << ',' << m.jobs_completed << ','
           << format_double(m.mean_response_time) << ',' << m.migrations_started << ',' << m.migrations_committed
           << ',' << m.migrations_failed << ',' << format_double(m.migration_bytes) << ',' << m.remote_calls << ','
           << m.violations << ',' << m.errors << ',' << m.invariant_violations << ',' << m.trace_events;
        return os.str();
    }

    inline std::string to_csv(const MetricsReport& m)
    {
        return std::string(kMetricsCsvHeader) + "\n" + to_csv_row(m) + "\n";
    }

    /// Partition figures shared by the live and replayed reports.
    inline void fill_partition_metrics(MetricsReport& m, const Partition& p, const NetworkTopology& topology,
                                       std::size_t trials)
    {
        m.subgrids = p.size();
        m.subgrid_sizes.clear();
        for (const auto& g : p)
        {
            ++m.subgrid_sizes[g.size()];
        }
        m.mean_intra_bandwidth = mean_intra_bandwidth(p, topology);
        m.random_baseline.reset();
        m.baseline_win_fraction.reset();
        if (p.size() >= 2 && trials > 0)
        {
            const auto cmp = compare_partition(p, topology, m.seed, trials);
            m.random_baseline = cmp.random_mean;
            m.baseline_win_fraction = cmp.win_fraction;
        }
    }

    /// Topology as recorded in a trace's Link records.
    inline NetworkTopology topology_from_trace(const Trace& trace)
    {
        NetworkTopology t;
        for (const auto& r : trace.records())
        {
            if (r.kind == "Link")
            {
                const PeerId a{r.data.at("a").get<std::uint64_t>()};
                const PeerId b{r.data.at("b").get<std::uint64_t>()};
                t.add_peer(a);
                t.add_peer(b);
                t.set_link(a, b,
                           LinkMetrics{r.data.at("rtt").get<double>(), r.data.at("loss").get<double>(),
                                       r.data.at("mss").get<double>()});
            }
        }
        return t;
    }

    /// Recompute every metric from the trace alone.
    inline MetricsReport metrics_from_trace(const Trace& trace)
    {
        MetricsReport m;
        std::size_t trials = 0;
        std::map<std::uint64_t, SimTime> submitted;
        double placement_sum = 0.0;
        std::size_t placed = 0;
        double response_sum = 0.0;
        for (const auto& r : trace.records())
        {
            const std::string& k = r.kind;
            if (k == "RunStarted")
            {
                m.seed = r.data.at("seed").get<std::uint64_t>();
                trials = r.data.at("baseline_trials").get<std::size_t>();
            }
            else if (k == "PeerJoined")
            {
                ++m.peers_joined;
            }
            else if (k == "PeerFailed" || k == "MasterFailed")
            {
                ++m.peers_failed;
            }
            else if (k == "PropagationRound")
            {
                ++m.propagation_rounds;
                m.active_rounds += r.data.at("messages").get<std::size_t>() > 0 ? 1 : 0;
            }
            else if (k == "InfoPropagated")
            {
                ++m.info_messages;
            }
            else if (k == "JobSubmitted")
            {
                submitted[r.data.at("job").get<std::uint64_t>()] = r.time;
            }
            else if (k == "JobScheduled")
            {
                ++m.broker_decisions;
            }
            else if (k == "JobRejected")
            {
                ++m.jobs_rejected;
            }
            else if (k == "ProcessStarted")
            {
                placement_sum += r.time - submitted.at(r.data.at("job").get<std::uint64_t>());
                ++placed;
            }
            else if (k == "JobResultReturned")
            {
                response_sum += r.time - submitted.at(r.data.at("job").get<std::uint64_t>());
                ++m.jobs_completed;
            }
            else if (k == "MigrationStarted")
            {
                ++m.migrations_started;
                m.migration_bytes += r.data.at("bytes").get<double>();
            }
            else if (k == "MigrationCommitted")
            {
                ++m.migrations_committed;
            }
            else if (k == "MigrationFailed")
            {
                ++m.migrations_failed;
            }
            else if (k == "CallForwarded")
            {
                ++m.remote_calls;
            }
            else if (k == "Violation")
            {
                ++m.violations;
            }
            else if (k == "Error")
            {
                ++m.errors;
            }
            else if (k == "InvariantViolation")
            {
                ++m.invariant_violations;
            }
        }
        m.mean_placement_latency = placed == 0 ? 0.0 : placement_sum / static_cast<double>(placed);
        m.mean_response_time = m.jobs_completed == 0 ? 0.0 : response_sum / static_cast<double>(m.jobs_completed);
        fill_partition_metrics(m, partition_from_trace(trace), topology_from_trace(trace), trials);
        m.trace_events = trace.size();
        return m;
    }
}
