#pragma once

// Run artefacts on disk: trace.ndjson, metrics.csv and summary.txt.

#include "error.hpp"
#include "metrics.hpp"
#include "simulation.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace gridos
{
    enum class OutputFormat
    {
        Trace,
        Metrics,
        Summary,
    };

    inline std::set<OutputFormat> parse_formats(const std::string& list)
    {
        std::set<OutputFormat> out;
        std::stringstream ss(list);
        std::string item;
        while (std::getline(ss, item, ','))
        {
            if (item == "trace")
            {
                out.insert(OutputFormat::Trace);
            }
            else if (item == "metrics")
            {
                out.insert(OutputFormat::Metrics);
            }
            else if (item == "summary")
            {
                out.insert(OutputFormat::Summary);
            }
            else if (!item.empty())
            {
                throw Error(Errc::ValidationError, "unknown output format '" + item + "'");
            }
        }
        return out;
    }

    inline std::string summary_text(const MetricsReport& m)
    {
        std::ostringstream os;
        os << "seed " << m.seed << "\n";
        os << "peers: " << m.peers_joined << " joined, " << m.peers_failed << " failed\n";
        os << "subgrids: " << m.subgrids << " (sizes";
        for (const auto& [size, count] : m.subgrid_sizes)
        {
            os << ' ' << size << 'x' << count;
        }
        os << ")\n";
        os << "mean intra-subgrid bandwidth: " << format_double(m.mean_intra_bandwidth) << " B/s";
        if (m.random_baseline)
        {
            os << " vs random " << format_double(*m.random_baseline) << " B/s (beats "
               << format_double(*m.baseline_win_fraction * 100.0) << "% of random partitions)";
        }
        os << "\n";
        os << "propagation: " << m.propagation_rounds << " rounds, " << m.active_rounds << " active, "
           << m.info_messages << " messages\n";
        os << "jobs: " << m.broker_decisions << " scheduled, " << m.jobs_rejected << " rejected, "
           << m.jobs_completed << " completed, mean response " << format_double(m.mean_response_time) << " s\n";
        os << "migrations: " << m.migrations_started << " started, " << m.migrations_committed << " committed, "
           << m.migrations_failed << " failed, " << format_double(m.migration_bytes) << " bytes\n";
        os << "remote calls: " << m.remote_calls << ", violations: " << m.violations << ", errors: " << m.errors
           << ", invariant violations: " << m.invariant_violations << "\n";
        os << "trace events: " << m.trace_events << "\n";
        return os.str();
    }

    inline void write_file(const std::filesystem::path& path, const std::string& text)
    {
        std::ofstream out(path, std::ios::binary);
        if (!out)
        {
            throw Error(Errc::IoError, "cannot write " + path.string());
        }
        out << text;
        if (!out)
        {
            throw Error(Errc::IoError, "write failed for " + path.string());
        }
    }

    inline void emit_run(const RunResult& r, const std::filesystem::path& dir, const std::set<OutputFormat>& formats)
    {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec)
        {
            throw Error(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
        }
        if (formats.contains(OutputFormat::Trace))
        {
            write_file(dir / "trace.ndjson", r.trace.to_ndjson());
        }
        if (formats.contains(OutputFormat::Metrics))
        {
            write_file(dir / "metrics.csv", to_csv(r.metrics));
        }
        if (formats.contains(OutputFormat::Summary))
        {
            write_file(dir / "summary.txt", summary_text(r.metrics));
        }
    }
}
