// gridos: run scenarios, compare formed subGrids against random partitions,
// and sweep seeds.
//
// Log verbosity comes from GRIDOS_LOG (quiet, info, debug); default info.
// Errors are printed to stderr as one JSON object and give a nonzero exit.

#include <gridos/emit.hpp>
#include <gridos/metrics.hpp>
#include <gridos/partition.hpp>
#include <gridos/scenario.hpp>
#include <gridos/simulation.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <future>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

namespace
{
    enum class LogLevel
    {
        Quiet,
        Info,
        Debug,
    };

    LogLevel log_level()
    {
        const char* env = std::getenv("GRIDOS_LOG");
        const std::string v = env ? env : "info";
        if (v == "quiet" || v == "0")
        {
            return LogLevel::Quiet;
        }
        if (v == "debug" || v == "2")
        {
            return LogLevel::Debug;
        }
        return LogLevel::Info;
    }

    void log(LogLevel at, const std::string& msg)
    {
        static const LogLevel level = log_level();
        if (static_cast<int>(at) <= static_cast<int>(level))
        {
            std::cerr << "[gridos] " << msg << '\n';
        }
    }

    int fail(std::string_view code, const std::string& message, int status = 1)
    {
        gridos::Json err = {{"error", {{"code", code}, {"message", message}}}};
        std::cerr << err.dump() << '\n';
        return status;
    }

    std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& text)
    {
        static const std::regex re(R"((\d+)\.\.(\d+))");
        std::smatch m;
        if (!std::regex_match(text, m, re))
        {
            throw gridos::Error(gridos::Errc::ValidationError, "--seeds expects A..B, got '" + text + "'");
        }
        const auto a = std::stoull(m[1].str());
        const auto b = std::stoull(m[2].str());
        if (b < a)
        {
            throw gridos::Error(gridos::Errc::ValidationError, "--seeds range is empty");
        }
        return {a, b};
    }

    gridos::RunResult run_logged(const gridos::Scenario& s, std::optional<std::uint64_t> seed)
    {
        gridos::SimOptions opt;
        opt.seed = seed;
        log(LogLevel::Debug, "running '" + s.name + "' seed " + std::to_string(seed.value_or(s.seed)));
        auto r = gridos::run_scenario(s, opt);
        log(LogLevel::Debug, std::to_string(r.trace.size()) + " trace records");
        return r;
    }
}

int main(int argc, char** argv)
{
    CLI::App app{"Grid OS overlay, broker and migration simulator"};
    app.require_subcommand(1);

    std::string scenario_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string formats = "trace,metrics,summary";
    std::size_t trials = 100;
    bool compare_random = false;
    std::string seeds;
    std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());

    auto* run = app.add_subcommand("run", "Run one scenario");
    run->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
    run->add_option("--seed", seed, "Override the scenario seed");
    run->add_option("--out", out_dir, "Output directory (default: summary on stdout)");
    run->add_option("--formats", formats, "Comma list of trace, metrics, summary");

    auto* topo = app.add_subcommand("topology", "Compare the formed partition with random ones");
    topo->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
    topo->add_option("--seed", seed, "Override the scenario seed");
    topo->add_flag("--compare-random", compare_random, "Score against random partitions")->required();
    topo->add_option("--trials", trials, "Random partitions to draw")->check(CLI::PositiveNumber);

    auto* sweep = app.add_subcommand("sweep", "Run a scenario over a range of seeds");
    sweep->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
    sweep->add_option("--seeds", seeds, "Inclusive range A..B")->required();
    sweep->add_option("--out", out_dir, "Output directory")->required();
    sweep->add_option("--formats", formats, "Comma list of trace, metrics, summary");
    sweep->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::CallForAllHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError& e)
    {
        return fail("UsageError", e.what(), 2);
    }

    try
    {
        const gridos::Scenario scenario = gridos::load_scenario(scenario_path);

        if (run->parsed())
        {
            const auto fmts = gridos::parse_formats(formats);
            const auto r = run_logged(scenario, seed);
            if (out_dir.empty())
            {
                std::cout << gridos::summary_text(r.metrics);
            }
            else
            {
                gridos::emit_run(r, out_dir, fmts);
                log(LogLevel::Info, "wrote " + out_dir);
            }
            return 0;
        }

        if (topo->parsed())
        {
            const auto r = run_logged(scenario, seed);
            const auto topology = scenario.build_topology(r.metrics.seed);
            const auto cmp = gridos::compare_partition(r.partition, topology, r.metrics.seed, trials);
            gridos::Json out = {{"seed", r.metrics.seed},      {"subgrids", cmp.subgrids},
                                {"trials", cmp.trials},         {"formed_mean_bandwidth", cmp.formed},
                                {"random_mean_bandwidth", cmp.random_mean},
                                {"win_fraction", cmp.win_fraction}, {"formed_wins", cmp.formed_wins()}};
            std::cout << out.dump(2) << '\n';
            return 0;
        }

        const auto [first, last] = parse_seed_range(seeds);
        const auto fmts = gridos::parse_formats(formats);
        std::vector<gridos::MetricsReport> reports;
        std::vector<std::future<gridos::MetricsReport>> pending;
        auto drain = [&] {
            for (auto& f : pending)
            {
                reports.push_back(f.get());
            }
            pending.clear();
        };
        for (std::uint64_t s = first; s <= last; ++s)
        {
            pending.push_back(std::async(std::launch::async, [&, s] {
                const auto r = run_logged(scenario, s);
                gridos::emit_run(r, std::filesystem::path(out_dir) / ("seed_" + std::to_string(s)), fmts);
                return r.metrics;
            }));
            if (pending.size() >= jobs)
            {
                drain();
            }
        }
        drain();
        std::string csv = std::string(gridos::kMetricsCsvHeader) + "\n";
        for (const auto& m : reports)
        {
            csv += gridos::to_csv_row(m) + "\n";
        }
        gridos::write_file(std::filesystem::path(out_dir) / "sweep.csv", csv);
        log(LogLevel::Info, "wrote " + std::to_string(reports.size()) + " runs to " + out_dir);
        return 0;
    }
    catch (const gridos::Error& e)
    {
        return fail(gridos::to_string(e.code()), e.detail());
    }
    catch (const std::exception& e)
    {
        return fail("InternalError", e.what());
    }
}
