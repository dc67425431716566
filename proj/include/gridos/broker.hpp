#pragma once

#include "discovery.hpp"
#include "error.hpp"
#include "ids.hpp"
#include "net_model.hpp"
#include "resources.hpp"
#include "security.hpp"

#include <algorithm>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace gridos
{
    /// Weights of the placement score. They sum to one so an idle local node
    /// scores exactly 1.
    struct BrokerWeights
    {
        double cpu = 0.4;
        double mem = 0.2;
        double load = 0.1;
        double bandwidth = 0.3;
        double t_ref = 1.0; // seconds the job's data may take to ship before the bw term saturates

        friend bool operator==(const BrokerWeights&, const BrokerWeights&) = default;
    };

    struct ScheduleDecision
    {
        JobId job;
        PeerId chosen;
        double score = 0.0;
        std::size_t eligible_count = 0;
        SimTime decided_at = 0.0;

        friend bool operator==(const ScheduleDecision&, const ScheduleDecision&) = default;
    };

    /// Minima check alone, without any sharing policy.
    inline bool meets_minima(const JobRequirements& req, const ResourceAdvertisement& adv) noexcept
    {
        return adv.cpu_available >= req.min_cpu && adv.mem_available >= req.min_mem
            && adv.storage_available >= req.min_storage;
    }

    /// Origins in `view` that meet the job's minima and whose sharing policy
    /// admits it. The submitter's own node is judged on minima only, since the
    /// job is not foreign there.
    inline std::vector<PeerId> filter_eligible(const JobRequirements& req, std::span<const ResourceAdvertisement> view,
                                               PeerId submitter)
    {
        std::vector<PeerId> out;
        for (const auto& adv : view)
        {
            if (!meets_minima(req, adv))
            {
                continue;
            }
            if (adv.origin != submitter
                && !check_admission(req, adv.share_limits, {adv.cpu_capacity, adv.foreign_usage, adv.load}).admitted())
            {
                continue;
            }
            out.push_back(adv.origin);
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    inline double score(const JobRequirements& req, const ResourceAdvertisement& adv, Bandwidth bw, bool local,
                        const BrokerWeights& w = {})
    {
        const double cpu = adv.cpu_capacity > 0.0 ? adv.cpu_available / adv.cpu_capacity : 0.0;
        const double mem = adv.mem_total > 0.0 ? adv.mem_available / adv.mem_total : 0.0;
        double net = 1.0;
        if (!local && req.data_size > 0.0)
        {
            net = std::min(1.0, bw.value / (req.data_size / w.t_ref));
        }
        return w.cpu * cpu + w.mem * mem + w.load * (1.0 - adv.load) + w.bandwidth * net;
    }

    /// Highest-scoring eligible machine, ties to the lowest PeerId. Throws
    /// NoEligibleMachine when nothing (not even the submitter) qualifies.
    inline ScheduleDecision select_optimum(const JobRequirements& req, std::span<const ResourceAdvertisement> view,
                                           PeerId submitter, const NetworkTopology& topology,
                                           const BrokerWeights& w = {}, JobId job = {}, SimTime now = 0.0)
    {
        const auto eligible = filter_eligible(req, view, submitter);
        if (eligible.empty())
        {
            throw Error(Errc::NoEligibleMachine, "no machine satisfies the job's minimum requirements");
        }
        std::optional<ScheduleDecision> best;
        for (const auto& adv : view)
        {
            if (!std::binary_search(eligible.begin(), eligible.end(), adv.origin))
            {
                continue;
            }
            const bool local = adv.origin == submitter;
            const Bandwidth bw = local ? Bandwidth{0.0} : topology.bandwidth(submitter, adv.origin);
            const double s = score(req, adv, bw, local, w);
            if (!best || s > best->score || (s == best->score && adv.origin < best->chosen))
            {
                best = ScheduleDecision{job, adv.origin, s, eligible.size(), now};
            }
        }
        return *best;
    }

    struct JobDescriptor
    {
        JobId id;
        PeerId submitter;
        JobRequirements requirements;
        std::vector<GridThreadId> threads;
    };

    enum class BrokerEventKind
    {
        JobScheduled,
        MigrationRequested,
    };

    inline constexpr std::string_view to_string(BrokerEventKind k) noexcept
    {
        return k == BrokerEventKind::JobScheduled ? "JobScheduled" : "MigrationRequested";
    }

    struct BrokerEvent
    {
        BrokerEventKind kind;
        JobId job;
        PeerId chosen;
        std::optional<GridThreadId> thread;
        SimTime at = 0.0;
    };

    struct ScheduleOutcome
    {
        ScheduleDecision decision;
        std::vector<BrokerEvent> events;
    };

    /// Decide on the submitter's current (possibly stale) view; a remote choice
    /// requests migration of every thread of the job.
    inline ScheduleOutcome schedule_job(const JobDescriptor& job, const OverlayState& state,
                                        const NetworkTopology& topology, const BrokerWeights& w = {},
                                        SimTime now = 0.0)
    {
        const auto view = resource_view(state, job.submitter);
        ScheduleOutcome out{select_optimum(job.requirements, view, job.submitter, topology, w, job.id, now), {}};
        out.events.push_back({BrokerEventKind::JobScheduled, job.id, out.decision.chosen, std::nullopt, now});
        if (out.decision.chosen != job.submitter)
        {
            for (const auto& t : job.threads)
            {
                out.events.push_back({BrokerEventKind::MigrationRequested, job.id, out.decision.chosen, t, now});
            }
        }
        return out;
    }
}
