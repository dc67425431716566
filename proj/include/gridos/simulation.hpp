#pragma once

// Discrete-event driver that plays a Scenario through the overlay, broker,
// migration runtime and host-side accounting, and records every step.

#include "broker.hpp"
#include "discovery.hpp"
#include "error.hpp"
#include "event_queue.hpp"
#include "metrics.hpp"
#include "migration.hpp"
#include "partition.hpp"
#include "scenario.hpp"
#include "security.hpp"
#include "trace.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace gridos
{
    struct SimOptions
    {
        std::optional<std::uint64_t> seed; // overrides the scenario's
        bool check_invariants = true;
        SimTime horizon = 1e7;
    };

    struct RunResult
    {
        Trace trace;
        MetricsReport metrics;
        Partition partition;
        std::vector<std::string> invariant_violations;
    };

    class Simulation
    {
    public:
        explicit Simulation(Scenario scenario, SimOptions opt = {})
            : scenario_(std::move(scenario)),
              opt_(opt),
              seed_(opt.seed.value_or(scenario_.seed)),
              topology_(scenario_.build_topology(seed_)),
              overlay_(scenario_.lim),
              runtime_(queue_, topology_, &trace_, make_hooks())
        {
            for (const auto& p : scenario_.roster())
            {
                roster_.emplace(p.id, p);
            }
            for (const auto& j : scenario_.jobs)
            {
                jobs_.emplace(j.id, JobRun{j});
            }
            metrics_.seed = seed_;

            Json header = {{"seed", seed_}, {"name", scenario_.name}, {"lim", scenario_.lim},
                           {"tick", scenario_.tick}, {"propagation_interval", scenario_.propagation_interval},
                           {"baseline_trials", scenario_.baseline_trials}, {"peers", roster_.size()}};
            trace_.append(0.0, "RunStarted", header);
            for (const auto& [key, m] : topology_.links())
            {
                trace_.append(0.0, "Link", {{"a", key.first.value}, {"b", key.second.value}, {"rtt", m.rtt},
                                            {"loss", m.packet_loss}, {"mss", m.mss}});
            }

            for (const auto& [id, p] : roster_)
            {
                queue_.schedule(p.join_at, [this, id = id] { on_join(id); });
            }
            for (const auto& j : scenario_.jobs)
            {
                queue_.schedule(j.submit_at, [this, id = j.id] { on_submit(id); });
            }
            for (const auto& f : scenario_.failures)
            {
                inject_failure(f.peer, f.at);
            }
        }

        Simulation(const Simulation&) = delete;
        Simulation& operator=(const Simulation&) = delete;

        /// Crash `peer` at `at` (in addition to the scenario's failures).
        void inject_failure(PeerId peer, SimTime at)
        {
            queue_.schedule(at, [this, peer] { on_failure(peer); });
        }

        /// Run to quiescence (or the horizon) and report.
        RunResult run()
        {
            while (!queue_.empty() && queue_.now() <= opt_.horizon)
            {
                queue_.step();
                start_ready_jobs();
                if (opt_.check_invariants)
                {
                    check_now();
                }
            }
            trace_.append(queue_.now(), "RunFinished", {{"events", queue_.executed()}});

            const auto stats = runtime_.stats();
            metrics_.migrations_started = stats.migrations_started;
            metrics_.migrations_committed = stats.migrations_committed;
            metrics_.migrations_failed = stats.migrations_failed;
            metrics_.migration_bytes = stats.migration_bytes;
            metrics_.remote_calls = stats.remote_calls;
            metrics_.mean_placement_latency = placed_ == 0 ? 0.0 : placement_sum_ / static_cast<double>(placed_);
            metrics_.mean_response_time = metrics_.jobs_completed == 0
                                              ? 0.0
                                              : response_sum_ / static_cast<double>(metrics_.jobs_completed);
            const Partition p = partition_from_state(overlay_);
            fill_partition_metrics(metrics_, p, topology_, scenario_.baseline_trials);
            metrics_.trace_events = trace_.size();
            return {trace_, metrics_, p, violations_};
        }

        [[nodiscard]] const OverlayState& overlay() const noexcept { return overlay_; }
        [[nodiscard]] const NetworkTopology& topology() const noexcept { return topology_; }
        [[nodiscard]] const MigrationRuntime& runtime() const noexcept { return runtime_; }
        [[nodiscard]] const Trace& trace() const noexcept { return trace_; }
        [[nodiscard]] const std::map<PeerId, UsageMonitor>& monitors() const noexcept { return monitors_; }
        [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

    private:
        struct JobRun
        {
            JobSpec spec;
            bool awaiting_start = false;
        };

        MigrationRuntime::Hooks make_hooks()
        {
            MigrationRuntime::Hooks h;
            h.admit = [this](PeerId dest, JobId job) { return admit(dest, job); };
            h.finished = [this](JobId job, PeerId, SimTime) { release(job); };
            h.result_returned = [this](JobId job, SimTime at) {
                ++metrics_.jobs_completed;
                response_sum_ += at - jobs_.at(job).spec.submit_at;
            };
            return h;
        }

        void record(std::string kind, Json data) { trace_.append(queue_.now(), std::move(kind), std::move(data)); }

        void record_error(std::string_view op, const Error& e, Json context)
        {
            ++metrics_.errors;
            Json data = {{"op", op}, {"code", to_string(e.code())}, {"message", e.what()}};
            for (const auto& [k, v] : context.items())
            {
                data[k] = v;
            }
            record("Error", std::move(data));
        }

        void record_overlay(const OverlayEvents& events)
        {
            for (const auto& e : events)
            {
                Json d = {{"peer", e.peer.value}};
                if (e.subgrid.value != 0)
                {
                    d["subgrid"] = e.subgrid.value;
                }
                if (e.other)
                {
                    d["other"] = e.other->value;
                }
                if (e.from)
                {
                    d["from"] = e.from->value;
                }
                switch (e.kind)
                {
                case OverlayEventKind::PeerJoined: ++metrics_.peers_joined; break;
                case OverlayEventKind::PeerFailed:
                case OverlayEventKind::MasterFailed: ++metrics_.peers_failed; break;
                case OverlayEventKind::InfoPropagated:
                    ++metrics_.info_messages;
                    d["entries"] = e.count;
                    d["latency"] = e.latency;
                    break;
                default: break;
                }
                record(std::string(to_string(e.kind)), std::move(d));
            }
        }

        void advertise(PeerId p)
        {
            if (!overlay_.is_live(p))
            {
                return;
            }
            const auto adv = roster_.at(p).advertisement(queue_.now(), committed(p));
            record_overlay(register_resources(overlay_, p, adv, queue_.now()));
        }

        [[nodiscard]] ResourceUsage committed(PeerId p) const
        {
            ResourceUsage total;
            const auto it = admitted_.find(p);
            if (it != admitted_.end())
            {
                for (JobId j : it->second)
                {
                    total += jobs_.at(j).spec.requirements.as_usage();
                }
            }
            return total;
        }

        Admission admit(PeerId dest, JobId job)
        {
            const JobSpec& spec = jobs_.at(job).spec;
            if (dest == spec.submitter || admitted_[dest].contains(job))
            {
                return Admission::admit();
            }
            const PeerSpec& host = roster_.at(dest);
            const Admission a = check_admission(spec.requirements, host.effective_policy(),
                                                HostUsage{host.cpu_capacity, committed(dest), host.load});
            if (a.admitted())
            {
                admitted_[dest].insert(job);
                advertise(dest);
            }
            return a;
        }

        void release(JobId job)
        {
            for (auto& [node, jobs] : admitted_)
            {
                if (jobs.erase(job) > 0)
                {
                    advertise(node);
                }
            }
        }

        void ensure_background()
        {
            if (!round_scheduled_)
            {
                round_scheduled_ = true;
                queue_.schedule_after(scenario_.propagation_interval, [this] { on_round(); });
            }
            if (!tick_scheduled_)
            {
                tick_scheduled_ = true;
                queue_.schedule_after(scenario_.tick, [this] { on_tick(); });
            }
        }

        [[nodiscard]] bool foreground_pending() const
        {
            const std::size_t background = (round_scheduled_ ? 1 : 0) + (tick_scheduled_ ? 1 : 0);
            return queue_.pending() > background;
        }

        void on_join(PeerId p)
        {
            try
            {
                const auto events = join_peer(overlay_, p, topology_, queue_.now());
                record_overlay(events);
                runtime_.add_node(p, queue_.now());
                const PeerSpec& spec = roster_.at(p);
                monitors_.try_emplace(p, p, spec.effective_policy(), spec.cpu_capacity);
                advertise(p);
                for (const auto& e : events)
                {
                    if (e.kind == OverlayEventKind::SubGridAnnounced)
                    {
                        const SimTime delay = transfer_latency(topology_.link(*e.other, e.peer), 0.0);
                        queue_.schedule_after(delay, [this, to = e.peer, sg = e.subgrid] { on_announcement(to, sg); });
                    }
                }
            }
            catch (const Error& e)
            {
                record_error("join", e, {{"peer", p.value}});
            }
            ensure_background();
        }

        void on_announcement(PeerId to, SubGridId sg)
        {
            if (!overlay_.is_live(to) || !overlay_.subgrids.contains(sg))
            {
                record("AnnouncementDropped", {{"peer", to.value}, {"subgrid", sg.value}});
                return;
            }
            record_overlay(handle_subgrid_announcement(overlay_, to, sg, topology_, queue_.now()));
        }

        void on_failure(PeerId p)
        {
            if (!overlay_.is_live(p))
            {
                const Errc code = overlay_.failed.contains(p) ? Errc::AlreadyFailed : Errc::NotJoined;
                record_error("fail", Error(code, "peer " + to_string(p) + " is not live"), {{"peer", p.value}});
                return;
            }
            runtime_.fail_node(p);
            record_overlay(fail_peer(overlay_, p, topology_, queue_.now()));
            ensure_background();
        }

        void on_submit(JobId id)
        {
            JobRun& run = jobs_.at(id);
            const JobSpec& spec = run.spec;
            if (!overlay_.is_live(spec.submitter))
            {
                ++metrics_.jobs_rejected;
                record("JobRejected", {{"job", id.value}, {"reason", "submitter not live"}});
                return;
            }
            record("JobSubmitted", {{"job", id.value}, {"submitter", spec.submitter.value},
                                    {"workload", spec.task.workload}, {"threads", spec.task.threads}});
            const auto threads = runtime_.spawn_process(spec.submitter, id, make_workload(spec.task));
            const JobDescriptor job{id, spec.submitter, spec.requirements, threads};
            try
            {
                const auto outcome = schedule_job(job, overlay_, topology_, scenario_.weights, queue_.now());
                ++metrics_.broker_decisions;
                record("JobScheduled", {{"job", id.value}, {"chosen", outcome.decision.chosen.value},
                                        {"score", outcome.decision.score},
                                        {"eligible", outcome.decision.eligible_count}});
                for (const auto& e : outcome.events)
                {
                    if (e.kind != BrokerEventKind::MigrationRequested)
                    {
                        continue;
                    }
                    record("MigrationRequested", {{"job", id.value}, {"thread", to_json(*e.thread)},
                                                  {"to", e.chosen.value}});
                    try
                    {
                        runtime_.migrate_thread(*e.thread, e.chosen);
                    }
                    catch (const Error& err)
                    {
                        record_error("migrate", err, {{"thread", to_json(*e.thread)}, {"to", e.chosen.value}});
                    }
                }
                run.awaiting_start = true;
            }
            catch (const Error& e)
            {
                if (e.code() != Errc::NoEligibleMachine)
                {
                    throw;
                }
                ++metrics_.jobs_rejected;
                record("JobRejected", {{"job", id.value}, {"reason", to_string(e.code())}});
                for (const auto& t : threads)
                {
                    runtime_.kill(t);
                }
            }
            ensure_background();
        }

        void start_ready_jobs()
        {
            for (auto& [id, run] : jobs_)
            {
                if (!run.awaiting_start)
                {
                    continue;
                }
                bool settled = true;
                for (const auto& t : runtime_.threads_of(id))
                {
                    settled = settled && runtime_.status(t) != ThreadStatus::Migrating;
                }
                if (settled)
                {
                    run.awaiting_start = false;
                    placement_sum_ += queue_.now() - run.spec.submit_at;
                    ++placed_;
                    runtime_.start_process(id);
                }
            }
        }

        void on_round()
        {
            round_scheduled_ = false;
            const auto events = propagate(overlay_, topology_, queue_.now());
            record_overlay(events);
            ++metrics_.propagation_rounds;
            metrics_.active_rounds += events.empty() ? 0 : 1;
            record("PropagationRound", {{"round", metrics_.propagation_rounds}, {"messages", events.size()}});
            if (!events.empty() || foreground_pending())
            {
                round_scheduled_ = true;
                queue_.schedule_after(scenario_.propagation_interval, [this] { on_round(); });
            }
        }

        void on_tick()
        {
            tick_scheduled_ = false;
            const SimTime now = queue_.now();
            for (auto& [node, monitor] : monitors_)
            {
                if (!overlay_.is_live(node))
                {
                    continue;
                }
                std::set<GridThreadId> handled;
                for (const auto& id : runtime_.resident_threads(node))
                {
                    const JobId job = runtime_.job_of(id);
                    if (runtime_.origin_of(job) == node || runtime_.finished(job))
                    {
                        continue;
                    }
                    const bool running = runtime_.status(id) == ThreadStatus::Runnable;
                    const ResourceUsage used = running ? jobs_.at(job).spec.per_thread_usage() : ResourceUsage{};
                    for (const auto& v : monitor.record_usage(id, used, now))
                    {
                        ++metrics_.violations;
                        record("Violation", {{"node", node.value}, {"thread", to_json(id)},
                                             {"axis", to_string(v.axis)}, {"observed", v.observed},
                                             {"limit", v.limit}});
                        if (!handled.insert(id).second)
                        {
                            continue;
                        }
                        for (const auto& a : enforce(v, monitor.policy(), scenario_.tick))
                        {
                            apply(a, job);
                        }
                    }
                }
            }
            if (foreground_pending())
            {
                tick_scheduled_ = true;
                queue_.schedule_after(scenario_.tick, [this] { on_tick(); });
            }
        }

        void apply(const EnforcementAction& a, JobId job)
        {
            switch (a.kind)
            {
            case EnforcementKind::ThreadBlocked: runtime_.block(a.thread); break;
            case EnforcementKind::ThreadResumed:
                queue_.schedule(a.at, [this, id = a.thread] { runtime_.resume(id); });
                break;
            case EnforcementKind::ThreadKilled: runtime_.kill(a.thread); break;
            case EnforcementKind::OriginNotified:
                record("OriginNotified", {{"thread", to_json(a.thread)}, {"origin", runtime_.origin_of(job).value}});
                break;
            }
        }

        void check_now()
        {
            auto note = [this](std::string what) {
                ++metrics_.invariant_violations;
                record("InvariantViolation", {{"what", what}});
                violations_.push_back(std::move(what));
            };
            for (auto& v : check_invariants(overlay_))
            {
                note(std::move(v));
            }
            for (auto& v : runtime_.check_residence())
            {
                note(std::move(v));
            }
        }

        Scenario scenario_;
        SimOptions opt_;
        std::uint64_t seed_;
        NetworkTopology topology_;
        EventQueue queue_;
        Trace trace_;
        OverlayState overlay_;
        MigrationRuntime runtime_;
        std::map<PeerId, PeerSpec> roster_;
        std::map<JobId, JobRun> jobs_;
        std::map<PeerId, std::set<JobId>> admitted_;
        std::map<PeerId, UsageMonitor> monitors_;
        MetricsReport metrics_;
        std::vector<std::string> violations_;
        bool round_scheduled_ = false;
        bool tick_scheduled_ = false;
        double placement_sum_ = 0.0;
        std::size_t placed_ = 0;
        double response_sum_ = 0.0;
    };

    inline RunResult run_scenario(const Scenario& scenario, SimOptions opt = {})
    {
        Simulation sim(scenario, opt);
        return sim.run();
    }
}
