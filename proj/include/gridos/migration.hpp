#pragma once

// Non-shared-memory thread migration. A thread's whole address space travels
// with it; inter-thread procedure calls are intercepted at the caller's host,
// resolved through that host's location table, and forwarded to wherever the
// callee lives. Stale tables are repaired by chain forwarding from the last
// known host, and every call executes exactly once.

#include "error.hpp"
#include "event_queue.hpp"
#include "ids.hpp"
#include "net_model.hpp"
#include "security.hpp"
#include "trace.hpp"
#include "workload.hpp"

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

namespace gridos
{
    /// Per-node source of GridThreadIds. A restart opens a new epoch, which
    /// must be later than the previous one.
    class ThreadIdAllocator
    {
    public:
        ThreadIdAllocator() = default;
        ThreadIdAllocator(PeerId node, SimTime epoch) : node_(node), epoch_(epoch) {}

        GridThreadId next() { return GridThreadId{node_, epoch_, ++counter_}; }

        void restart(SimTime epoch)
        {
            if (!(epoch > epoch_))
            {
                throw Error(Errc::InvalidEpoch, "node " + to_string(node_) + " restarted at a non-increasing epoch");
            }
            epoch_ = epoch;
            counter_ = 0;
        }

        [[nodiscard]] PeerId node() const noexcept { return node_; }
        [[nodiscard]] SimTime epoch() const noexcept { return epoch_; }

    private:
        PeerId node_;
        SimTime epoch_ = 0.0;
        std::uint64_t counter_ = 0;
    };

    enum class ThreadStatus
    {
        Runnable,
        Migrating,
        Blocked,
        Done,
    };

    inline constexpr std::string_view to_string(ThreadStatus s) noexcept
    {
        switch (s)
        {
        case ThreadStatus::Runnable: return "Runnable";
        case ThreadStatus::Migrating: return "Migrating";
        case ThreadStatus::Blocked: return "Blocked";
        case ThreadStatus::Done: return "Done";
        }
        return "?";
    }

    /// Where a node believes each thread runs. Entries carry the migration
    /// count that produced them; older information never overwrites newer.
    class ThreadLocationTable
    {
    public:
        void update(const GridThreadId& id, PeerId host, std::uint64_t version)
        {
            auto [it, inserted] = entries_.try_emplace(id, Entry{host, version});
            if (!inserted && version > it->second.version)
            {
                it->second = Entry{host, version};
            }
        }

        [[nodiscard]] std::optional<PeerId> lookup(const GridThreadId& id) const
        {
            const auto it = entries_.find(id);
            if (it == entries_.end())
            {
                return std::nullopt;
            }
            return it->second.host;
        }

        [[nodiscard]] std::optional<std::pair<PeerId, std::uint64_t>> entry(const GridThreadId& id) const
        {
            const auto it = entries_.find(id);
            if (it == entries_.end())
            {
                return std::nullopt;
            }
            return std::pair{it->second.host, it->second.version};
        }

        [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

    private:
        struct Entry
        {
            PeerId host;
            std::uint64_t version = 0;
        };

        std::map<GridThreadId, Entry> entries_;
    };

    struct RemoteCall
    {
        GridThreadId caller;
        GridThreadId callee;
        std::string procedure;
        Bytes payload;
        PeerId reply_to; // caller's host when the call was placed
        std::uint64_t seq = 0;
    };

    struct CallRoute
    {
        bool local = true;
        PeerId dest;

        static CallRoute local_call(PeerId host) { return {true, host}; }
        static CallRoute remote(PeerId host) { return {false, host}; }

        friend bool operator==(const CallRoute&, const CallRoute&) = default;
    };

    /// Local iff the table places the callee on the caller's own host.
    inline CallRoute intercept_call(const RemoteCall& call, const ThreadLocationTable& locations)
    {
        const auto host = locations.lookup(call.callee);
        if (!host)
        {
            throw Error(Errc::UnknownCallee, "no location for thread " + to_string(call.callee));
        }
        return *host == call.reply_to ? CallRoute::local_call(*host) : CallRoute::remote(*host);
    }

    /// Serialized thread: what crosses the wire on migration.
    struct ThreadImage
    {
        GridThreadId id;
        JobId job;
        std::size_t index = 0;
        Bytes address_space;
        ThreadStatus status = ThreadStatus::Runnable;
    };

    struct MigrationStats
    {
        std::size_t migrations_started = 0;
        std::size_t migrations_committed = 0;
        std::size_t migrations_failed = 0;
        double migration_bytes = 0.0;
        std::size_t remote_calls = 0;
        std::size_t chain_forwards = 0;
        std::size_t duplicates_dropped = 0;
        std::size_t calls_unreachable = 0;

        friend bool operator==(const MigrationStats&, const MigrationStats&) = default;
    };

    /// Hosts the threads of grid processes on simulated nodes and moves calls,
    /// replies and thread images between them through an EventQueue.
    class MigrationRuntime
    {
    public:
        struct Hooks
        {
            /// Whether `dest` admits threads of `job`; absent means always.
            std::function<Admission(PeerId dest, JobId job)> admit;
            /// The process produced its result at its root thread's host.
            std::function<void(JobId job, PeerId where, SimTime at)> finished;
            /// The result reached the process's origin node.
            std::function<void(JobId job, SimTime at)> result_returned;
        };

        MigrationRuntime(EventQueue& queue, const NetworkTopology& topology, Trace* trace, Hooks hooks = {})
            : queue_(queue), topology_(topology), trace_(trace), hooks_(std::move(hooks))
        {
        }

        MigrationRuntime(const MigrationRuntime&) = delete;
        MigrationRuntime& operator=(const MigrationRuntime&) = delete;

        /// Duplicate every remote call message (test harness fault injection).
        void set_duplicate_calls(bool on) noexcept { duplicate_calls_ = on; }

        void add_node(PeerId node, SimTime epoch)
        {
            auto [it, inserted] = nodes_.try_emplace(node);
            if (inserted)
            {
                it->second.ids = ThreadIdAllocator(node, epoch);
            }
        }

        [[nodiscard]] bool has_node(PeerId node) const { return nodes_.contains(node); }

        GridThreadId new_thread_id(PeerId node) { return node_at(node).ids.next(); }

        /// Create one thread per declared thread of the workload, all Runnable
        /// on `node`. Nothing runs until start_process().
        std::vector<GridThreadId> spawn_process(PeerId node, JobId job, std::shared_ptr<const Workload> workload)
        {
            Node& n = node_at(node);
            if (n.failed)
            {
                throw Error(Errc::NotJoined, "node " + to_string(node) + " has failed");
            }
            if (processes_.contains(job))
            {
                throw Error(Errc::ValidationError, "job " + std::to_string(job.value) + " already spawned");
            }
            Process& p = processes_[job];
            p.job = job;
            p.origin = node;
            p.workload = std::move(workload);
            for (std::size_t i = 0; i < p.workload->thread_count(); ++i)
            {
                const GridThreadId id = n.ids.next();
                p.threads.push_back(id);
                Hosted h{Control{job, i}, ProtectedRegion(id, node, p.workload->initial_state(i)),
                         ThreadStatus::Runnable, false, {}};
                n.threads.emplace(id, std::move(h));
                n.locations.update(id, node, 0);
                threads_[id] = ThreadState{ThreadStatus::Runnable, node, job, i};
            }
            if (trace_ != nullptr)
            {
                Json ids = Json::array();
                for (const auto& id : p.threads)
                {
                    ids.push_back(to_json(id));
                }
                record("ProcessSpawned", {{"job", job.value}, {"node", node.value},
                                          {"workload", std::string(p.workload->name())}, {"threads", ids}});
            }
            return p.threads;
        }

        /// Let every thread issue its start-up calls.
        void start_process(JobId job)
        {
            Process& p = process_at(job);
            if (p.started)
            {
                return;
            }
            p.started = true;
            record("ProcessStarted", {{"job", job.value}});
            for (const GridThreadId& id : p.threads)
            {
                ThreadState& ts = threads_.at(id);
                if (ts.status == ThreadStatus::Migrating)
                {
                    ts.start_due = true;
                    continue;
                }
                if (ts.status != ThreadStatus::Done)
                {
                    start_thread(id);
                }
            }
        }

        /// Move a thread and its address space to `dest`. A no-op when it is
        /// already there. The source keeps a copy until the destination
        /// acknowledges; if the destination is down the thread resumes at the
        /// source.
        void migrate_thread(const GridThreadId& id, PeerId dest)
        {
            const auto st = threads_.find(id);
            if (st == threads_.end())
            {
                throw Error(Errc::UnknownThread, to_string(id));
            }
            ThreadState& ts = st->second;
            if (ts.status != ThreadStatus::Runnable && ts.status != ThreadStatus::Blocked)
            {
                throw Error(Errc::InvalidThreadState,
                            to_string(id) + " is " + std::string(to_string(ts.status)));
            }
            const PeerId source = ts.host;
            node_at(dest);
            if (nodes_.at(source).threads.at(id).busy)
            {
                throw Error(Errc::InvalidThreadState, to_string(id) + " is mid-handler");
            }
            if (dest == source)
            {
                record("MigrationNoop", {{"thread", to_json(id)}, {"node", source.value}});
                return;
            }
            if (hooks_.admit)
            {
                const Admission a = hooks_.admit(dest, ts.job);
                if (!a.admitted())
                {
                    record("MigrationDenied", {{"thread", to_json(id)}, {"to", dest.value},
                                               {"reason", std::string(to_string(*a.denied))}});
                    throw Error(Errc::DestinationDenied, to_string(id) + " refused by " + to_string(dest) + ": "
                                                             + std::string(to_string(*a.denied)));
                }
            }

            Node& src = nodes_.at(source);
            Hosted& h = src.threads.at(id);
            h.retained = true;
            h.status = ThreadStatus::Migrating;
            ts.status = ThreadStatus::Migrating;

            Transfer t;
            t.control = h.control;
            t.control.location_version += 1;
            t.address_space = *access_protected(JobAccessor{id}, h.region, nullptr, queue_.now()).data;
            for (const auto& other : process_at(ts.job).threads)
            {
                if (const auto e = src.locations.entry(other); e && other != id)
                {
                    t.siblings.emplace_back(other, e->first, e->second);
                }
            }
            const double size = static_cast<double>(t.address_space.size());
            const SimTime arrive = queue_.now() + transfer_latency(topology_.link(source, dest), size);
            ++stats_.migrations_started;
            stats_.migration_bytes += size;
            record("MigrationStarted", {{"thread", to_json(id)}, {"job", ts.job.value}, {"from", source.value},
                                        {"to", dest.value}, {"bytes", size}, {"arrive_at", arrive}});
            queue_.schedule(arrive, [this, id, source, dest, t = std::move(t)]() mutable {
                arrive_image(id, source, dest, std::move(t));
            });
        }

        /// Node crash: resident threads are lost and later deliveries to it drop.
        void fail_node(PeerId node)
        {
            Node& n = node_at(node);
            if (n.failed)
            {
                throw Error(Errc::AlreadyFailed, "node " + to_string(node));
            }
            n.failed = true;
            for (auto& [id, h] : n.threads)
            {
                if (h.retained)
                {
                    continue;
                }
                ThreadState& ts = threads_.at(id);
                if (ts.status != ThreadStatus::Done)
                {
                    ts.status = ThreadStatus::Done;
                    record("ThreadLost", {{"thread", to_json(id)}, {"node", node.value}});
                }
            }
            n.threads.clear();
        }

        [[nodiscard]] bool node_failed(PeerId node) const { return nodes_.at(node).failed; }

        /// Stop executing a thread; calls queue up until resume().
        void block(const GridThreadId& id)
        {
            Hosted* h = resident_copy(id);
            if (h == nullptr || h->status != ThreadStatus::Runnable)
            {
                return;
            }
            h->status = ThreadStatus::Blocked;
            threads_.at(id).status = ThreadStatus::Blocked;
            record("ThreadBlocked", {{"thread", to_json(id)}, {"node", threads_.at(id).host.value}});
        }

        void resume(const GridThreadId& id)
        {
            Hosted* h = resident_copy(id);
            if (h == nullptr || h->status != ThreadStatus::Blocked)
            {
                return;
            }
            h->status = ThreadStatus::Runnable;
            threads_.at(id).status = ThreadStatus::Runnable;
            record("ThreadResumed", {{"thread", to_json(id)}, {"node", threads_.at(id).host.value}});
            drain(nodes_.at(threads_.at(id).host), id);
        }

        /// Terminate a thread where it runs.
        void kill(const GridThreadId& id)
        {
            Hosted* h = resident_copy(id);
            if (h == nullptr)
            {
                return;
            }
            ThreadState& ts = threads_.at(id);
            const PeerId host = ts.host;
            ts.status = ThreadStatus::Done;
            nodes_.at(host).threads.erase(id);
            record("ThreadKilled", {{"thread", to_json(id)}, {"node", host.value}});
        }

        [[nodiscard]] ThreadStatus status(const GridThreadId& id) const
        {
            const auto it = threads_.find(id);
            if (it == threads_.end())
            {
                throw Error(Errc::UnknownThread, to_string(id));
            }
            return it->second.status;
        }

        /// Node currently executing the thread (none while migrating or done).
        [[nodiscard]] std::optional<PeerId> host_of(const GridThreadId& id) const
        {
            const auto it = threads_.find(id);
            if (it == threads_.end() || it->second.status == ThreadStatus::Migrating
                || it->second.status == ThreadStatus::Done)
            {
                return std::nullopt;
            }
            return it->second.host;
        }

        [[nodiscard]] JobId job_of(const GridThreadId& id) const { return threads_.at(id).job; }

        [[nodiscard]] const ThreadLocationTable& locations(PeerId node) const { return nodes_.at(node).locations; }

        /// Threads executing (or blocked) on `node`.
        [[nodiscard]] std::vector<GridThreadId> resident_threads(PeerId node) const
        {
            std::vector<GridThreadId> out;
            for (const auto& [id, h] : nodes_.at(node).threads)
            {
                if (!h.retained)
                {
                    out.push_back(id);
                }
            }
            return out;
        }

        [[nodiscard]] const std::vector<GridThreadId>& threads_of(JobId job) const { return process_at(job).threads; }
        [[nodiscard]] PeerId origin_of(JobId job) const { return process_at(job).origin; }
        [[nodiscard]] bool finished(JobId job) const { return process_at(job).finished; }

        /// Output of every thread of the job, read through its own region. A
        /// lost or killed thread contributes an empty buffer.
        [[nodiscard]] std::vector<Bytes> outputs(JobId job)
        {
            Process& p = process_at(job);
            std::vector<Bytes> out;
            for (std::size_t i = 0; i < p.threads.size(); ++i)
            {
                Hosted* h = resident_copy(p.threads[i]);
                if (h == nullptr)
                {
                    out.emplace_back();
                    continue;
                }
                const AccessResult mem = access_protected(JobAccessor{p.threads[i]}, h->region, nullptr, queue_.now());
                out.push_back(p.workload->output(i, *mem.data));
            }
            return out;
        }

        /// Read-only capture of a thread's serialized image.
        [[nodiscard]] ThreadImage image(const GridThreadId& id)
        {
            Hosted* h = resident_copy(id);
            if (h == nullptr)
            {
                throw Error(Errc::UnknownThread, to_string(id) + " has no resident copy");
            }
            const ThreadState& ts = threads_.at(id);
            return ThreadImage{id, ts.job, ts.index,
                               *access_protected(JobAccessor{id}, h->region, nullptr, queue_.now()).data, ts.status};
        }

        /// Host-local access attempt against a resident region (always denied).
        AccessResult host_access(PeerId host, const GridThreadId& id, UsageMonitor* audit)
        {
            Hosted* h = resident_copy(id);
            if (h == nullptr)
            {
                throw Error(Errc::UnknownThread, to_string(id));
            }
            return access_protected(HostLocal{host}, h->region, audit, queue_.now());
        }

        /// Every live thread runs on exactly one node; a migrating thread on none.
        [[nodiscard]] std::vector<std::string> check_residence() const
        {
            std::map<GridThreadId, std::size_t> copies;
            for (const auto& entry : nodes_)
            {
                for (const auto& [id, h] : entry.second.threads)
                {
                    if (!h.retained)
                    {
                        ++copies[id];
                    }
                }
            }
            std::vector<std::string> bad;
            for (const auto& [id, ts] : threads_)
            {
                const std::size_t c = copies.contains(id) ? copies.at(id) : 0;
                const std::size_t want =
                    (ts.status == ThreadStatus::Runnable || ts.status == ThreadStatus::Blocked) ? 1 : 0;
                if (c != want)
                {
                    bad.push_back(to_string(id) + " has " + std::to_string(c) + " executing copies while "
                                  + std::string(to_string(ts.status)));
                }
            }
            return bad;
        }

        [[nodiscard]] const MigrationStats& stats() const noexcept { return stats_; }

        /// Deliver an extra copy of a call to its callee's current host.
        void inject_duplicate(const RemoteCall& call)
        {
            const auto where = host_of(call.callee);
            if (!where)
            {
                return;
            }
            Envelope e{MsgKind::Call, call.callee, call.caller, call.seq, call.procedure, call.payload,
                       call.reply_to, call.reply_to};
            queue_.schedule(queue_.now(), [this, node = *where, e = std::move(e)]() mutable { deliver(node, std::move(e)); });
        }

    private:
        enum class MsgKind
        {
            Call,
            Reply,
            CallFailed,
        };

        struct Envelope
        {
            MsgKind kind = MsgKind::Call;
            GridThreadId target;
            GridThreadId sender;
            std::uint64_t seq = 0;
            std::string procedure;
            Bytes payload;
            PeerId reply_to;  // sender's host at send time
            PeerId last_hop;  // node that put the envelope on the wire
            std::uint32_t hops = 0;
        };

        /// Bookkeeping that migrates with the thread.
        struct Control
        {
            JobId job;
            std::size_t index = 0;
            std::uint64_t next_seq = 0;
            std::map<std::uint64_t, std::string> outstanding;
            std::set<std::pair<GridThreadId, std::uint64_t>> executed;
            std::uint64_t location_version = 0;
        };

        struct Hosted
        {
            Control control;
            ProtectedRegion region;
            ThreadStatus status = ThreadStatus::Runnable;
            bool retained = false; // source-side copy of an in-flight migration
            std::deque<Envelope> pending;
            bool busy = false; // a handler is still computing
        };

        struct Node
        {
            bool failed = false;
            ThreadIdAllocator ids;
            std::map<GridThreadId, Hosted> threads;
            ThreadLocationTable locations;
        };

        struct ThreadState
        {
            ThreadStatus status = ThreadStatus::Runnable;
            PeerId host;
            JobId job;
            std::size_t index = 0;
            bool start_due = false; // process started while this thread was in flight
        };

        struct Process
        {
            JobId job;
            PeerId origin;
            std::shared_ptr<const Workload> workload;
            std::vector<GridThreadId> threads;
            bool started = false;
            bool finished = false;
        };

        struct Transfer
        {
            Control control;
            Bytes address_space;
            // The source's view of where the sibling threads run.
            std::vector<std::tuple<GridThreadId, PeerId, std::uint64_t>> siblings;
        };

        Node& node_at(PeerId node)
        {
            const auto it = nodes_.find(node);
            if (it == nodes_.end())
            {
                throw Error(Errc::UnknownPeer, "node " + to_string(node) + " is not hosted by the runtime");
            }
            return it->second;
        }

        Process& process_at(JobId job)
        {
            const auto it = processes_.find(job);
            if (it == processes_.end())
            {
                throw Error(Errc::ValidationError, "unknown job " + std::to_string(job.value));
            }
            return it->second;
        }

        const Process& process_at(JobId job) const { return const_cast<MigrationRuntime*>(this)->process_at(job); }

        Hosted* resident_copy(const GridThreadId& id)
        {
            const auto st = threads_.find(id);
            if (st == threads_.end() || st->second.status == ThreadStatus::Done
                || st->second.status == ThreadStatus::Migrating)
            {
                return nullptr;
            }
            Node& n = nodes_.at(st->second.host);
            const auto it = n.threads.find(id);
            return it == n.threads.end() || it->second.retained ? nullptr : &it->second;
        }

        void record(std::string kind, Json data)
        {
            if (trace_ != nullptr)
            {
                trace_->append(queue_.now(), std::move(kind), std::move(data));
            }
        }

        SimTime one_way(PeerId a, PeerId b, double bytes) const
        {
            return a == b ? 0.0 : transfer_latency(topology_.link(a, b), bytes);
        }

        void send(PeerId from, PeerId to, Envelope e)
        {
            e.last_hop = from;
            const SimTime at = queue_.now() + one_way(from, to, static_cast<double>(e.payload.size()));
            if (from != to && e.kind == MsgKind::Call)
            {
                ++stats_.remote_calls;
                record("CallForwarded", {{"caller", to_json(e.sender)}, {"callee", to_json(e.target)},
                                         {"call_seq", e.seq}, {"from", from.value}, {"to", to.value},
                                         {"bytes", e.payload.size()}, {"deliver_at", at}});
                if (duplicate_calls_)
                {
                    queue_.schedule(at, [this, to, e]() mutable { deliver(to, std::move(e)); });
                }
            }
            queue_.schedule(at, [this, to, e = std::move(e)]() mutable { deliver(to, std::move(e)); });
        }

        /// Route from node `at` using its location table.
        void route(Node& at, PeerId at_id, Envelope e)
        {
            if (at.threads.contains(e.target))
            {
                send(at_id, at_id, std::move(e));
                return;
            }
            auto host = at.locations.lookup(e.target);
            if (!host)
            {
                // The process origin hears of every move; let it forward.
                const PeerId origin = processes_.at(threads_.at(e.target).job).origin;
                if (origin == at_id)
                {
                    unreachable(at_id, std::move(e));
                    return;
                }
                host = origin;
            }
            send(at_id, *host, std::move(e));
        }

        void deliver(PeerId node_id, Envelope e)
        {
            Node& n = nodes_.at(node_id);
            if (n.failed)
            {
                record("MessageDropped", {{"node", node_id.value}, {"target", to_json(e.target)}, {"call_seq", e.seq}});
                if (e.kind == MsgKind::Call)
                {
                    // The sender times out after the return half of the round trip.
                    const PeerId back = e.reply_to;
                    queue_.schedule(queue_.now() + one_way(node_id, back, 0.0),
                                    [this, back, e = std::move(e)]() mutable { notify_failure(back, std::move(e)); });
                }
                return;
            }
            const auto it = n.threads.find(e.target);
            if (it != n.threads.end())
            {
                Hosted& h = it->second;
                if (h.status == ThreadStatus::Runnable && h.pending.empty() && !h.busy)
                {
                    execute(n, node_id, e.target, std::move(e));
                }
                else
                {
                    const GridThreadId target = e.target;
                    h.pending.push_back(std::move(e));
                    if (h.status == ThreadStatus::Runnable)
                    {
                        drain(n, target);
                    }
                }
                return;
            }
            const auto host = n.locations.lookup(e.target);
            if (host && *host != node_id && threads_.at(e.target).status != ThreadStatus::Done)
            {
                ++stats_.chain_forwards;
                record("CallChainForwarded", {{"target", to_json(e.target)}, {"call_seq", e.seq}, {"at", node_id.value},
                                              {"to", host->value}, {"hops", e.hops + 1}});
                // Tell the sender's host where the thread went.
                const PeerId sender_host = e.last_hop;
                if (sender_host != node_id)
                {
                    const std::uint64_t version = location_version_of(e.target);
                    const PeerId where = *host;
                    const GridThreadId target = e.target;
                    queue_.schedule(queue_.now() + one_way(node_id, sender_host, 0.0),
                                    [this, sender_host, target, where, version] {
                                        apply_location(sender_host, target, where, version);
                                    });
                }
                e.hops += 1;
                send(node_id, *host, std::move(e));
                return;
            }
            unreachable(node_id, std::move(e));
        }

        void start_thread(const GridThreadId& id)
        {
            ThreadState& ts = threads_.at(id);
            ts.start_due = false;
            Node& n = nodes_.at(ts.host);
            Hosted& h = n.threads.at(id);
            std::vector<OutCall> calls;
            {
                const AccessResult mem = access_protected(JobAccessor{id}, h.region, nullptr, queue_.now());
                calls = processes_.at(ts.job).workload->start(ts.index, *mem.data);
            }
            dispatch(n, id, std::move(calls));
        }

        void unreachable(PeerId at, Envelope e)
        {
            if (e.kind != MsgKind::Call)
            {
                record("MessageDropped", {{"node", at.value}, {"target", to_json(e.target)}, {"call_seq", e.seq}});
                return;
            }
            const PeerId back = e.reply_to;
            queue_.schedule(queue_.now() + one_way(at, back, 0.0),
                            [this, back, e = std::move(e)]() mutable { notify_failure(back, std::move(e)); });
        }

        void notify_failure(PeerId at, Envelope call)
        {
            ++stats_.calls_unreachable;
            record("CalleeUnreachable", {{"caller", to_json(call.sender)}, {"callee", to_json(call.target)},
                                         {"call_seq", call.seq}});
            Node& n = nodes_.at(at);
            if (n.failed)
            {
                return;
            }
            Envelope f;
            f.kind = MsgKind::CallFailed;
            f.target = call.sender;
            f.sender = call.target;
            f.seq = call.seq;
            f.procedure = call.procedure;
            f.reply_to = at;
            route(n, at, std::move(f));
        }

        void drain(Node& n, const GridThreadId& id)
        {
            for (;;)
            {
                const auto it = n.threads.find(id);
                if (it == n.threads.end() || it->second.status != ThreadStatus::Runnable || it->second.busy
                    || it->second.pending.empty())
                {
                    return;
                }
                Envelope e = std::move(it->second.pending.front());
                it->second.pending.pop_front();
                const PeerId node_id = threads_.at(id).host;
                execute(n, node_id, id, std::move(e));
            }
        }

        void execute(Node& n, PeerId node_id, const GridThreadId& id, Envelope e)
        {
            Hosted& h = n.threads.at(id);
            Process& p = processes_.at(h.control.job);
            const std::size_t index = h.control.index;
            HandlerResult result;
            {
                const AccessResult mem = access_protected(JobAccessor{id}, h.region, nullptr, queue_.now());
                Bytes& state = *mem.data;
                switch (e.kind)
                {
                case MsgKind::Call:
                    if (!h.control.executed.insert({e.sender, e.seq}).second)
                    {
                        ++stats_.duplicates_dropped;
                        record("DuplicateDropped", {{"callee", to_json(id)}, {"caller", to_json(e.sender)},
                                                    {"call_seq", e.seq}});
                        return;
                    }
                    result = p.workload->on_call(index, state, e.procedure, e.payload);
                    record("CallExecuted", {{"callee", to_json(id)}, {"caller", to_json(e.sender)}, {"call_seq", e.seq},
                                            {"node", node_id.value}, {"procedure", e.procedure}});
                    break;
                case MsgKind::Reply:
                    if (h.control.outstanding.erase(e.seq) == 0)
                    {
                        ++stats_.duplicates_dropped;
                        record("DuplicateDropped", {{"callee", to_json(id)}, {"caller", to_json(e.sender)},
                                                    {"call_seq", e.seq}});
                        return;
                    }
                    result = p.workload->on_reply(index, state, e.procedure, e.payload);
                    break;
                case MsgKind::CallFailed:
                    if (h.control.outstanding.erase(e.seq) == 0)
                    {
                        return;
                    }
                    p.workload->on_call_failed(index, state, e.procedure);
                    return;
                }
            }

            std::optional<std::pair<PeerId, Envelope>> reply;
            if (e.kind == MsgKind::Call)
            {
                Envelope r;
                r.kind = MsgKind::Reply;
                r.target = e.sender;
                r.sender = id;
                r.seq = e.seq;
                r.procedure = e.procedure;
                r.payload = std::move(result.reply);
                r.reply_to = node_id;
                // Replies go back to the caller's host at call time and are
                // chain-forwarded from there if the caller has since moved.
                reply.emplace(e.reply_to, std::move(r));
            }
            const SimTime cost = p.workload->compute_time();
            if (cost <= 0.0)
            {
                complete(node_id, id, std::move(reply), std::move(result));
                return;
            }
            h.busy = true;
            queue_.schedule(queue_.now() + cost, [this, node_id, id, reply = std::move(reply),
                                                  result = std::move(result)]() mutable {
                Node& at = nodes_.at(node_id);
                const auto it = at.threads.find(id);
                if (at.failed || it == at.threads.end())
                {
                    return;
                }
                it->second.busy = false;
                complete(node_id, id, std::move(reply), std::move(result));
                drain(at, id);
            });
        }

        /// Effects of a handler once its compute time has elapsed.
        void complete(PeerId node_id, const GridThreadId& id, std::optional<std::pair<PeerId, Envelope>> reply,
                      HandlerResult result)
        {
            Node& n = nodes_.at(node_id);
            Process& p = processes_.at(threads_.at(id).job);
            if (reply)
            {
                send(node_id, reply->first, std::move(reply->second));
            }
            dispatch(n, id, std::move(result.calls));

            if (result.finished && !p.finished)
            {
                p.finished = true;
                record("ProcessFinished", {{"job", p.job.value}, {"node", node_id.value}});
                if (hooks_.finished)
                {
                    hooks_.finished(p.job, node_id, queue_.now());
                }
                const JobId job = p.job;
                const PeerId origin = p.origin;
                auto deliver_result = [this, job, origin] {
                    if (nodes_.at(origin).failed)
                    {
                        return;
                    }
                    record("JobResultReturned", {{"job", job.value}, {"node", origin.value}});
                    if (hooks_.result_returned)
                    {
                        hooks_.result_returned(job, queue_.now());
                    }
                };
                queue_.schedule(queue_.now() + one_way(node_id, origin, 0.0), deliver_result);
            }
        }

        void dispatch(Node& n, const GridThreadId& caller, std::vector<OutCall> calls)
        {
            if (calls.empty())
            {
                return;
            }
            Hosted& h = n.threads.at(caller);
            const Process& p = processes_.at(h.control.job);
            const PeerId here = threads_.at(caller).host;
            for (auto& c : calls)
            {
                if (c.callee >= p.threads.size())
                {
                    throw Error(Errc::UnknownCallee, "thread index " + std::to_string(c.callee));
                }
                Envelope e;
                e.kind = MsgKind::Call;
                e.target = p.threads[c.callee];
                e.sender = caller;
                e.seq = h.control.next_seq++;
                e.procedure = std::move(c.procedure);
                e.payload = std::move(c.payload);
                e.reply_to = here;
                h.control.outstanding.emplace(e.seq, e.procedure);

                if (!n.locations.lookup(e.target))
                {
                    route(n, here, std::move(e));
                    continue;
                }
                const CallRoute r = intercept_call({e.sender, e.target, e.procedure, {}, here, e.seq}, n.locations);
                send(here, r.dest, std::move(e));
            }
        }

        std::uint64_t location_version_of(const GridThreadId& id)
        {
            const ThreadState& ts = threads_.at(id);
            Node& n = nodes_.at(ts.host);
            const auto it = n.threads.find(id);
            return it == n.threads.end() ? 0 : it->second.control.location_version;
        }

        void apply_location(PeerId node, const GridThreadId& id, PeerId host, std::uint64_t version)
        {
            Node& n = nodes_.at(node);
            if (!n.failed)
            {
                n.locations.update(id, host, version);
            }
        }

        void arrive_image(const GridThreadId& id, PeerId source, PeerId dest, Transfer t)
        {
            Node& d = nodes_.at(dest);
            if (d.failed)
            {
                // No acknowledgement comes back; the source times out after
                // the return half of the round trip and resumes the thread.
                queue_.schedule(queue_.now() + one_way(dest, source, 0.0), [this, id, source, dest] {
                    rollback(id, source, dest);
                });
                return;
            }
            const std::uint64_t version = t.control.location_version;
            for (const auto& [other, host, v] : t.siblings)
            {
                d.locations.update(other, host, v);
            }
            Hosted h{std::move(t.control), ProtectedRegion(id, dest, std::move(t.address_space)),
                     ThreadStatus::Runnable, false, {}};
            d.threads.insert_or_assign(id, std::move(h));
            d.locations.update(id, dest, version);
            ThreadState& ts = threads_.at(id);
            ts.status = ThreadStatus::Runnable;
            ts.host = dest;
            record("MigrationArrived", {{"thread", to_json(id)}, {"node", dest.value}});
            if (ts.start_due)
            {
                start_thread(id);
            }
            queue_.schedule(queue_.now() + one_way(dest, source, 0.0),
                            [this, id, source, dest, version] { commit(id, source, dest, version); });
        }

        void commit(const GridThreadId& id, PeerId source, PeerId dest, std::uint64_t version)
        {
            ++stats_.migrations_committed;
            Node& s = nodes_.at(source);
            std::deque<Envelope> pending;
            if (const auto it = s.threads.find(id); it != s.threads.end() && it->second.retained)
            {
                pending = std::move(it->second.pending);
                s.threads.erase(it);
            }
            record("MigrationCommitted", {{"thread", to_json(id)}, {"from", source.value}, {"to", dest.value}});
            if (s.failed)
            {
                return;
            }
            s.locations.update(id, dest, version);
            for (auto& e : pending)
            {
                send(source, dest, std::move(e));
            }
            // Location update to every node involved with the process.
            const Process& p = processes_.at(threads_.at(id).job);
            std::set<PeerId> involved{p.origin};
            for (const auto& other : p.threads)
            {
                const ThreadState& ots = threads_.at(other);
                if (ots.status != ThreadStatus::Done)
                {
                    involved.insert(ots.host);
                }
            }
            involved.erase(source);
            for (PeerId node : involved)
            {
                queue_.schedule(queue_.now() + one_way(source, node, 0.0),
                                [this, node, id, dest, version] { apply_location(node, id, dest, version); });
            }
        }

        void rollback(const GridThreadId& id, PeerId source, PeerId dest)
        {
            ++stats_.migrations_failed;
            Node& s = nodes_.at(source);
            const auto it = s.threads.find(id);
            if (s.failed || it == s.threads.end())
            {
                threads_.at(id).status = ThreadStatus::Done;
                record("MigrationFailed", {{"thread", to_json(id)}, {"from", source.value}, {"to", dest.value},
                                           {"restored", false}});
                return;
            }
            it->second.retained = false;
            it->second.status = ThreadStatus::Runnable;
            ThreadState& ts = threads_.at(id);
            ts.status = ThreadStatus::Runnable;
            ts.host = source;
            record("MigrationFailed", {{"thread", to_json(id)}, {"from", source.value}, {"to", dest.value},
                                       {"restored", true}});
            if (ts.start_due)
            {
                start_thread(id);
            }
            drain(s, id);
        }

        EventQueue& queue_;
        const NetworkTopology& topology_;
        Trace* trace_;
        Hooks hooks_;
        bool duplicate_calls_ = false;
        std::map<PeerId, Node> nodes_;
        std::map<JobId, Process> processes_;
        std::map<GridThreadId, ThreadState> threads_;
        MigrationStats stats_;
    };

    /// All-local execution: one FIFO of calls and replies, no network, no
    /// migration. The baseline every distributed run must reproduce.
    inline std::vector<Bytes> run_reference(const TaskSpec& spec)
    {
        const auto wl = make_workload(spec);
        const std::size_t n = wl->thread_count();
        std::vector<Bytes> state;
        for (std::size_t i = 0; i < n; ++i)
        {
            state.push_back(wl->initial_state(i));
        }
        struct Item
        {
            bool reply;
            std::size_t from;
            std::size_t to;
            std::string procedure;
            Bytes payload;
        };
        std::deque<Item> fifo;
        for (std::size_t i = 0; i < n; ++i)
        {
            for (auto& c : wl->start(i, state[i]))
            {
                fifo.push_back({false, i, c.callee, std::move(c.procedure), std::move(c.payload)});
            }
        }
        while (!fifo.empty())
        {
            Item it = std::move(fifo.front());
            fifo.pop_front();
            HandlerResult r = it.reply ? wl->on_reply(it.to, state[it.to], it.procedure, it.payload)
                                       : wl->on_call(it.to, state[it.to], it.procedure, it.payload);
            if (!it.reply)
            {
                fifo.push_back({true, it.to, it.from, it.procedure, std::move(r.reply)});
            }
            for (auto& c : r.calls)
            {
                fifo.push_back({false, it.to, c.callee, std::move(c.procedure), std::move(c.payload)});
            }
        }
        std::vector<Bytes> out;
        for (std::size_t i = 0; i < n; ++i)
        {
            out.push_back(wl->output(i, state[i]));
        }
        return out;
    }

    struct ScriptStep
    {
        enum class Action
        {
            Migrate,
            FailPeer,
        };

        SimTime at = 0.0;
        Action action = Action::Migrate;
        std::size_t thread = 0; // index into the process's threads
        PeerId peer;            // destination, or the peer to fail
    };

    struct WorkloadRun
    {
        std::vector<Bytes> outputs;
        Trace trace;
        bool finished = false;
        MigrationStats stats;
        std::vector<std::string> residence_violations;
    };

    struct WorkloadOptions
    {
        bool duplicate_calls = false;
        std::set<PeerId> deny; // destinations whose policy refuses the job
        bool check_residence = true;
    };

    /// Spawn the task at `origin`, apply the placement/migration script, run
    /// to quiescence and return every thread's output. Rejected script steps
    /// are recorded in the trace and skipped.
    inline WorkloadRun run_workload(const TaskSpec& spec, std::span<const ScriptStep> script,
                                    const NetworkTopology& topology, PeerId origin, const WorkloadOptions& opt = {})
    {
        WorkloadRun out;
        EventQueue queue;
        MigrationRuntime::Hooks hooks;
        hooks.admit = [&opt](PeerId dest, JobId) {
            return opt.deny.contains(dest) ? Admission::deny(DenyReason::CpuQuota) : Admission::admit();
        };
        MigrationRuntime rt(queue, topology, &out.trace, hooks);
        rt.set_duplicate_calls(opt.duplicate_calls);
        for (PeerId p : topology.peers())
        {
            rt.add_node(p, 0.0);
        }
        rt.add_node(origin, 0.0);
        const JobId job{1};
        const auto threads = rt.spawn_process(origin, job, make_workload(spec));

        for (const auto& step : script)
        {
            queue.schedule(step.at, [&, step] {
                try
                {
                    if (step.action == ScriptStep::Action::Migrate)
                    {
                        rt.migrate_thread(threads.at(step.thread), step.peer);
                    }
                    else
                    {
                        rt.fail_node(step.peer);
                    }
                }
                catch (const Error& e)
                {
                    out.trace.append(queue.now(), "ScriptStepRejected",
                                     {{"error", std::string(to_string(e.code()))}, {"thread", step.thread},
                                      {"peer", step.peer.value}});
                }
            });
        }
        queue.schedule(0.0, [&] { rt.start_process(job); });

        while (queue.step())
        {
            if (opt.check_residence)
            {
                for (auto& v : rt.check_residence())
                {
                    out.residence_violations.push_back(std::move(v));
                }
            }
        }
        out.outputs = rt.outputs(job);
        out.finished = rt.finished(job);
        out.stats = rt.stats();
        return out;
    }
}
