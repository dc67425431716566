#pragma once

// Provider-side protection for foreign work: admission against sharing
// policies, per-tick usage accounting with violation detection, an append-only
// audit log, and memory regions only the owning job may touch.

#include "ids.hpp"
#include "resources.hpp"

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string_view>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

namespace gridos
{
    enum class Axis
    {
        Cpu,
        Mem,
        Storage,
    };

    inline constexpr std::array<Axis, 3> kAllAxes{Axis::Cpu, Axis::Mem, Axis::Storage};

    inline constexpr std::string_view to_string(Axis a) noexcept
    {
        switch (a)
        {
        case Axis::Cpu: return "cpu";
        case Axis::Mem: return "mem";
        case Axis::Storage: return "storage";
        }
        return "?";
    }

    inline constexpr double axis_value(const ResourceUsage& u, Axis a) noexcept
    {
        switch (a)
        {
        case Axis::Cpu: return u.cpu;
        case Axis::Mem: return u.mem;
        case Axis::Storage: return u.storage;
        }
        return 0.0;
    }

    enum class DenyReason
    {
        CpuQuota,
        MemCap,
        StorageCap,
        NotIdle,
    };

    inline constexpr std::string_view to_string(DenyReason r) noexcept
    {
        switch (r)
        {
        case DenyReason::CpuQuota: return "CpuQuota";
        case DenyReason::MemCap: return "MemCap";
        case DenyReason::StorageCap: return "StorageCap";
        case DenyReason::NotIdle: return "NotIdle";
        }
        return "?";
    }

    /// Host-side facts admission needs besides the policy itself.
    struct HostUsage
    {
        double cpu_capacity = 0.0;
        ResourceUsage foreign; // already committed to foreign jobs
        double local_load = 0.0;
    };

    struct Admission
    {
        std::optional<DenyReason> denied;

        [[nodiscard]] bool admitted() const noexcept { return !denied.has_value(); }

        static Admission admit() { return {}; }
        static Admission deny(DenyReason r) { return {r}; }
    };

    /// Admit iff the requirements fit the remaining quota on every axis (the
    /// bound is closed) and, for idle-only hosts, the host has no local load.
    inline Admission check_admission(const JobRequirements& req, const SharingPolicy& policy, const HostUsage& host)
    {
        if (policy.idle_only && host.local_load > 0.0)
        {
            return Admission::deny(DenyReason::NotIdle);
        }
        const ResourceUsage limit = policy.limits(host.cpu_capacity);
        if (req.min_cpu > limit.cpu - host.foreign.cpu)
        {
            return Admission::deny(DenyReason::CpuQuota);
        }
        if (req.min_mem > limit.mem - host.foreign.mem)
        {
            return Admission::deny(DenyReason::MemCap);
        }
        if (req.min_storage > limit.storage - host.foreign.storage)
        {
            return Admission::deny(DenyReason::StorageCap);
        }
        return Admission::admit();
    }

    /// Consumption of one foreign thread during one accounting tick.
    struct UsageRecord
    {
        PeerId node;
        GridThreadId thread;
        ResourceUsage used;
        SimTime tick = 0.0;

        friend bool operator==(const UsageRecord&, const UsageRecord&) = default;
    };

    struct ViolationEvent
    {
        PeerId node;
        GridThreadId thread;
        Axis axis = Axis::Cpu;
        SimTime tick = 0.0;
        double observed = 0.0; // cumulative foreign usage on the axis at this tick
        double limit = 0.0;

        friend bool operator==(const ViolationEvent&, const ViolationEvent&) = default;
    };

    struct HostLocal
    {
        PeerId peer;
        friend bool operator==(const HostLocal&, const HostLocal&) = default;
    };

    struct JobAccessor
    {
        GridThreadId thread;
        friend bool operator==(const JobAccessor&, const JobAccessor&) = default;
    };

    using Accessor = std::variant<HostLocal, JobAccessor>;

    struct AccessDenial
    {
        PeerId node;
        Accessor accessor;
        GridThreadId region_owner;
        SimTime at = 0.0;

        friend bool operator==(const AccessDenial&, const AccessDenial&) = default;
    };

    using AuditEntry = std::variant<UsageRecord, ViolationEvent, AccessDenial>;

    /// Append-only audit trail of one node.
    class AuditLog
    {
    public:
        void append(AuditEntry e) { entries_.push_back(std::move(e)); }

        [[nodiscard]] const std::vector<AuditEntry>& entries() const noexcept { return entries_; }
        [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

    private:
        std::vector<AuditEntry> entries_;
    };

    /// Cumulative accounting totals. Both the live monitor and an audit-log
    /// replay produce one of these; they must agree exactly.
    struct AccountingState
    {
        std::map<GridThreadId, ResourceUsage> per_thread;
        std::map<SimTime, ResourceUsage> per_tick;
        std::map<Axis, std::size_t> violations;
        std::size_t denials = 0;

        friend bool operator==(const AccountingState&, const AccountingState&) = default;
    };

    inline AccountingState replay(const AuditLog& log)
    {
        AccountingState s;
        for (const auto& e : log.entries())
        {
            if (const auto* r = std::get_if<UsageRecord>(&e))
            {
                s.per_thread[r->thread] += r->used;
                s.per_tick[r->tick] += r->used;
            }
            else if (const auto* v = std::get_if<ViolationEvent>(&e))
            {
                ++s.violations[v->axis];
            }
            else
            {
                ++s.denials;
            }
        }
        return s;
    }

    /// Usage accounting for the foreign threads of a single host.
    ///
    /// A violation is raised for (thread, axis, tick) when a record from that
    /// thread, with non-zero use of the axis, leaves the tick's cumulative
    /// foreign usage above the policy limit. Each triple is reported at most
    /// once.
    class UsageMonitor
    {
    public:
        UsageMonitor(PeerId node, SharingPolicy policy, double cpu_capacity)
            : node_(node), policy_(policy), cpu_capacity_(cpu_capacity)
        {
        }

        std::vector<ViolationEvent> record_usage(const GridThreadId& thread, const ResourceUsage& used, SimTime tick)
        {
            log_.append(UsageRecord{node_, thread, used, tick});
            live_.per_thread[thread] += used;
            ResourceUsage& total = live_.per_tick[tick];
            total += used;

            std::vector<ViolationEvent> raised;
            const ResourceUsage limit = policy_.limits(cpu_capacity_);
            for (Axis a : kAllAxes)
            {
                if (axis_value(used, a) <= 0.0 || axis_value(total, a) <= axis_value(limit, a))
                {
                    continue;
                }
                if (!reported_.insert({thread, a, tick}).second)
                {
                    continue;
                }
                ViolationEvent v{node_, thread, a, tick, axis_value(total, a), axis_value(limit, a)};
                log_.append(v);
                ++live_.violations[a];
                raised.push_back(v);
            }
            return raised;
        }

        void record_denial(const Accessor& who, const GridThreadId& region_owner, SimTime at)
        {
            log_.append(AccessDenial{node_, who, region_owner, at});
            ++live_.denials;
        }

        [[nodiscard]] const AuditLog& log() const noexcept { return log_; }
        [[nodiscard]] AuditLog& log() noexcept { return log_; }
        [[nodiscard]] const AccountingState& live() const noexcept { return live_; }
        [[nodiscard]] const SharingPolicy& policy() const noexcept { return policy_; }
        [[nodiscard]] PeerId node() const noexcept { return node_; }

    private:
        PeerId node_;
        SharingPolicy policy_;
        double cpu_capacity_;
        AuditLog log_;
        AccountingState live_;
        std::set<std::tuple<GridThreadId, Axis, SimTime>> reported_;
    };

    enum class EnforcementKind
    {
        ThreadBlocked,
        ThreadResumed,
        ThreadKilled,
        OriginNotified,
    };

    inline constexpr std::string_view to_string(EnforcementKind k) noexcept
    {
        switch (k)
        {
        case EnforcementKind::ThreadBlocked: return "ThreadBlocked";
        case EnforcementKind::ThreadResumed: return "ThreadResumed";
        case EnforcementKind::ThreadKilled: return "ThreadKilled";
        case EnforcementKind::OriginNotified: return "OriginNotified";
        }
        return "?";
    }

    struct EnforcementAction
    {
        EnforcementKind kind;
        GridThreadId thread;
        SimTime at = 0.0;

        friend bool operator==(const EnforcementAction&, const EnforcementAction&) = default;
    };

    /// Throttle blocks the offender for exactly one tick; Terminate kills it and
    /// notifies the node that created it.
    inline std::vector<EnforcementAction> enforce(const ViolationEvent& v, const SharingPolicy& policy,
                                                  SimTime tick_length)
    {
        if (policy.on_violation == ViolationResponse::Throttle)
        {
            return {{EnforcementKind::ThreadBlocked, v.thread, v.tick},
                    {EnforcementKind::ThreadResumed, v.thread, v.tick + tick_length}};
        }
        return {{EnforcementKind::ThreadKilled, v.thread, v.tick}, {EnforcementKind::OriginNotified, v.thread, v.tick}};
    }

    enum class AccessOutcome
    {
        Granted,
        AccessDenied,
    };

    class ProtectedRegion;

    struct AccessResult
    {
        AccessOutcome outcome = AccessOutcome::AccessDenied;
        Bytes* data = nullptr; // set only when granted

        [[nodiscard]] bool granted() const noexcept { return outcome == AccessOutcome::Granted; }
    };

    AccessResult access_protected(const Accessor& who, ProtectedRegion& region, UsageMonitor* audit, SimTime at);

    /// An exported job's address space on its host. The bytes are reachable
    /// only through access_protected().
    class ProtectedRegion
    {
    public:
        ProtectedRegion(GridThreadId owner, PeerId host, Bytes contents)
            : owner_(owner), host_(host), contents_(std::move(contents))
        {
        }

        [[nodiscard]] const GridThreadId& owner_job() const noexcept { return owner_; }
        [[nodiscard]] PeerId host() const noexcept { return host_; }
        [[nodiscard]] std::size_t size() const noexcept { return contents_.size(); }

    private:
        friend AccessResult access_protected(const Accessor&, ProtectedRegion&, UsageMonitor*, SimTime);

        GridThreadId owner_;
        PeerId host_;
        Bytes contents_;
    };

    /// Granted only to the owning job. Denials are appended to `audit` when given.
    inline AccessResult access_protected(const Accessor& who, ProtectedRegion& region, UsageMonitor* audit, SimTime at)
    {
        if (const auto* job = std::get_if<JobAccessor>(&who); job != nullptr && job->thread == region.owner_)
        {
            return {AccessOutcome::Granted, &region.contents_};
        }
        if (audit != nullptr)
        {
            audit->record_denial(who, region.owner_, at);
        }
        return {AccessOutcome::AccessDenied, nullptr};
    }
}
