#pragma once

#include "error.hpp"
#include "net_model.hpp"

#include <cmath>
#include <string>

namespace gridos
{
    /// Amounts of the three accounted resources. cpu is in abstract compute
    /// units, mem and storage in bytes.
    struct ResourceUsage
    {
        double cpu = 0.0;
        double mem = 0.0;
        double storage = 0.0;

        ResourceUsage& operator+=(const ResourceUsage& o)
        {
            cpu += o.cpu;
            mem += o.mem;
            storage += o.storage;
            return *this;
        }

        friend ResourceUsage operator+(ResourceUsage l, const ResourceUsage& r) { return l += r; }
        friend bool operator==(const ResourceUsage&, const ResourceUsage&) = default;
    };

    enum class ViolationResponse
    {
        Throttle,
        Terminate,
    };

    /// What a provider is willing to give to foreign jobs.
    struct SharingPolicy
    {
        PeerId owner;
        double cpu_quota = 1.0;   // fraction of cpu_capacity
        double mem_cap = 0.0;     // bytes
        double storage_cap = 0.0; // bytes
        bool idle_only = false;
        ViolationResponse on_violation = ViolationResponse::Throttle;

        void validate(double mem_total, double storage_total) const
        {
            if (!(cpu_quota >= 0.0 && cpu_quota <= 1.0))
            {
                throw Error(Errc::InvalidPolicy, "cpu_quota must lie in [0, 1] for peer " + to_string(owner));
            }
            if (!(mem_cap >= 0.0 && mem_cap <= mem_total))
            {
                throw Error(Errc::InvalidPolicy, "mem_cap must lie in [0, mem_total] for peer " + to_string(owner));
            }
            if (!(storage_cap >= 0.0 && storage_cap <= storage_total))
            {
                throw Error(Errc::InvalidPolicy,
                            "storage_cap must lie in [0, storage_total] for peer " + to_string(owner));
            }
        }

        /// Quota expressed per axis in absolute units.
        [[nodiscard]] ResourceUsage limits(double cpu_capacity) const
        {
            return {cpu_quota * cpu_capacity, mem_cap, storage_cap};
        }

        /// Policy that admits anything the host physically has.
        static SharingPolicy open(PeerId owner, double mem_total, double storage_total)
        {
            return SharingPolicy{owner, 1.0, mem_total, storage_total, false, ViolationResponse::Throttle};
        }

        friend bool operator==(const SharingPolicy&, const SharingPolicy&) = default;
    };

    /// Dynamic status a peer advertises to its subGrid.
    struct ResourceAdvertisement
    {
        PeerId origin;
        double cpu_capacity = 0.0;
        double cpu_available = 0.0;
        double mem_total = 0.0;
        double mem_available = 0.0;
        double storage_available = 0.0;
        double load = 0.0;
        SharingPolicy share_limits;
        /// Resources already committed to foreign jobs on this host.
        ResourceUsage foreign_usage;
        SimTime timestamp = 0.0;

        void validate() const
        {
            auto nonneg = [](double v) { return v >= 0.0 && std::isfinite(v); };
            if (!nonneg(cpu_capacity) || !nonneg(cpu_available) || cpu_available > cpu_capacity)
            {
                throw Error(Errc::InvalidAdvertisement, "cpu_available must lie in [0, cpu_capacity]");
            }
            if (!nonneg(mem_total) || !nonneg(mem_available) || mem_available > mem_total)
            {
                throw Error(Errc::InvalidAdvertisement, "mem_available must lie in [0, mem_total]");
            }
            if (!nonneg(storage_available))
            {
                throw Error(Errc::InvalidAdvertisement, "storage_available must be non-negative");
            }
            if (!(load >= 0.0 && load <= 1.0))
            {
                throw Error(Errc::InvalidAdvertisement, "load must lie in [0, 1]");
            }
            if (share_limits.owner != origin)
            {
                throw Error(Errc::InvalidAdvertisement, "share_limits owner differs from origin");
            }
        }

        friend bool operator==(const ResourceAdvertisement&, const ResourceAdvertisement&) = default;
    };

    struct JobRequirements
    {
        double min_cpu = 0.0;
        double min_mem = 0.0;
        double min_storage = 0.0;
        double data_size = 0.0; // bytes shipped to a remote host
        bool interactive = false;

        void validate() const
        {
            if (!(min_cpu >= 0.0 && min_mem >= 0.0 && min_storage >= 0.0 && data_size >= 0.0))
            {
                throw Error(Errc::ValidationError, "job requirements must be non-negative");
            }
        }

        [[nodiscard]] ResourceUsage as_usage() const { return {min_cpu, min_mem, min_storage}; }

        friend bool operator==(const JobRequirements&, const JobRequirements&) = default;
    };
}
