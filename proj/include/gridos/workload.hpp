#pragma once

// Built-in deterministic multi-threaded tasks. A thread is a state machine over
// its own serialized address space; threads interact only through procedure
// calls carrying byte payloads. Outputs depend only on the calls each thread
// receives, never on the timing of their delivery, so any placement or
// migration schedule must reproduce an all-local run.

#include "error.hpp"
#include "ids.hpp"

#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gridos
{
    namespace bytes
    {
        inline void put_u64(Bytes& b, std::size_t offset, std::uint64_t v)
        {
            if (b.size() < offset + 8)
            {
                b.resize(offset + 8);
            }
            for (int i = 0; i < 8; ++i)
            {
                b[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
            }
        }

        inline std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t offset)
        {
            if (b.size() < offset + 8)
            {
                throw Error(Errc::InvalidSpec, "short buffer");
            }
            std::uint64_t v = 0;
            for (int i = 0; i < 8; ++i)
            {
                v |= static_cast<std::uint64_t>(b[offset + i]) << (8 * i);
            }
            return v;
        }

        inline Bytes of_u64s(std::initializer_list<std::uint64_t> values)
        {
            Bytes b;
            std::size_t off = 0;
            for (auto v : values)
            {
                put_u64(b, off, v);
                off += 8;
            }
            return b;
        }
    }

    /// A call one thread of a process places on another, by thread index.
    struct OutCall
    {
        std::size_t callee = 0;
        std::string procedure;
        Bytes payload;
    };

    struct HandlerResult
    {
        Bytes reply;
        std::vector<OutCall> calls;
        bool finished = false; // the process has produced its result
    };

    /// Named workload plus its parameters, as it appears in scenario files.
    struct TaskSpec
    {
        std::string workload = "ring";
        std::size_t threads = 4;
        std::uint64_t rounds = 8;
        std::uint64_t payload_bytes = 0; // padding added to every call payload
        std::uint64_t state_bytes = 0;   // padding added to every address space
        double call_cost = 0.0;          // seconds of compute per handler invocation

        friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
    };

    class Workload
    {
    public:
        virtual ~Workload() = default;

        [[nodiscard]] virtual std::string_view name() const = 0;
        [[nodiscard]] virtual std::size_t thread_count() const = 0;
        [[nodiscard]] virtual std::vector<std::string> procedures(std::size_t thread) const = 0;
        [[nodiscard]] virtual SimTime compute_time() const { return 0.0; }
        [[nodiscard]] virtual Bytes initial_state(std::size_t thread) const = 0;

        /// Calls issued when the process starts.
        virtual std::vector<OutCall> start(std::size_t thread, Bytes& state) const = 0;

        virtual HandlerResult on_call(std::size_t thread, Bytes& state, std::string_view procedure,
                                      std::span<const std::uint8_t> payload) const = 0;

        virtual HandlerResult on_reply(std::size_t thread, Bytes& state, std::string_view procedure,
                                       std::span<const std::uint8_t> reply) const = 0;

        /// A call this thread placed could not be delivered.
        virtual void on_call_failed(std::size_t /*thread*/, Bytes& /*state*/, std::string_view /*procedure*/) const {}

        /// The bytes compared across runs. Padding is excluded.
        [[nodiscard]] virtual Bytes output(std::size_t thread, const Bytes& state) const = 0;
    };

    /// A token circulates round a ring of threads for `rounds` hops. Each
    /// thread folds the token into its own accumulator and logs every value it
    /// saw; each pass is acknowledged back to the sender.
    class RingWorkload final : public Workload
    {
    public:
        explicit RingWorkload(const TaskSpec& spec) : spec_(spec)
        {
            if (spec.threads < 2)
            {
                throw Error(Errc::InvalidSpec, "ring needs at least two threads");
            }
        }

        [[nodiscard]] std::string_view name() const override { return "ring"; }
        [[nodiscard]] std::size_t thread_count() const override { return spec_.threads; }
        [[nodiscard]] SimTime compute_time() const override { return spec_.call_cost; }
        [[nodiscard]] std::vector<std::string> procedures(std::size_t) const override { return {"pass"}; }

        // Layout: [acc][seen_count][acks][padding][seen values...]
        [[nodiscard]] Bytes initial_state(std::size_t thread) const override
        {
            Bytes s = bytes::of_u64s({0x9e3779b97f4a7c15ULL * (thread + 1), 0, 0});
            s.resize(kHeader + spec_.state_bytes, 0);
            return s;
        }

        std::vector<OutCall> start(std::size_t thread, Bytes&) const override
        {
            if (thread != 0)
            {
                return {};
            }
            return {pass_to(1, 1, spec_.rounds)};
        }

        HandlerResult on_call(std::size_t thread, Bytes& state, std::string_view, std::span<const std::uint8_t> payload) const override
        {
            const std::uint64_t token = bytes::get_u64(payload, 0);
            const std::uint64_t hops_left = bytes::get_u64(payload, 8);
            std::uint64_t acc = bytes::get_u64(state, 0);
            acc = (acc ^ token) * 0x100000001b3ULL + thread;
            bytes::put_u64(state, 0, acc);
            const std::uint64_t seen = bytes::get_u64(state, 8);
            bytes::put_u64(state, 8, seen + 1);
            bytes::put_u64(state, kHeader + spec_.state_bytes + 8 * seen, token);

            HandlerResult r;
            r.reply = bytes::of_u64s({acc});
            if (hops_left <= 1)
            {
                r.finished = true;
            }
            else
            {
                r.calls.push_back(pass_to((thread + 1) % spec_.threads, acc, hops_left - 1));
            }
            return r;
        }

        HandlerResult on_reply(std::size_t, Bytes& state, std::string_view, std::span<const std::uint8_t>) const override
        {
            bytes::put_u64(state, 16, bytes::get_u64(state, 16) + 1);
            return {};
        }

        [[nodiscard]] Bytes output(std::size_t, const Bytes& state) const override
        {
            const std::size_t log_at = kHeader + spec_.state_bytes;
            Bytes out(kHeader + (state.size() - log_at));
            std::memcpy(out.data(), state.data(), kHeader);
            if (state.size() > log_at)
            {
                std::memcpy(out.data() + kHeader, state.data() + log_at, state.size() - log_at);
            }
            return out;
        }

    private:
        static constexpr std::size_t kHeader = 24;

        [[nodiscard]] OutCall pass_to(std::size_t callee, std::uint64_t token, std::uint64_t hops_left) const
        {
            Bytes p = bytes::of_u64s({token, hops_left});
            p.resize(16 + spec_.payload_bytes, 0);
            return {callee, "pass", std::move(p)};
        }

        TaskSpec spec_;
    };

    /// Thread 0 splits a range among the workers each round, workers sum the
    /// squares of their slice and reply; the next round starts once every
    /// partial sum is in. Results are combined commutatively.
    class ForkJoinSumWorkload final : public Workload
    {
    public:
        explicit ForkJoinSumWorkload(const TaskSpec& spec) : spec_(spec)
        {
            if (spec.threads < 2)
            {
                throw Error(Errc::InvalidSpec, "fork_join_sum needs at least two threads");
            }
            if (spec.rounds == 0)
            {
                throw Error(Errc::InvalidSpec, "fork_join_sum needs at least one round");
            }
        }

        [[nodiscard]] std::string_view name() const override { return "fork_join_sum"; }
        [[nodiscard]] std::size_t thread_count() const override { return spec_.threads; }
        [[nodiscard]] SimTime compute_time() const override { return spec_.call_cost; }

        [[nodiscard]] std::vector<std::string> procedures(std::size_t thread) const override
        {
            if (thread == 0)
            {
                return {};
            }
            return {"sum"};
        }

        // Root layout: [round][pending][total][padding]; worker: [calls][local_total][padding]
        [[nodiscard]] Bytes initial_state(std::size_t) const override
        {
            Bytes s = bytes::of_u64s({0, 0, 0});
            s.resize(kHeader + spec_.state_bytes, 0);
            return s;
        }

        std::vector<OutCall> start(std::size_t thread, Bytes& state) const override
        {
            if (thread != 0)
            {
                return {};
            }
            return scatter(state, 0);
        }

        HandlerResult on_call(std::size_t, Bytes& state, std::string_view, std::span<const std::uint8_t> payload) const override
        {
            const std::uint64_t lo = bytes::get_u64(payload, 0);
            const std::uint64_t hi = bytes::get_u64(payload, 8);
            std::uint64_t sum = 0;
            for (std::uint64_t x = lo; x < hi; ++x)
            {
                sum += x * x;
            }
            bytes::put_u64(state, 0, bytes::get_u64(state, 0) + 1);
            bytes::put_u64(state, 8, bytes::get_u64(state, 8) + sum);
            return {bytes::of_u64s({sum}), {}, false};
        }

        HandlerResult on_reply(std::size_t, Bytes& state, std::string_view, std::span<const std::uint8_t> reply) const override
        {
            const std::uint64_t round = bytes::get_u64(state, 0);
            const std::uint64_t pending = bytes::get_u64(state, 8) - 1;
            bytes::put_u64(state, 8, pending);
            bytes::put_u64(state, 16, bytes::get_u64(state, 16) + bytes::get_u64(reply, 0));
            HandlerResult r;
            if (pending == 0)
            {
                if (round + 1 >= spec_.rounds)
                {
                    bytes::put_u64(state, 0, round + 1);
                    r.finished = true;
                }
                else
                {
                    r.calls = scatter(state, round + 1);
                }
            }
            return r;
        }

        [[nodiscard]] Bytes output(std::size_t, const Bytes& state) const override
        {
            return Bytes(state.begin(), state.begin() + kHeader);
        }

    private:
        static constexpr std::size_t kHeader = 24;
        static constexpr std::uint64_t kSlice = 64;

        std::vector<OutCall> scatter(Bytes& state, std::uint64_t round) const
        {
            const std::size_t workers = spec_.threads - 1;
            bytes::put_u64(state, 0, round);
            bytes::put_u64(state, 8, workers);
            std::vector<OutCall> calls;
            for (std::size_t w = 0; w < workers; ++w)
            {
                const std::uint64_t lo = (round * workers + w) * kSlice;
                Bytes p = bytes::of_u64s({lo, lo + kSlice});
                p.resize(16 + spec_.payload_bytes, 0);
                calls.push_back({w + 1, "sum", std::move(p)});
            }
            return calls;
        }

        TaskSpec spec_;
    };

    inline std::shared_ptr<const Workload> make_workload(const TaskSpec& spec)
    {
        if (spec.workload == "ring")
        {
            return std::make_shared<RingWorkload>(spec);
        }
        if (spec.workload == "fork_join_sum")
        {
            return std::make_shared<ForkJoinSumWorkload>(spec);
        }
        throw Error(Errc::UnknownWorkload, "no built-in workload named '" + spec.workload + "'");
    }
}
