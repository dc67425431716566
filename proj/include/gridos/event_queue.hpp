#pragma once

#include "error.hpp"
#include "net_model.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace gridos
{
    /// Discrete-event queue. Actions run in strict (time, seq) order; seq is
    /// the insertion counter, so equal-time events keep scheduling order.
    class EventQueue
    {
    public:
        using Action = std::function<void()>;

        std::uint64_t schedule(SimTime at, Action action)
        {
            if (!(at >= now_))
            {
                throw Error(Errc::InvalidSpec, "event scheduled in the past: " + std::to_string(at) + " < "
                                                   + std::to_string(now_));
            }
            const std::uint64_t seq = next_seq_++;
            heap_.push_back({at, seq, std::move(action)});
            std::push_heap(heap_.begin(), heap_.end(), Later{});
            return seq;
        }

        std::uint64_t schedule_after(SimTime delay, Action action) { return schedule(now_ + delay, std::move(action)); }

        /// Run the earliest event. Returns false when the queue is empty.
        bool step()
        {
            if (heap_.empty())
            {
                return false;
            }
            std::pop_heap(heap_.begin(), heap_.end(), Later{});
            Entry e = std::move(heap_.back());
            heap_.pop_back();
            now_ = e.time;
            ++executed_;
            e.action();
            return true;
        }

        /// Run until empty or the next event lies beyond `until`.
        void run(SimTime until = std::numeric_limits<SimTime>::infinity())
        {
            while (!heap_.empty() && heap_.front().time <= until)
            {
                step();
            }
        }

        [[nodiscard]] SimTime now() const noexcept { return now_; }
        [[nodiscard]] bool empty() const noexcept { return heap_.empty(); }
        [[nodiscard]] std::size_t pending() const noexcept { return heap_.size(); }
        [[nodiscard]] std::uint64_t executed() const noexcept { return executed_; }

    private:
        struct Entry
        {
            SimTime time;
            std::uint64_t seq;
            Action action;
        };

        // std::*_heap builds a max-heap; "later" compares greater.
        struct Later
        {
            bool operator()(const Entry& l, const Entry& r) const noexcept
            {
                return l.time != r.time ? l.time > r.time : l.seq > r.seq;
            }
        };

        std::vector<Entry> heap_;
        SimTime now_ = 0.0;
        std::uint64_t next_seq_ = 0;
        std::uint64_t executed_ = 0;
    };
}
