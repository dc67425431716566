#pragma once

#include <gridos/migration.hpp>
#include <gridos/random.hpp>

#include <vector>

namespace gridos::testing
{
    struct RandomSchedule
    {
        TaskSpec spec;
        NetworkTopology topology;
        std::vector<ScriptStep> steps;
        std::size_t rollbacks = 0;
    };

    // Nodes 1..4 host the workload; nodes 5..8 are only ever targeted by a
    // migration that they then crash under, forcing a rollback.
    inline RandomSchedule random_schedule(std::uint64_t seed)
    {
        Rng rng(seed);
        RandomSchedule out;
        out.spec.workload = uniform_below(rng, 2) == 0 ? "ring" : "fork_join_sum";
        out.spec.threads = 4;
        out.spec.rounds = 3 + uniform_below(rng, 30);
        out.spec.payload_bytes = uniform_below(rng, 3) * 512;
        out.spec.state_bytes = uniform_below(rng, 4) * 4096;
        out.topology = generate_topology({8}, seed);

        // Spread the threads out before they start so that every later step
        // lands while calls are crossing the network.
        for (std::size_t t = 0; t < out.spec.threads; ++t)
        {
            ScriptStep s;
            s.thread = t;
            s.peer = PeerId{1 + uniform_below(rng, 4)};
            out.steps.push_back(s);
        }
        const std::size_t moves = 1 + uniform_below(rng, 10);
        for (std::size_t i = 0; i < moves; ++i)
        {
            ScriptStep s;
            s.at = uniform_real(rng, 0.0, 2.0);
            s.thread = uniform_below(rng, 4);
            s.peer = PeerId{1 + uniform_below(rng, 4)};
            out.steps.push_back(s);
            if (uniform_below(rng, 2) == 0)
            {
                // Move the same thread on again soon after, so callers still
                // hold its previous host.
                ScriptStep again = s;
                again.at += uniform_real(rng, 0.2, 1.0);
                again.peer = PeerId{1 + (s.peer.value + uniform_below(rng, 3)) % 4};
                out.steps.push_back(again);
            }
        }
        const std::size_t crashes = uniform_below(rng, 3);
        for (std::size_t i = 0; i < crashes; ++i)
        {
            const PeerId victim{5 + i};
            ScriptStep m;
            m.at = uniform_real(rng, 0.0, 2.0);
            m.thread = uniform_below(rng, 4);
            m.peer = victim;
            ScriptStep f;
            f.at = m.at + 0.001;
            f.action = ScriptStep::Action::FailPeer;
            f.peer = victim;
            out.steps.push_back(m);
            out.steps.push_back(f);
            ++out.rollbacks;
        }
        return out;
    }
}
