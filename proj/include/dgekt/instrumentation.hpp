#pragma once

#include <atomic>
#include <cstdint>

namespace dgekt {

/// Process-wide construction counters. Tests reset them and assert which
/// components a model variant actually built.
struct ComponentCounters {
    std::atomic<std::int64_t> cahg_built{0};
    std::atomic<std::int64_t> dtg_built{0};
    std::atomic<std::int64_t> clique_graph_built{0};
    std::atomic<std::int64_t> undirected_graph_built{0};
    std::atomic<std::int64_t> hypergraph_encoders{0};
    std::atomic<std::int64_t> clique_encoders{0};
    std::atomic<std::int64_t> directed_encoders{0};
    std::atomic<std::int64_t> undirected_encoders{0};
    std::atomic<std::int64_t> gates{0};
    std::atomic<std::int64_t> teacher_readouts{0};
    std::atomic<std::int64_t> concat_readouts{0};
    std::atomic<std::int64_t> distill_evaluations{0};

    void reset() {
        for (auto* c : {&cahg_built, &dtg_built, &clique_graph_built, &undirected_graph_built,
                        &hypergraph_encoders, &clique_encoders, &directed_encoders,
                        &undirected_encoders, &gates, &teacher_readouts, &concat_readouts,
                        &distill_evaluations})
            c->store(0);
    }
};

inline ComponentCounters& counters() {
    static ComponentCounters c;
    return c;
}

}  // namespace dgekt
