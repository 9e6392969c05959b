#pragma once

// Deterministic "mastery" corpus: a student answers correctly once they have
// already answered at least `mastery_threshold` exercises of the same concept
// correctly. The first `seeded_starts` interactions of every student are
// random (seeded) so that mastery can get going.

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "dgekt/interaction_store.hpp"

namespace dgekt {

struct SyntheticOptions {
    std::size_t students = 20;
    std::size_t interactions = 40;
    std::size_t exercises = 10;
    std::size_t concepts = 3;
    std::size_t seeded_starts = 6;
    double start_correct_prob = 0.6;
    std::size_t mastery_threshold = 2;
    std::uint64_t seed = 7;
};

inline std::string synthetic_student_id(std::size_t s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%03zu", s);
    return buf;
}

inline std::string synthetic_exercise_id(std::size_t e) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "e%02zu", e);
    return buf;
}

/// Exercise e belongs to concept e mod concepts.
inline std::size_t synthetic_concept_of(std::size_t exercise, const SyntheticOptions& o) {
    return exercise % o.concepts;
}

inline std::vector<InteractionRecord> synthetic_mastery_corpus(const SyntheticOptions& o = {}) {
    if (o.students == 0 || o.interactions == 0 || o.exercises == 0 || o.concepts == 0 ||
        o.concepts > o.exercises)
        throw Error("synthetic_mastery_corpus: invalid sizes");
    std::mt19937_64 rng(o.seed);
    std::uniform_int_distribution<std::size_t> pick(0, o.exercises - 1);
    std::bernoulli_distribution start(o.start_correct_prob);
    std::vector<InteractionRecord> out;
    out.reserve(o.students * o.interactions);
    for (std::size_t s = 0; s < o.students; ++s) {
        std::vector<std::size_t> correct_on(o.concepts, 0);
        for (std::size_t k = 0; k < o.interactions; ++k) {
            const std::size_t e = pick(rng);
            const std::size_t c = synthetic_concept_of(e, o);
            const int r = k < o.seeded_starts ? (start(rng) ? 1 : 0)
                                              : (correct_on[c] >= o.mastery_threshold ? 1 : 0);
            correct_on[c] += static_cast<std::size_t>(r);
            out.push_back({synthetic_student_id(s), synthetic_exercise_id(e),
                           {"c" + std::to_string(c)}, r, static_cast<std::int64_t>(k)});
        }
    }
    return out;
}

}  // namespace dgekt
