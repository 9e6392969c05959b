#pragma once

// Concept-association hypergraph and directed transition graph over
// interaction nodes, together with the fixed propagation coefficients the
// graph encoders consume.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <utility>
#include <vector>

#include "dgekt/error.hpp"
#include "dgekt/interaction_store.hpp"
#include "dgekt/sparse.hpp"

namespace dgekt {

/// Hyperedge 2j groups the correct-response nodes of every exercise carrying
/// concept j; hyperedge 2j+1 groups the matching incorrect-response nodes.
struct ConceptHypergraph {
    std::size_t num_nodes = 0;
    std::size_t num_hyperedges = 0;
    std::vector<std::pair<std::size_t, std::size_t>> incidence;  // (node, hyperedge), sorted
    std::vector<std::size_t> node_degree;
    std::vector<std::size_t> hyperedge_degree;
    std::vector<std::vector<std::size_t>> members;  // per hyperedge, sorted node list
};

constexpr std::size_t hyperedge_index(std::size_t concept_index, int correct) noexcept {
    return 2 * concept_index + (correct == 1 ? 0 : 1);
}

inline ConceptHypergraph build_cahg(const Vocabulary& vocab) {
    ConceptHypergraph g;
    g.num_nodes = 2 * vocab.num_exercises();
    g.num_hyperedges = 2 * vocab.num_concepts();
    g.node_degree.assign(g.num_nodes, 0);
    g.hyperedge_degree.assign(g.num_hyperedges, 0);
    g.members.assign(g.num_hyperedges, {});
    for (std::size_t i = 0; i < vocab.num_exercises(); ++i) {
        for (std::size_t c : vocab.exercise_to_concepts[i]) {
            if (c >= vocab.num_concepts())
                throw Error("build_cahg: exercise " + std::to_string(i) + " maps to concept " +
                            std::to_string(c) + " of " + std::to_string(vocab.num_concepts()));
            for (int r : {1, 0}) {
                const auto v = node_index(i, r);
                const auto e = hyperedge_index(c, r);
                g.incidence.emplace_back(v, e);
                ++g.node_degree[v];
                ++g.hyperedge_degree[e];
                g.members[e].push_back(v);
            }
        }
    }
    std::sort(g.incidence.begin(), g.incidence.end());
    for (auto& m : g.members) std::sort(m.begin(), m.end());
    return g;
}

/// Transition statistics between interaction nodes. `counts(i, j)` is the
/// number of times node j immediately follows node i. The `*_normalized`
/// matrices hold the transition probabilities before self-loops; `a_in` and
/// `a_out` have their diagonal forced to 1.
struct TransitionGraph {
    std::size_t num_nodes = 0;
    CsrMatrix<std::int64_t> counts;
    CsrMatrix<double> a_in_normalized;
    CsrMatrix<double> a_out_normalized;
    CsrMatrix<double> a_in;
    CsrMatrix<double> a_out;
    std::vector<double> d_in;
    std::vector<double> d_out;
};

namespace detail {

inline CsrMatrix<double> with_unit_diagonal(const CsrMatrix<double>& m) {
    std::vector<Triplet<double>> e;
    for (const auto& t : m.triplets())
        if (t.row != t.col) e.push_back(t);
    for (std::size_t i = 0; i < m.rows(); ++i) e.push_back({i, i, 1.0});
    return CsrMatrix<double>(m.rows(), m.cols(), std::move(e));
}

inline TransitionGraph transition_graph_from_map(
    std::size_t num_nodes, const std::map<std::pair<std::size_t, std::size_t>, std::int64_t>& n) {
    TransitionGraph g;
    g.num_nodes = num_nodes;
    std::vector<std::int64_t> out_total(num_nodes, 0);
    std::vector<std::int64_t> in_total(num_nodes, 0);
    std::vector<Triplet<std::int64_t>> ce;
    for (const auto& [ij, c] : n) {
        ce.push_back({ij.first, ij.second, c});
        out_total[ij.first] += c;
        in_total[ij.second] += c;
    }
    std::vector<Triplet<double>> ein;
    std::vector<Triplet<double>> eout;
    for (const auto& [ij, c] : n) {
        const auto [i, j] = ij;
        eout.push_back({i, j, static_cast<double>(c) / static_cast<double>(out_total[i])});
        // A_in[j, i] = n_{i,j} / sum_k n_{k,j}
        ein.push_back({j, i, static_cast<double>(c) / static_cast<double>(in_total[j])});
    }
    g.counts = CsrMatrix<std::int64_t>(num_nodes, num_nodes, std::move(ce));
    g.a_in_normalized = CsrMatrix<double>(num_nodes, num_nodes, std::move(ein));
    g.a_out_normalized = CsrMatrix<double>(num_nodes, num_nodes, std::move(eout));
    g.a_in = with_unit_diagonal(g.a_in_normalized);
    g.a_out = with_unit_diagonal(g.a_out_normalized);
    g.d_in.resize(num_nodes);
    g.d_out.resize(num_nodes);
    for (std::size_t i = 0; i < num_nodes; ++i) {
        g.d_in[i] = g.a_in.row_sum(i);
        g.d_out[i] = g.a_out.row_sum(i);
    }
    return g;
}

}  // namespace detail

/// Counts consecutive pairs inside each sequence (never across sequences).
inline TransitionGraph build_dtg(const std::vector<StudentSequence>& sequences, std::size_t num_exercises) {
    std::map<std::pair<std::size_t, std::size_t>, std::int64_t> n;
    for (const auto& s : sequences) {
        for (std::size_t k = 0; k + 1 < s.steps.size(); ++k) {
            const auto& a = s.steps[k];
            const auto& b = s.steps[k + 1];
            if (a.exercise >= num_exercises || b.exercise >= num_exercises)
                throw Error("build_dtg: exercise index outside vocabulary of " + std::to_string(num_exercises));
            ++n[{node_index(a.exercise, a.correct), node_index(b.exercise, b.correct)}];
        }
    }
    return detail::transition_graph_from_map(2 * num_exercises, n);
}

/// Rebuilds a transition graph from stored (i, j, count) triplets.
inline TransitionGraph transition_graph_from_counts(std::size_t num_nodes,
                                                    const std::vector<Triplet<std::int64_t>>& counts) {
    std::map<std::pair<std::size_t, std::size_t>, std::int64_t> n;
    for (const auto& t : counts) {
        if (t.row >= num_nodes || t.col >= num_nodes || t.value <= 0)
            throw Error("transition count entry out of range");
        n[{t.row, t.col}] += t.value;
    }
    return detail::transition_graph_from_map(num_nodes, n);
}

/// coeff[i, q] = sum over hyperedges H containing both v_i and v_q of
/// (1 / |H|) / sqrt(d_i d_q).
inline CsrMatrix<double> cahg_propagation_coefficients(const ConceptHypergraph& g) {
    std::vector<Triplet<double>> e;
    for (std::size_t h = 0; h < g.num_hyperedges; ++h) {
        const auto& m = g.members[h];
        if (m.empty()) continue;
        const double inv_g = 1.0 / static_cast<double>(m.size());
        for (std::size_t i : m)
            for (std::size_t q : m)
                e.push_back({i, q,
                             inv_g / std::sqrt(static_cast<double>(g.node_degree[i]) *
                                               static_cast<double>(g.node_degree[q]))});
    }
    return CsrMatrix<double>(g.num_nodes, g.num_nodes, std::move(e));
}

struct DirectedCoefficients {
    CsrMatrix<double> p_in;
    CsrMatrix<double> p_out;
};

/// P_in[i,j] = A_in[i,j] / sqrt(d_in_i d_out_j); P_out[i,j] = A_out[i,j] / sqrt(d_out_i d_in_j).
inline DirectedCoefficients dtg_propagation_coefficients(const TransitionGraph& g) {
    std::vector<Triplet<double>> ein;
    std::vector<Triplet<double>> eout;
    for (const auto& t : g.a_in.triplets())
        ein.push_back({t.row, t.col, t.value / std::sqrt(g.d_in[t.row] * g.d_out[t.col])});
    for (const auto& t : g.a_out.triplets())
        eout.push_back({t.row, t.col, t.value / std::sqrt(g.d_out[t.row] * g.d_in[t.col])});
    return {CsrMatrix<double>(g.num_nodes, g.num_nodes, std::move(ein)),
            CsrMatrix<double>(g.num_nodes, g.num_nodes, std::move(eout))};
}

/// Symmetric GCN normalisation D^-1/2 (W + I) D^-1/2 of an undirected
/// weighted adjacency given as off-diagonal triplets (both directions present).
inline CsrMatrix<double> symmetric_normalized(std::size_t n, std::vector<Triplet<double>> edges) {
    for (std::size_t i = 0; i < n; ++i) edges.push_back({i, i, 1.0});
    CsrMatrix<double> w(n, n, std::move(edges));
    std::vector<double> deg(n);
    for (std::size_t i = 0; i < n; ++i) deg[i] = w.row_sum(i);
    std::vector<Triplet<double>> e;
    for (const auto& t : w.triplets())
        e.push_back({t.row, t.col, t.value / std::sqrt(deg[t.row] * deg[t.col])});
    return CsrMatrix<double>(n, n, std::move(e));
}

/// Pairwise edges obtained by replacing every hyperedge with a clique.
/// Each unordered pair appears once with first < second.
inline std::vector<std::pair<std::size_t, std::size_t>> clique_expansion(const ConceptHypergraph& g) {
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& m : g.members)
        for (std::size_t a = 0; a < m.size(); ++a)
            for (std::size_t b = a + 1; b < m.size(); ++b) pairs.emplace(m[a], m[b]);
    return {pairs.begin(), pairs.end()};
}

/// Simple-graph replacement for the hypergraph: unit-weight clique edges,
/// symmetric normalisation with self-loops.
inline CsrMatrix<double> clique_propagation_coefficients(const ConceptHypergraph& g) {
    std::vector<Triplet<double>> e;
    for (const auto& [a, b] : clique_expansion(g)) {
        e.push_back({a, b, 1.0});
        e.push_back({b, a, 1.0});
    }
    return symmetric_normalized(g.num_nodes, std::move(e));
}

/// Undirected replacement for the transition graph: an edge wherever either
/// direction was observed, weighted by n_ij + n_ji, symmetric normalisation
/// with unit self-loops.
inline CsrMatrix<double> undirected_transition_coefficients(const TransitionGraph& g) {
    std::vector<Triplet<double>> e;
    for (const auto& t : g.counts.triplets()) {
        if (t.row == t.col) continue;
        e.push_back({t.row, t.col, static_cast<double>(t.value)});
        e.push_back({t.col, t.row, static_cast<double>(t.value)});
    }
    return symmetric_normalized(g.num_nodes, std::move(e));
}

}  // namespace dgekt
