#pragma once

// Full model: dual graph encoders, one GRU branch per graph, and the fusion
// head selected by the variant (gated teacher with distillation, a
// concatenation readout, or a single branch).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dgekt/autodiff.hpp"
#include "dgekt/config.hpp"
#include "dgekt/distill.hpp"
#include "dgekt/dual_graph.hpp"
#include "dgekt/graph_encoders.hpp"
#include "dgekt/init.hpp"
#include "dgekt/instrumentation.hpp"
#include "dgekt/interaction_store.hpp"
#include "dgekt/sequence_predictor.hpp"

namespace dgekt {

enum class ConceptGraphKind { None, Hypergraph, Clique };
enum class TransitionGraphKind { None, Directed, Undirected };
enum class FusionKind { Single, Distill, Concat };

struct Wiring {
    ConceptGraphKind concept_graph = ConceptGraphKind::Hypergraph;
    TransitionGraphKind transition_graph = TransitionGraphKind::Directed;
    FusionKind fusion = FusionKind::Distill;

    [[nodiscard]] bool has_concept_branch() const { return concept_graph != ConceptGraphKind::None; }
    [[nodiscard]] bool has_transition_branch() const {
        return transition_graph != TransitionGraphKind::None;
    }

    friend bool operator==(const Wiring&, const Wiring&) = default;
};

inline Wiring apply_variant(Variant v) {
    using C = ConceptGraphKind;
    using Tr = TransitionGraphKind;
    using F = FusionKind;
    switch (v) {
        case Variant::DGEKT: return {C::Hypergraph, Tr::Directed, F::Distill};
        case Variant::CAG: return {C::Clique, Tr::Directed, F::Distill};
        case Variant::TG: return {C::Hypergraph, Tr::Undirected, F::Distill};
        case Variant::RmCAHG: return {C::None, Tr::Directed, F::Single};
        case Variant::RmDTG: return {C::Hypergraph, Tr::None, F::Single};
        case Variant::RmOKD: return {C::Hypergraph, Tr::Directed, F::Concat};
    }
    throw Error("apply_variant: unknown variant");
}

/// Graph structures a variant needs, built from the vocabulary and the
/// training sequences only.
struct GraphSet {
    std::size_t num_exercises = 0;
    std::optional<ConceptHypergraph> cahg;
    std::optional<TransitionGraph> dtg;
};

inline GraphSet build_graph_set(const Vocabulary& vocab, const std::vector<StudentSequence>& train,
                                const Wiring& wiring) {
    GraphSet g;
    g.num_exercises = vocab.num_exercises();
    if (wiring.has_concept_branch()) {
        g.cahg = build_cahg(vocab);
        counters().cahg_built++;
    }
    if (wiring.has_transition_branch()) {
        g.dtg = build_dtg(train, vocab.num_exercises());
        counters().dtg_built++;
    }
    return g;
}

/// Propagation coefficients in the model's scalar type.
template <class T>
struct GraphInputs {
    std::size_t num_nodes = 0;
    SharedCsr<T> concept_coeff;
    SharedCsr<T> p_in;
    SharedCsr<T> p_out;
    SharedCsr<T> undirected_coeff;
};

template <class T>
GraphInputs<T> make_graph_inputs(const GraphSet& graphs, const Wiring& wiring) {
    GraphInputs<T> in;
    in.num_nodes = 2 * graphs.num_exercises;
    auto share = [](const CsrMatrix<double>& m) {
        return std::make_shared<const CsrMatrix<T>>(m.template cast<T>());
    };
    if (wiring.concept_graph != ConceptGraphKind::None) {
        if (!graphs.cahg) throw Error("make_graph_inputs: concept hypergraph missing");
        if (wiring.concept_graph == ConceptGraphKind::Hypergraph) {
            in.concept_coeff = share(cahg_propagation_coefficients(*graphs.cahg));
        } else {
            in.concept_coeff = share(clique_propagation_coefficients(*graphs.cahg));
            counters().clique_graph_built++;
        }
    }
    if (wiring.transition_graph != TransitionGraphKind::None) {
        if (!graphs.dtg) throw Error("make_graph_inputs: transition graph missing");
        if (wiring.transition_graph == TransitionGraphKind::Directed) {
            auto p = dtg_propagation_coefficients(*graphs.dtg);
            in.p_in = share(p.p_in);
            in.p_out = share(p.p_out);
        } else {
            in.undirected_coeff = share(undirected_transition_coefficients(*graphs.dtg));
            counters().undirected_graph_built++;
        }
    }
    return in;
}

/// One scored next-step prediction.
struct ScoredStep {
    std::size_t row = 0;       // position of the sequence in the batch
    std::size_t step = 0;      // index of the predicted step within the sequence
    std::size_t exercise = 0;  // exercise attempted at that step
    double y = 0.0;            // predicted probability of a correct response
    int r = 0;                 // actual response
};

template <class T>
struct BatchResult {
    ad::Var<T> loss;
    std::size_t predictions = 0;
    // Summed per-prediction cross-entropies of each head and the summed
    // per-row distillation distance (already divided by n).
    double ce_concept = 0.0;
    double ce_transition = 0.0;
    double ce_teacher = 0.0;
    double ce_fusion = 0.0;
    double kd = 0.0;
    std::size_t kd_rows = 0;
    std::vector<ScoredStep> scores;
};

template <class T>
class Model {
public:
    Model(const TrainConfig& config, std::size_t num_exercises, Rng& rng)
        : config_(config), wiring_(apply_variant(config.variant)), num_exercises_(num_exercises) {
        config_.validate();
        if (num_exercises == 0) throw Error("Model: empty exercise vocabulary");
        const std::size_t nodes = 2 * num_exercises;
        const std::size_t d = config_.embedding_dim;
        const std::size_t h = config_.gru_hidden;
        const std::size_t state = config_.state_dim();

        if (wiring_.has_concept_branch()) x0_concept_ = EmbeddingTable<T>::init(nodes, d, rng);
        if (wiring_.has_transition_branch()) {
            if (wiring_.has_concept_branch() && config_.shared_embedding)
                x0_transition_ = x0_concept_;
            else
                x0_transition_ = EmbeddingTable<T>::init(nodes, d, rng);
        }

        if (wiring_.has_concept_branch()) {
            for (std::size_t l = 0; l < config_.graph_layers; ++l)
                concept_layers_.push_back(HgcnLayer<T>::init(d, d, rng));
            if (wiring_.concept_graph == ConceptGraphKind::Hypergraph)
                counters().hypergraph_encoders++;
            else
                counters().clique_encoders++;
        }
        if (wiring_.transition_graph == TransitionGraphKind::Directed) {
            for (std::size_t l = 0; l < config_.graph_layers; ++l)
                directed_layers_.push_back(DgcnLayer<T>::init(d, d, rng));
            counters().directed_encoders++;
        } else if (wiring_.transition_graph == TransitionGraphKind::Undirected) {
            for (std::size_t l = 0; l < config_.graph_layers; ++l)
                undirected_layers_.push_back(HgcnLayer<T>::init(d, d, rng));
            counters().undirected_encoders++;
        }

        if (wiring_.has_concept_branch()) gru_concept_ = GruParameters<T>::init(d, h, rng);
        if (wiring_.has_transition_branch()) {
            if (wiring_.has_concept_branch() && config_.share_gru)
                gru_transition_ = gru_concept_;
            else
                gru_transition_ = GruParameters<T>::init(d, h, rng);
        }

        if (wiring_.fusion != FusionKind::Concat) {
            if (wiring_.has_concept_branch()) readout_concept_ = ReadoutParameters<T>::init(state, rng);
            if (wiring_.has_transition_branch())
                readout_transition_ = ReadoutParameters<T>::init(state, rng);
        }
        if (wiring_.fusion == FusionKind::Distill) {
            gate_ = GateParameters<T>::init(state, rng);
            readout_teacher_ = ReadoutParameters<T>::init(state, rng);
            counters().gates++;
            counters().teacher_readouts++;
        } else if (wiring_.fusion == FusionKind::Concat) {
            readout_fusion_ = ReadoutParameters<T>::init(2 * state, rng);
            counters().concat_readouts++;
        }
    }

    [[nodiscard]] const TrainConfig& config() const noexcept { return config_; }
    [[nodiscard]] const Wiring& wiring() const noexcept { return wiring_; }
    [[nodiscard]] std::size_t num_exercises() const noexcept { return num_exercises_; }

    [[nodiscard]] bool has_gate() const { return gate_.has_value(); }
    [[nodiscard]] bool has_teacher() const { return readout_teacher_.has_value(); }
    [[nodiscard]] bool has_concat_readout() const { return readout_fusion_.has_value(); }
    [[nodiscard]] std::size_t concat_readout_width() const {
        return readout_fusion_ ? readout_fusion_->w.rows() : 0;
    }
    [[nodiscard]] const std::optional<GateParameters<T>>& gate() const { return gate_; }

    /// Every distinct trainable tensor with a stable name, in a fixed order.
    [[nodiscard]] std::vector<std::pair<std::string, ad::Var<T>>> named_parameters() const {
        std::vector<std::pair<std::string, ad::Var<T>>> out;
        auto add = [&](std::string name, const ad::Var<T>& v) {
            for (const auto& [_, existing] : out)
                if (existing.node() == v.node()) return;
            out.emplace_back(std::move(name), v);
        };
        if (x0_concept_) add("concept/x0", x0_concept_->x0);
        if (x0_transition_) add("transition/x0", x0_transition_->x0);
        for (std::size_t l = 0; l < concept_layers_.size(); ++l)
            add("concept/layer" + std::to_string(l) + "/theta", concept_layers_[l].theta);
        for (std::size_t l = 0; l < directed_layers_.size(); ++l) {
            add("transition/layer" + std::to_string(l) + "/phi", directed_layers_[l].phi);
            add("transition/layer" + std::to_string(l) + "/psi", directed_layers_[l].psi);
        }
        for (std::size_t l = 0; l < undirected_layers_.size(); ++l)
            add("transition/layer" + std::to_string(l) + "/theta", undirected_layers_[l].theta);
        auto add_gru = [&](const std::string& prefix, const GruParameters<T>& g) {
            add(prefix + "/gru/w_r", g.w_r);
            add(prefix + "/gru/w_u", g.w_u);
            add(prefix + "/gru/w_c", g.w_c);
            add(prefix + "/gru/b_r", g.b_r);
            add(prefix + "/gru/b_u", g.b_u);
            add(prefix + "/gru/b_c", g.b_c);
        };
        if (gru_concept_) add_gru("concept", *gru_concept_);
        if (gru_transition_) add_gru("transition", *gru_transition_);
        auto add_readout = [&](const std::string& prefix, const ReadoutParameters<T>& r) {
            add(prefix + "/readout/w", r.w);
            add(prefix + "/readout/b", r.b);
        };
        if (readout_concept_) add_readout("concept", *readout_concept_);
        if (readout_transition_) add_readout("transition", *readout_transition_);
        if (gate_) {
            add("teacher/gate/w_g", gate_->w_g);
            add("teacher/gate/b_g", gate_->b_g);
        }
        if (readout_teacher_) add_readout("teacher", *readout_teacher_);
        if (readout_fusion_) add_readout("fusion", *readout_fusion_);
        return out;
    }

    [[nodiscard]] std::vector<ad::Var<T>> parameters() const {
        std::vector<ad::Var<T>> out;
        for (auto& [_, v] : named_parameters()) out.push_back(v);
        return out;
    }

    [[nodiscard]] std::vector<ad::Matrix<T>> snapshot() const {
        std::vector<ad::Matrix<T>> out;
        for (const auto& p : parameters()) out.push_back(p.value());
        return out;
    }

    void restore(const std::vector<ad::Matrix<T>>& values) {
        auto params = parameters();
        if (values.size() != params.size())
            throw Error("Model::restore: " + std::to_string(values.size()) + " tensors for " +
                        std::to_string(params.size()) + " parameters");
        for (std::size_t k = 0; k < params.size(); ++k) {
            if (!values[k].same_shape(params[k].value()))
                throw ShapeError("Model::restore: tensor " + std::to_string(k) + " has shape " +
                                 values[k].shape_string() + ", expected " + params[k].shape_string());
            params[k].mutable_value() = values[k];
        }
    }

    /// Embeddings produced by the concept-side encoder, [2n x d].
    [[nodiscard]] ad::Var<T> encode_concept(const GraphInputs<T>& g) const {
        if (!wiring_.has_concept_branch()) throw Error("encode_concept: variant has no concept branch");
        return encode(*x0_concept_, g.concept_coeff, concept_layers_, slope());
    }

    /// Embeddings produced by the transition-side encoder, [2n x d].
    [[nodiscard]] ad::Var<T> encode_transition(const GraphInputs<T>& g) const {
        if (wiring_.transition_graph == TransitionGraphKind::Directed)
            return encode(*x0_transition_, g.p_in, g.p_out, directed_layers_, slope());
        if (wiring_.transition_graph == TransitionGraphKind::Undirected)
            return encode(*x0_transition_, g.undirected_coeff, undirected_layers_, slope());
        throw Error("encode_transition: variant has no transition branch");
    }

    /// Runs every sequence of the batch, predicting step k+1 from the state
    /// after step k. The loss is the per-prediction mean of the cross-entropy
    /// terms plus lambda times the per-row mean distillation distance. With
    /// `with_distill` false only the attempted exercises are scored and the
    /// distillation term is skipped.
    BatchResult<T> forward(std::span<const StudentSequence* const> batch, const GraphInputs<T>& graphs,
                           bool with_distill = true) const {
        BatchResult<T> res;
        const std::size_t B = batch.size();
        const std::size_t n = num_exercises_;
        const std::size_t h = config_.gru_hidden;
        const std::size_t d = config_.embedding_dim;
        const std::size_t D = config_.state_dim();
        if (graphs.num_nodes != 2 * n)
            throw ShapeError("Model::forward: graph has " + std::to_string(graphs.num_nodes) +
                             " nodes, model expects " + std::to_string(2 * n));
        std::size_t max_len = 0;
        for (const auto* s : batch) {
            max_len = std::max(max_len, s->steps.size());
            for (const auto& st : s->steps)
                if (st.exercise >= n)
                    throw Error("Model::forward: exercise index " + std::to_string(st.exercise) +
                                " outside vocabulary of " + std::to_string(n));
        }

        const bool with_concept = wiring_.has_concept_branch();
        const bool with_transition = wiring_.has_transition_branch();
        const bool distill = wiring_.fusion == FusionKind::Distill;
        const bool concat = wiring_.fusion == FusionKind::Concat;
        const bool need_all = distill && with_distill && config_.lambda > 0.0;

        std::vector<std::size_t> plus(n), minus(n);
        for (std::size_t i = 0; i < n; ++i) {
            plus[i] = node_index(i, 1);
            minus[i] = node_index(i, 0);
        }
        const auto ones_row = ad::Var<T>::constant(ad::Matrix<T>(1, n, T(1)));

        struct Branch {
            ad::Var<T> nodes;       // [2n x d]
            ad::Var<T> exercises;   // [n x 2d], rows [x_plus, x_minus]
            ad::Var<T> w_hidden;    // [h x 1]
            ad::Var<T> ex_logit;    // [n x 1] exercise part of the logit incl. bias
            ad::Var<T> ex_row;      // [1 x n]
            ad::Var<T> state;       // [B x h]
        };
        auto make_branch = [&](ad::Var<T> nodes, const std::optional<ReadoutParameters<T>>& readout) {
            Branch b;
            b.nodes = nodes;
            b.exercises = ad::concat_cols<T>({ad::gather_rows(nodes, plus), ad::gather_rows(nodes, minus)});
            if (readout) {
                b.w_hidden = ad::slice_rows(readout->w, 0, h);
                b.ex_logit = ad::add_row(ad::matmul(b.exercises, ad::slice_rows(readout->w, h, 2 * d)), readout->b);
                if (need_all) b.ex_row = ad::transpose(b.ex_logit);
            }
            b.state = ad::Var<T>::constant(ad::Matrix<T>(B, h));
            return b;
        };
        std::optional<Branch> bc, bd;
        if (with_concept) bc = make_branch(encode_concept(graphs), readout_concept_);
        if (with_transition) bd = make_branch(encode_transition(graphs), readout_transition_);

        // Teacher pieces shared by all steps.
        ad::Var<T> gate_hc, gate_hd, gate_items, teacher_w, teacher_b_row;
        if (distill) {
            gate_hc = ad::slice_rows(gate_->w_g, 0, h);
            gate_hd = ad::slice_rows(gate_->w_g, D, h);
            gate_items = ad::add(ad::matmul(bc->exercises, ad::slice_rows(gate_->w_g, h, 2 * d)),
                                 ad::matmul(bd->exercises, ad::slice_rows(gate_->w_g, D + h, 2 * d)));
            teacher_w = readout_teacher_->w;
            teacher_b_row = ad::matmul(readout_teacher_->b, ones_row);
        }
        ad::Var<T> fusion_wc, fusion_wd, fusion_ex;
        if (concat) {
            const auto& w = readout_fusion_->w;
            fusion_wc = ad::slice_rows(w, 0, h);
            fusion_wd = ad::slice_rows(w, D, h);
            fusion_ex = ad::add_row(
                ad::add(ad::matmul(bc->exercises, ad::slice_rows(w, h, 2 * d)),
                        ad::matmul(bd->exercises, ad::slice_rows(w, D + h, 2 * d))),
                readout_fusion_->b);
        }

        std::vector<ad::Var<T>> ce_terms, kd_terms;
        std::vector<std::size_t> inputs(B), targets(B);
        std::vector<T> responses(B), mask(B);
        for (std::size_t k = 0; k + 1 < max_len; ++k) {
            std::size_t active = 0;
            for (std::size_t b = 0; b < B; ++b) {
                const auto& steps = batch[b]->steps;
                inputs[b] = k < steps.size() ? node_index(steps[k].exercise, steps[k].correct) : 0;
                const bool live = k + 1 < steps.size();
                targets[b] = live ? steps[k + 1].exercise : 0;
                responses[b] = live ? T(steps[k + 1].correct) : T(0);
                mask[b] = live ? T(1) : T(0);
                active += live ? 1 : 0;
            }
            if (active == 0) break;
            res.predictions += active;

            ad::Var<T> zc_all, zd_all, zc, zd;
            if (bc) bc->state = gru_step(bc->state, ad::gather_rows(bc->nodes, inputs), *gru_concept_);
            if (bd) bd->state = gru_step(bd->state, ad::gather_rows(bd->nodes, inputs), *gru_transition_);

            auto branch_logits = [&](Branch& br, ad::Var<T>& all) {
                auto hz = ad::matmul(br.state, br.w_hidden);  // [B x 1]
                if (need_all) {
                    all = ad::add_row(ad::matmul(hz, ones_row), br.ex_row);
                    return ad::pick(all, targets);
                }
                return ad::add(hz, ad::gather_rows(br.ex_logit, targets));
            };
            auto record_ce = [&](const ad::Var<T>& z, double& acc) {
                auto ce = ad::binary_cross_entropy<T>(z, responses, mask, T(kProbabilityClamp));
                acc += static_cast<double>(ce.item());
                ce_terms.push_back(ce);
            };

            ad::Var<T> deployed;
            if (wiring_.fusion != FusionKind::Concat) {
                if (bc) {
                    zc = branch_logits(*bc, zc_all);
                    record_ce(zc, res.ce_concept);
                    deployed = zc;
                }
                if (bd) {
                    zd = branch_logits(*bd, zd_all);
                    record_ce(zd, res.ce_transition);
                    deployed = zd;
                }
            }
            if (distill) {
                auto gate_rows = ad::add_row(ad::add(ad::matmul(bc->state, gate_hc), ad::matmul(bd->state, gate_hd)),
                                             gate_->b_g);
                ad::Var<T> ze;
                ad::Var<T> ze_all;
                if (need_all) {
                    ze_all = ad::add_row(ad::gated_readout(gate_rows, gate_items, bc->state, bc->exercises,
                                                           bd->state, bd->exercises, teacher_w),
                                         teacher_b_row);
                    ze = ad::pick(ze_all, targets);
                } else {
                    ze = ad::add_row(ad::gated_readout_at(gate_rows, gate_items, bc->state, bc->exercises,
                                                          bd->state, bd->exercises, teacher_w, targets),
                                     readout_teacher_->b);
                }
                record_ce(ze, res.ce_teacher);
                deployed = ze;
                if (need_all) {
                    ad::Matrix<T> kd_mask(B, n);
                    std::size_t rows = 0;
                    for (std::size_t b = 0; b < B; ++b) {
                        const auto len = batch[b]->steps.size();
                        const bool use = mask[b] != T(0) && (!config_.distill_last_step_only || k + 2 == len);
                        if (!use) continue;
                        ++rows;
                        for (std::size_t i = 0; i < n; ++i) kd_mask(b, i) = T(1);
                    }
                    if (rows > 0) {
                        counters().distill_evaluations++;
                        const auto m = ad::Var<T>::constant(std::move(kd_mask));
                        auto ye = soften(config_.stop_teacher_grad ? ad::detach(ze_all) : ze_all, config_.gamma);
                        auto dist = ad::add(
                            ad::abs_sum(ad::hadamard(m, ad::sub(ye, soften(zc_all, config_.gamma)))),
                            ad::abs_sum(ad::hadamard(m, ad::sub(ye, soften(zd_all, config_.gamma)))));
                        auto per_row = ad::scale(dist, static_cast<T>(1.0 / static_cast<double>(n)));
                        res.kd += static_cast<double>(per_row.item());
                        res.kd_rows += rows;
                        kd_terms.push_back(per_row);
                    }
                }
            }
            if (concat) {
                auto zf = ad::add(ad::add(ad::matmul(bc->state, fusion_wc), ad::matmul(bd->state, fusion_wd)),
                                  ad::gather_rows(fusion_ex, targets));
                record_ce(zf, res.ce_fusion);
                deployed = zf;
            }

            for (std::size_t b = 0; b < B; ++b) {
                if (mask[b] == T(0)) continue;
                res.scores.push_back({b, k + 1, targets[b],
                                      static_cast<double>(ad::sigmoid_scalar(deployed.value()[b])),
                                      static_cast<int>(responses[b])});
            }
        }

        if (res.predictions == 0) {
            res.loss = ad::Var<T>::constant(ad::Matrix<T>::scalar(T(0)));
            return res;
        }
        auto loss = ad::scale(ad::sum(ad::concat_rows(ce_terms)),
                              static_cast<T>(1.0 / static_cast<double>(res.predictions)));
        if (!kd_terms.empty()) {
            auto kd = ad::scale(ad::sum(ad::concat_rows(kd_terms)),
                                static_cast<T>(1.0 / static_cast<double>(res.kd_rows)));
            loss = ad::add(loss, ad::scale(kd, static_cast<T>(config_.lambda)));
        }
        res.loss = loss;
        return res;
    }

    /// Probability that a student with `history` answers `exercise` correctly next.
    [[nodiscard]] double predict(const GraphInputs<T>& graphs, const std::vector<Step>& history,
                                 std::size_t exercise) const {
        if (history.empty()) throw Error("predict: prediction requires at least one past interaction");
        if (exercise >= num_exercises_)
            throw Error("predict: exercise index " + std::to_string(exercise) + " outside vocabulary of " +
                        std::to_string(num_exercises_));
        ad::NoGradGuard guard;
        StudentSequence seq{"query", history};
        seq.steps.push_back({exercise, 0});
        const StudentSequence* ptr = &seq;
        auto res = forward(std::span<const StudentSequence* const>(&ptr, 1), graphs, false);
        return res.scores.back().y;
    }

private:
    [[nodiscard]] T slope() const { return static_cast<T>(config_.leaky_slope); }

    TrainConfig config_;
    Wiring wiring_;
    std::size_t num_exercises_;
    std::optional<EmbeddingTable<T>> x0_concept_;
    std::optional<EmbeddingTable<T>> x0_transition_;
    std::vector<HgcnLayer<T>> concept_layers_;
    std::vector<DgcnLayer<T>> directed_layers_;
    std::vector<HgcnLayer<T>> undirected_layers_;
    std::optional<GruParameters<T>> gru_concept_;
    std::optional<GruParameters<T>> gru_transition_;
    std::optional<ReadoutParameters<T>> readout_concept_;
    std::optional<ReadoutParameters<T>> readout_transition_;
    std::optional<GateParameters<T>> gate_;
    std::optional<ReadoutParameters<T>> readout_teacher_;
    std::optional<ReadoutParameters<T>> readout_fusion_;
};

}  // namespace dgekt
