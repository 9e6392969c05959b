#pragma once

// One student-model branch: GRU over interaction embeddings, per-exercise
// knowledge states and the logistic readout.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dgekt/autodiff.hpp"
#include "dgekt/init.hpp"

namespace dgekt {

/// Gate weights act on the row vector [h, x]; biases are [1 x h] rows.
template <class T>
struct GruParameters {
    ad::Var<T> w_r, w_u, w_c;  // [(h + d) x h]
    ad::Var<T> b_r, b_u, b_c;  // [1 x h]

    static GruParameters init(std::size_t input_dim, std::size_t hidden, Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(hidden + input_dim));
        GruParameters p;
        p.w_r = ad::Var<T>::parameter(uniform_matrix<T>(hidden + input_dim, hidden, bound, rng));
        p.w_u = ad::Var<T>::parameter(uniform_matrix<T>(hidden + input_dim, hidden, bound, rng));
        p.w_c = ad::Var<T>::parameter(uniform_matrix<T>(hidden + input_dim, hidden, bound, rng));
        p.b_r = ad::Var<T>::parameter(ad::Matrix<T>(1, hidden));
        p.b_u = ad::Var<T>::parameter(ad::Matrix<T>(1, hidden));
        p.b_c = ad::Var<T>::parameter(ad::Matrix<T>(1, hidden));
        return p;
    }

    [[nodiscard]] std::size_t hidden() const { return w_r.cols(); }
    [[nodiscard]] std::size_t input_dim() const { return w_r.rows() - w_r.cols(); }
};

/// z = w^T s + b over states s = [h, x_plus, x_minus].
template <class T>
struct ReadoutParameters {
    ad::Var<T> w;  // [D x 1]
    ad::Var<T> b;  // [1 x 1]

    static ReadoutParameters init(std::size_t state_dim, Rng& rng) {
        return {ad::Var<T>::parameter(
                    uniform_matrix<T>(state_dim, 1, 1.0 / std::sqrt(static_cast<double>(state_dim)), rng)),
                ad::Var<T>::parameter(ad::Matrix<T>(1, 1))};
    }
};

/// One GRU update for a batch of rows: h [B x h], x [B x d] -> [B x h].
template <class T>
ad::Var<T> gru_step(const ad::Var<T>& h, const ad::Var<T>& x, const GruParameters<T>& p) {
    if (h.rows() != x.rows() || h.cols() != p.hidden() || x.cols() != p.input_dim())
        throw ShapeError("gru_step: state " + h.shape_string() + ", input " + x.shape_string() +
                         ", weights " + p.w_r.shape_string());
    auto hx = ad::concat_cols<T>({h, x});
    auto r = ad::sigmoid(ad::add_row(ad::matmul(hx, p.w_r), p.b_r));
    auto u = ad::sigmoid(ad::add_row(ad::matmul(hx, p.w_u), p.b_u));
    auto reset = ad::concat_cols<T>({ad::hadamard(r, h), x});
    auto c = ad::tanh(ad::add_row(ad::matmul(reset, p.w_c), p.b_c));
    // (1 - u) * h + u * c
    return ad::add(h, ad::hadamard(u, ad::sub(c, h)));
}

/// Runs the GRU from a zero initial state over per-step inputs (each
/// [B x d], usually B = 1) and returns h_1..h_t.
template <class T>
std::vector<ad::Var<T>> gru_forward(const std::vector<ad::Var<T>>& inputs, const GruParameters<T>& p) {
    if (inputs.empty()) throw Error("gru_forward: empty sequence");
    std::vector<ad::Var<T>> states;
    states.reserve(inputs.size());
    ad::Var<T> h = ad::Var<T>::constant(ad::Matrix<T>(inputs.front().rows(), p.hidden()));
    for (const auto& x : inputs) {
        h = gru_step(h, x, p);
        states.push_back(h);
    }
    return states;
}

/// s = [h, x_plus, x_minus] for column vectors.
template <class T>
ad::Var<T> knowledge_state(const ad::Var<T>& h, const ad::Var<T>& x_plus, const ad::Var<T>& x_minus) {
    if (h.cols() != 1 || x_plus.cols() != 1 || x_minus.cols() != 1 || x_plus.rows() != x_minus.rows())
        throw ShapeError("knowledge_state: expected column vectors, got " + h.shape_string() + ", " +
                         x_plus.shape_string() + ", " + x_minus.shape_string());
    return ad::concat_rows<T>({h, x_plus, x_minus});
}

template <class T>
struct Prediction1 {
    ad::Var<T> logit;
    T probability;
};

template <class T>
Prediction1<T> predict_prob(const ad::Var<T>& state, const ReadoutParameters<T>& readout) {
    if (state.rows() != readout.w.rows() || state.cols() != 1)
        throw ShapeError("predict_prob: state " + state.shape_string() + " vs readout " +
                         readout.w.shape_string());
    auto z = ad::add(ad::matmul(ad::transpose(readout.w), state), readout.b);
    return {z, ad::sigmoid_scalar(z.item())};
}

inline constexpr double kProbabilityClamp = 1e-7;

/// Cross-entropy of next-step predictions: logits[k] is scored against the
/// response actually given at step k+1.
template <class T>
ad::Var<T> ce_loss(const ad::Var<T>& logits, std::span<const int> next_responses) {
    if (logits.size() == 0)
        throw Error("ce_loss: a sequence needs at least 2 steps to produce a target");
    if (next_responses.size() != logits.size())
        throw ShapeError("ce_loss: " + std::to_string(next_responses.size()) + " targets for " +
                         logits.shape_string() + " logits");
    std::vector<T> r(next_responses.begin(), next_responses.end());
    std::vector<T> mask(r.size(), T(1));
    return ad::binary_cross_entropy<T>(logits, r, mask, T(kProbabilityClamp));
}

}  // namespace dgekt
