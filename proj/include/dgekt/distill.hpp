#pragma once

// Gated teacher ensemble and the online distillation objective.

#include <cmath>
#include <cstddef>

#include "dgekt/autodiff.hpp"
#include "dgekt/init.hpp"

namespace dgekt {

/// g = sigmoid([s_c, s_d] W_g + b_g) with W_g [2D x D] and b_g [1 x D].
template <class T>
struct GateParameters {
    ad::Var<T> w_g;
    ad::Var<T> b_g;

    static GateParameters init(std::size_t state_dim, Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(2 * state_dim));
        return {ad::Var<T>::parameter(uniform_matrix<T>(2 * state_dim, state_dim, bound, rng)),
                ad::Var<T>::parameter(ad::Matrix<T>(1, state_dim))};
    }

    [[nodiscard]] std::size_t state_dim() const { return w_g.cols(); }
};

struct DistillConfig {
    double gamma = 0.5;
    double lambda = 0.01;
};

/// Teacher state for one pair of column-vector branch states.
template <class T>
ad::Var<T> gate_fuse(const ad::Var<T>& s_c, const ad::Var<T>& s_d, const GateParameters<T>& gate) {
    if (!s_c.value().same_shape(s_d.value()) || s_c.cols() != 1)
        throw ShapeError("gate_fuse: branch states " + s_c.shape_string() + " vs " + s_d.shape_string());
    if (s_c.rows() != gate.state_dim())
        throw ShapeError("gate_fuse: state " + s_c.shape_string() + " vs gate " + gate.w_g.shape_string());
    auto joint = ad::transpose(ad::concat_rows<T>({s_c, s_d}));
    auto g = ad::transpose(ad::sigmoid(ad::add_row(ad::matmul(joint, gate.w_g), gate.b_g)));
    return ad::add(s_d, ad::hadamard(g, ad::sub(s_c, s_d)));
}

/// sigmoid(z / gamma), elementwise.
template <class T>
ad::Var<T> soften(const ad::Var<T>& logits, double gamma) {
    if (!(gamma > 0.0)) throw Error("soften: temperature must be positive, got " + std::to_string(gamma));
    return ad::sigmoid(ad::scale(logits, static_cast<T>(1.0 / gamma)));
}

/// (1/n) sum_i |y~_e,i - y~_c,i| + |y~_e,i - y~_d,i| over logits of the same n exercises.
template <class T>
ad::Var<T> distill_loss(const ad::Var<T>& teacher, const ad::Var<T>& student_c,
                        const ad::Var<T>& student_d, double gamma) {
    if (!teacher.value().same_shape(student_c.value()) || !teacher.value().same_shape(student_d.value()))
        throw ShapeError("distill_loss: logit shapes " + teacher.shape_string() + ", " +
                         student_c.shape_string() + ", " + student_d.shape_string());
    if (teacher.size() == 0) throw Error("distill_loss: no exercises");
    auto ye = soften(teacher, gamma);
    auto terms = ad::add(ad::abs_sum(ad::sub(ye, soften(student_c, gamma))),
                         ad::abs_sum(ad::sub(ye, soften(student_d, gamma))));
    return ad::scale(terms, static_cast<T>(1.0 / static_cast<double>(teacher.size())));
}

/// L = ce_c + ce_d + ce_e + lambda * kd.
template <class T>
ad::Var<T> total_loss(const ad::Var<T>& ce_c, const ad::Var<T>& ce_d, const ad::Var<T>& ce_e,
                      const ad::Var<T>& kd, double lambda) {
    return ad::add(ad::add(ad::add(ce_c, ce_d), ce_e), ad::scale(kd, static_cast<T>(lambda)));
}

}  // namespace dgekt
