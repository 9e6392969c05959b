#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dgekt/autodiff.hpp"

namespace dgekt {

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moments are kept per parameter, in parameter order.
template <class T>
struct AdamState {
    AdamOptions options;
    std::int64_t step_count = 0;
    std::vector<ad::Matrix<T>> first_moment;
    std::vector<ad::Matrix<T>> second_moment;
};

/// Applies one update using the gradients currently stored on `params`.
/// Gradients are left untouched.
template <class T>
void adam_step(std::vector<ad::Var<T>>& params, AdamState<T>& state) {
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.rows(), p.cols());
            state.second_moment.emplace_back(p.rows(), p.cols());
        }
    }
    if (state.first_moment.size() != params.size())
        throw ShapeError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                         " tensors, got " + std::to_string(params.size()));
    ++state.step_count;
    const auto& opt = state.options;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step_count));
    const T b1 = static_cast<T>(opt.beta1);
    const T b2 = static_cast<T>(opt.beta2);
    const T step = static_cast<T>(opt.learning_rate / bc1);
    const T sqrt_bc2 = static_cast<T>(std::sqrt(bc2));
    const T eps = static_cast<T>(opt.epsilon);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        if (!m.same_shape(p.value()))
            throw ShapeError("adam_step: moment " + m.shape_string() + " vs parameter " +
                             p.shape_string());
        const auto& g = p.grad();
        auto& x = p.mutable_value();
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            x[i] -= step * m[i] / (std::sqrt(v[i]) / sqrt_bc2 + eps);
        }
    }
}

template <class T>
void zero_grads(std::vector<ad::Var<T>>& params) {
    for (auto& p : params) p.zero_grad();
}

}  // namespace dgekt
