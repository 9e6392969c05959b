#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dgekt/autodiff.hpp"

namespace dgekt {

struct GradCheckEntry {
    std::size_t param = 0;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double relative_error = 0.0;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates = 0;
    std::vector<GradCheckEntry> entries;  // one per coordinate, in parameter order
};

/// Compares reverse-mode gradients of `f` against central differences
/// (f(x+h) - f(x-h)) / 2h, coordinate by coordinate. The relative error uses
/// max(|analytic|, |numeric|, 1e-8) as denominator.
template <class T>
GradCheckResult finite_difference_check(const std::function<ad::Var<T>()>& f,
                                        std::vector<ad::Var<T>> params, double h = 1e-5) {
    for (auto& p : params) p.zero_grad();
    {
        auto loss = f();
        ad::backward(loss);
    }
    std::vector<ad::Matrix<T>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());

    auto evaluate = [&] {
        ad::NoGradGuard guard;
        return f().item();
    };

    GradCheckResult result;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& x = params[k].mutable_value();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const T saved = x[i];
            x[i] = static_cast<T>(saved + h);
            const T up = evaluate();
            x[i] = static_cast<T>(saved - h);
            const T down = evaluate();
            x[i] = saved;
            const double numeric = static_cast<double>((up - down) / static_cast<T>(2.0 * h));
            const double a = static_cast<double>(analytic[k][i]);
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double err = std::abs(a - numeric) / denom;
            ++result.coordinates;
            result.entries.push_back({k, i, a, numeric, err});
            if (err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst_param = k;
                result.worst_index = i;
                result.analytic = a;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace dgekt
