#pragma once

#include <cstddef>
#include <random>

#include "dgekt/autodiff.hpp"

namespace dgekt {

using Rng = std::mt19937_64;

template <class T>
ad::Matrix<T> uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    ad::Matrix<T> m(rows, cols);
    for (auto& v : m.span()) v = static_cast<T>(dist(rng));
    return m;
}

}  // namespace dgekt
