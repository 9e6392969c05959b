#pragma once

// Node-embedding encoders: hypergraph convolution over the concept graph and
// bidirectional directed convolution over the transition graph.

#include <cmath>
#include <cstddef>
#include <memory>
#include <vector>

#include "dgekt/autodiff.hpp"
#include "dgekt/init.hpp"
#include "dgekt/sparse.hpp"

namespace dgekt {

template <class T>
using SharedCsr = std::shared_ptr<const CsrMatrix<T>>;

/// Layer-0 embedding of every interaction node, [2n x d].
template <class T>
struct EmbeddingTable {
    ad::Var<T> x0;

    static EmbeddingTable init(std::size_t num_nodes, std::size_t dim, Rng& rng) {
        return {ad::Var<T>::parameter(
            uniform_matrix<T>(num_nodes, dim, 1.0 / std::sqrt(static_cast<double>(dim)), rng))};
    }
};

namespace detail {

inline double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace detail

/// One propagation layer phi(C X Theta). Used with hypergraph coefficients and,
/// in the ablations, with symmetric-normalised simple-graph coefficients.
template <class T>
struct HgcnLayer {
    ad::Var<T> theta;  // [d_in x d_out]

    static HgcnLayer init(std::size_t d_in, std::size_t d_out, Rng& rng) {
        return {ad::Var<T>::parameter(
            uniform_matrix<T>(d_in, d_out, detail::glorot_bound(d_in, d_out), rng))};
    }
};

template <class T>
struct DgcnLayer {
    ad::Var<T> phi;  // along edge direction
    ad::Var<T> psi;  // against edge direction

    static DgcnLayer init(std::size_t d_in, std::size_t d_out, Rng& rng) {
        const double bound = detail::glorot_bound(d_in, d_out);
        auto phi = ad::Var<T>::parameter(uniform_matrix<T>(d_in, d_out, bound, rng));
        auto psi = ad::Var<T>::parameter(uniform_matrix<T>(d_in, d_out, bound, rng));
        return {phi, psi};
    }
};

template <class T>
ad::Var<T> hgcn_forward(const ad::Var<T>& x, const SharedCsr<T>& coeff, const HgcnLayer<T>& layer,
                        T slope = T(ad::kDefaultLeakySlope)) {
    if (coeff->cols() != x.rows())
        throw ShapeError("hgcn_forward: coefficients " +
                         ad::Matrix<T>::shape_string(coeff->rows(), coeff->cols()) +
                         " vs embeddings " + x.shape_string());
    if (layer.theta.rows() != x.cols())
        throw ShapeError("hgcn_forward: embeddings " + x.shape_string() + " vs weight " +
                         layer.theta.shape_string());
    return ad::leaky_relu(ad::matmul(ad::spmm(coeff, x), layer.theta), slope);
}

/// phi(P_in X Phi) + phi(P_out X Psi).
template <class T>
ad::Var<T> dgcn_forward(const ad::Var<T>& x, const SharedCsr<T>& p_in, const SharedCsr<T>& p_out,
                        const DgcnLayer<T>& layer, T slope = T(ad::kDefaultLeakySlope)) {
    if (p_in->cols() != x.rows() || p_out->cols() != x.rows())
        throw ShapeError("dgcn_forward: transition coefficients " +
                         ad::Matrix<T>::shape_string(p_in->rows(), p_in->cols()) +
                         " vs embeddings " + x.shape_string());
    if (layer.phi.rows() != x.cols() || layer.psi.rows() != x.cols() ||
        layer.phi.cols() != layer.psi.cols())
        throw ShapeError("dgcn_forward: embeddings " + x.shape_string() + " vs weights " +
                         layer.phi.shape_string() + "/" + layer.psi.shape_string());
    auto ancestors = ad::leaky_relu(ad::matmul(ad::spmm(p_in, x), layer.phi), slope);
    auto descendants = ad::leaky_relu(ad::matmul(ad::spmm(p_out, x), layer.psi), slope);
    return ad::add(ancestors, descendants);
}

template <class T>
ad::Var<T> encode(const EmbeddingTable<T>& table, const SharedCsr<T>& coeff,
                  const std::vector<HgcnLayer<T>>& layers, T slope = T(ad::kDefaultLeakySlope)) {
    if (layers.empty()) throw Error("encode: at least one layer required");
    ad::Var<T> x = table.x0;
    for (const auto& l : layers) x = hgcn_forward(x, coeff, l, slope);
    return x;
}

template <class T>
ad::Var<T> encode(const EmbeddingTable<T>& table, const SharedCsr<T>& p_in, const SharedCsr<T>& p_out,
                  const std::vector<DgcnLayer<T>>& layers, T slope = T(ad::kDefaultLeakySlope)) {
    if (layers.empty()) throw Error("encode: at least one layer required");
    ad::Var<T> x = table.x0;
    for (const auto& l : layers) x = dgcn_forward(x, p_in, p_out, l, slope);
    return x;
}

}  // namespace dgekt
