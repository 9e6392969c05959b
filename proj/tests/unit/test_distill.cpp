#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <random>

#include "oracles.hpp"

using namespace dgekt;
using Catch::Approx;
using V = ad::Var<double>;
using M = ad::Matrix<double>;

namespace {

GateParameters<double> random_gate(std::size_t dim, std::mt19937_64& rng) {
    return {V::parameter(oracle::random_matrix<double>(2 * dim, dim, rng, -2, 2)),
            V::parameter(oracle::random_matrix<double>(1, dim, rng, -2, 2))};
}

std::vector<double> column(const V& v) { return {v.value().span().begin(), v.value().span().end()}; }

}  // namespace

TEST_CASE("zero gate gives the midpoint") {
    GateParameters<double> gate{V::parameter(M(6, 3)), V::parameter(M(1, 3))};
    auto c = V::constant(M::column({1, 2, 3}));
    auto d = V::constant(M::column({3, -2, 0}));
    CHECK(gate_fuse(c, d, gate).value() == M::column({2, 0, 1.5}));
}

TEST_CASE("equal branch states are a fixed point of any gate") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        auto gate = random_gate(4, rng);
        auto s = V::constant(oracle::random_matrix<double>(4, 1, rng));
        const auto e = gate_fuse(s, s, gate).value();
        for (std::size_t i = 0; i < 4; ++i) CHECK(e[i] == Approx(s.value()[i]).margin(1e-15));
    }
}

TEST_CASE("saturated gate selects the concept branch") {
    GateParameters<double> gate{V::parameter(M(4, 2)), V::parameter(M(1, 2, 20.0))};
    auto c = V::constant(M::column({0.7, -0.3}));
    auto d = V::constant(M::column({-0.5, 0.9}));
    const auto e = gate_fuse(c, d, gate).value();
    CHECK(e[0] == Approx(0.7).margin(1e-6));
    CHECK(e[1] == Approx(-0.3).margin(1e-6));
}

TEST_CASE("teacher state is a coordinatewise convex combination") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        auto gate = random_gate(5, rng);
        auto c = V::constant(oracle::random_matrix<double>(5, 1, rng));
        auto d = V::constant(oracle::random_matrix<double>(5, 1, rng));
        const auto e = gate_fuse(c, d, gate).value();
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(e[i] >= std::min(c.value()[i], d.value()[i]) - 1e-15);
            CHECK(e[i] <= std::max(c.value()[i], d.value()[i]) + 1e-15);
        }
    }
}

TEST_CASE("gate shape errors") {
    GateParameters<double> gate{V::parameter(M(6, 3)), V::parameter(M(1, 3))};
    CHECK_THROWS_AS(gate_fuse(V::constant(M(3, 1)), V::constant(M(2, 1)), gate), ShapeError);
    CHECK_THROWS_AS(gate_fuse(V::constant(M(2, 1)), V::constant(M(2, 1)), gate), ShapeError);
}

TEST_CASE("softening") {
    CHECK(soften(V::constant(M::scalar(0.0)), 3.0).item() == 0.5);
    CHECK(soften(V::constant(M::scalar(1.0)), 0.5).item() == Approx(0.8808).margin(1e-4));
    double prev = 1.0;
    for (double g : {0.5, 1.0, 2.0, 8.0, 100.0}) {
        const double y = soften(V::constant(M::scalar(1.5)), g).item();
        CHECK(y < prev);
        CHECK(y > 0.5);
        prev = y;
    }
    CHECK(prev == Approx(0.5).margin(0.01));
    CHECK_THROWS_AS(soften(V::constant(M::scalar(1.0)), 0.0), Error);
}

TEST_CASE("distillation loss examples") {
    auto z = V::constant(M::column({0.3, -1.0}));
    CHECK(distill_loss(z, z, z, 0.5).item() == 0.0);
    auto zero = V::constant(M::scalar(0.0));
    CHECK(distill_loss(zero, zero, V::constant(M::scalar(20.0)), 0.5).item() == Approx(0.5).margin(1e-12));
    CHECK_THROWS_AS(distill_loss(z, zero, z, 0.5), ShapeError);
}

TEST_CASE("distillation loss matches the per-exercise formula") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto ze = V::constant(oracle::random_matrix<double>(4, 1, rng, -3, 3));
        auto zc = V::constant(oracle::random_matrix<double>(4, 1, rng, -3, 3));
        auto zd = V::constant(oracle::random_matrix<double>(4, 1, rng, -3, 3));
        const double got = distill_loss(ze, zc, zd, 0.5).item();
        CHECK(got == Approx(oracle::distill(column(ze), column(zc), column(zd), 0.5)).margin(1e-6));
        CHECK(got >= 0.0);
    }
}

TEST_CASE("distillation loss is invariant under a shared permutation") {
    std::mt19937_64 rng(6);
    const M e = oracle::random_matrix<double>(7, 1, rng), c = oracle::random_matrix<double>(7, 1, rng),
            d = oracle::random_matrix<double>(7, 1, rng);
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto permuted = [&](const M& m) {
        M out(7, 1);
        for (std::size_t i = 0; i < 7; ++i) out[i] = m[perm[i]];
        return V::constant(out);
    };
    const double a = distill_loss(V::constant(e), V::constant(c), V::constant(d), 0.5).item();
    const double b = distill_loss(permuted(e), permuted(c), permuted(d), 0.5).item();
    CHECK(a == Approx(b).epsilon(1e-14));
}

TEST_CASE("distillation gradient reaches teacher and both students") {
    std::mt19937_64 rng(7);
    auto ze = V::parameter(oracle::random_matrix<double>(5, 1, rng));
    auto zc = V::parameter(oracle::random_matrix<double>(5, 1, rng));
    auto zd = V::parameter(oracle::random_matrix<double>(5, 1, rng));
    auto f = [&] { return distill_loss(ze, zc, zd, 0.5); };
    ad::backward(f());
    for (const auto* v : {&ze, &zc, &zd}) {
        double norm = 0.0;
        for (double g : v->grad().span()) norm += std::abs(g);
        CHECK(norm > 0.0);
    }
    CHECK(finite_difference_check<double>(f, {ze, zc, zd}, 1e-6).max_relative_error < 1e-4);
}

TEST_CASE("total loss") {
    auto s = [](double v) { return V::constant(M::scalar(v)); };
    CHECK(total_loss(s(0.7), s(0.6), s(0.5), s(2.0), 0.01).item() == Approx(1.82).margin(1e-12));
    CHECK(total_loss(s(0.7), s(0.6), s(0.5), s(2.0), 0.0).item() == Approx(1.8));
    CHECK(total_loss(s(0.7), s(0.6), s(0.5), s(0.0), 0.01).item() == Approx(1.8));
    double prev = -1.0;
    for (double kd : {0.0, 0.5, 1.0, 4.0}) {
        const double v = total_loss(s(0.1), s(0.2), s(0.3), s(kd), 0.3).item();
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("gate gradients pass central differences") {
    std::mt19937_64 rng(9);
    auto gate = random_gate(3, rng);
    auto c = V::parameter(oracle::random_matrix<double>(3, 1, rng));
    auto d = V::parameter(oracle::random_matrix<double>(3, 1, rng));
    const M w = oracle::random_matrix<double>(3, 1, rng);
    auto f = [&] { return ad::sum(ad::hadamard(gate_fuse(c, d, gate), V::constant(w))); };
    CHECK(finite_difference_check<double>(f, {gate.w_g, gate.b_g, c, d}, 1e-6).max_relative_error < 1e-4);
}
