#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <map>
#include <vector>

#include "helpers.hpp"
#include "tkgcn/graph.hpp"
#include "tkgcn/mesh.hpp"
#include "tkgcn/ops.hpp"
#include "tkgcn/spline.hpp"
#include "tkgcn/tape.hpp"
#include "tkgcn/tensor.hpp"

using namespace tkgcn;

namespace {

constexpr std::array<int, 3> kKernel = {3, 3, 3};

double basis_sum(const std::vector<BasisEntry>& entries) {
    double s = 0.0;
    for (const auto& e : entries) s += e.value;
    return s;
}

std::map<std::size_t, double> nonzero_map(const std::vector<BasisEntry>& entries) {
    std::map<std::size_t, double> m;
    for (const auto& e : entries)
        if (e.value != 0.0) m[e.index] += e.value;
    return m;
}

// Small fixed graph for convolution tests: a path of four nodes on the x-axis.
MeshGraph path4() {
    return build_graph_from_edges({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}},
                                  {{0, 1}, {1, 2}, {2, 3}});
}

}  // namespace

TEST_CASE("basis support cell straddling a knot: hand-enumerated entries") {
    // At w = (0.25, 0.5, 0.5) the first dimension sits mid-interval between
    // knots 0 and 1 (half weight each); the other two sit exactly on knot 1.
    // Worked out by hand: the only nonzero products are (0,1,1) and (1,1,1),
    // i.e. linear indices 4 and 13 with weight 1/2 each.
    auto entries = bspline_basis({0.25, 0.5, 0.5}, 1, kKernel);
    CHECK(entries.size() == 8);
    CHECK(basis_sum(entries) == doctest::Approx(1.0).epsilon(1e-15));

    auto nz = nonzero_map(entries);
    REQUIRE(nz.size() == 2);
    CHECK(nz.at(4) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(nz.at(13) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("basis at cube corners collapses to a single knot") {
    auto origin = nonzero_map(bspline_basis({0.0, 0.0, 0.0}, 1, kKernel));
    REQUIRE(origin.size() == 1);
    CHECK(origin.at(0) == doctest::Approx(1.0).epsilon(1e-15));

    auto far = nonzero_map(bspline_basis({1.0, 1.0, 1.0}, 1, kKernel));
    REQUIRE(far.size() == 1);
    CHECK(far.at(26) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("basis is a partition of unity across random coordinates") {
    Rng rng(20240816);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 10000; ++trial) {
        std::array<double, 3> w = {u(rng), u(rng), u(rng)};
        auto entries = bspline_basis(w, 1, kKernel);
        CHECK(entries.size() == 8);
        worst = std::max(worst, std::abs(basis_sum(entries) - 1.0));
        for (const auto& e : entries) {
            CHECK(e.value >= 0.0);
            CHECK(e.index < 27);
        }
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("basis rejects out-of-range input and unsupported settings") {
    CHECK_THROWS_AS(bspline_basis({-0.01, 0.5, 0.5}, 1, kKernel), std::invalid_argument);
    CHECK_THROWS_AS(bspline_basis({0.5, 1.01, 0.5}, 1, kKernel), std::invalid_argument);
    const double nan = std::nan("");
    CHECK_THROWS_AS(bspline_basis({nan, 0.5, 0.5}, 1, kKernel), std::invalid_argument);
    CHECK_THROWS_AS(bspline_basis({0.5, 0.5, 0.5}, 2, kKernel), std::invalid_argument);
    CHECK_THROWS_AS(bspline_basis({0.5, 0.5, 0.5}, 1, {1, 3, 3}), std::invalid_argument);
}

TEST_CASE("convolution against a brute-force dense oracle") {
    MeshGraph g = build_graph(synth_mesh(MeshKind::Sphere, 1));
    Rng rng(7);
    SplineConvConfig cfg;
    cfg.in_channels = 3;
    cfg.out_channels = 2;
    SplineConv conv(cfg, g, rng);

    Tensor x = Tensor::uniform(rng, -1.0, 1.0, {g.node_count, 3});
    Tensor y = conv.forward(x);
    REQUIRE(y.shape() == Shape{g.node_count, 2});

    // Oracle: literal per-node formula with a dense kernel matrix assembled
    // from the basis at each edge.
    const auto& tv = conv.theta().values();
    const auto& rv = conv.root().values();
    const auto& bv = conv.bias().values();
    for (std::size_t i = 0; i < g.node_count; ++i) {
        for (std::size_t o = 0; o < 2; ++o) {
            double acc = bv[o];
            for (std::size_t f = 0; f < 3; ++f) acc += x(i, f) * rv[f * 2 + o];
            const auto nb = g.neighbors(i);
            for (std::size_t k = 0; k < nb.size(); ++k) {
                const auto& w = g.pseudo[g.adj_edge[g.adj_offsets[i] + k]];
                double kernel[3][2] = {};
                for (const auto& e : bspline_basis(w, 1, kKernel))
                    for (std::size_t f = 0; f < 3; ++f)
                        for (std::size_t oo = 0; oo < 2; ++oo)
                            kernel[f][oo] += e.value * tv[(e.index * 3 + f) * 2 + oo];
                for (std::size_t f = 0; f < 3; ++f) acc += x(nb[k], f) * kernel[f][o] / nb.size();
            }
            CHECK(y(i, o) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("equal kernel weights collapse to a plain neighborhood average") {
    // When every theta_p is the same matrix M, partition of unity makes
    // g(w) = M for all w, so the layer reduces to mean(x_j) * M.
    MeshGraph g = path4();
    Rng rng(11);
    SplineConvConfig cfg;
    cfg.in_channels = 2;
    cfg.out_channels = 2;
    cfg.root_weight = false;
    SplineConv conv(cfg, g, rng);

    const std::vector<double> m = {0.5, -1.0, 2.0, 0.25};
    auto& tv = conv.theta().values();
    for (std::size_t p = 0; p < conv.basis_count(); ++p)
        for (std::size_t e = 0; e < 4; ++e) tv[p * 4 + e] = m[e];

    Tensor x = Tensor::uniform(rng, -1.0, 1.0, {4, 2});
    Tensor y = conv.forward(x);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto nb = g.neighbors(i);
        double mean0 = 0.0, mean1 = 0.0;
        for (std::size_t j : nb) {
            mean0 += x(j, 0) / nb.size();
            mean1 += x(j, 1) / nb.size();
        }
        CHECK(y(i, 0) == doctest::Approx(mean0 * m[0] + mean1 * m[2]).epsilon(1e-12));
        CHECK(y(i, 1) == doctest::Approx(mean0 * m[1] + mean1 * m[3]).epsilon(1e-12));
    }
}

TEST_CASE("zero kernel with identity root passes features through") {
    MeshGraph g = path4();
    Rng rng(3);
    SplineConvConfig cfg;
    cfg.in_channels = 2;
    cfg.out_channels = 2;
    SplineConv conv(cfg, g, rng);
    std::fill(conv.theta().values().begin(), conv.theta().values().end(), 0.0);
    auto& rv = conv.root().values();
    rv = {1.0, 0.0, 0.0, 1.0};

    Tensor x = Tensor::uniform(rng, -1.0, 1.0, {4, 2});
    Tensor y = conv.forward(x);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t f = 0; f < 2; ++f) CHECK(y(i, f) == doctest::Approx(x(i, f)).epsilon(1e-15));
}

TEST_CASE("output only depends on the one-hop neighborhood") {
    MeshGraph g = path4();
    Rng rng(5);
    SplineConvConfig cfg;
    cfg.in_channels = 1;
    cfg.out_channels = 1;
    SplineConv conv(cfg, g, rng);

    Tensor x = Tensor::from_data({4, 1}, {0.3, -0.8, 0.5, 0.1});
    const double y0 = conv.forward(x).values()[0];

    // Perturbing node 3 (two hops from node 0) must not move node 0's output.
    Tensor x2 = x.detached_copy();
    x2.values()[3] = 42.0;
    CHECK(conv.forward(x2).values()[0] == y0);

    // Perturbing node 1 (a neighbor) must move it.
    Tensor x3 = x.detached_copy();
    x3.values()[1] = 42.0;
    CHECK(conv.forward(x3).values()[0] != y0);
}

TEST_CASE("gradients for theta, root, bias, and input match finite differences") {
    MeshGraph g = path4();
    Rng rng(13);
    SplineConvConfig cfg;
    cfg.in_channels = 2;
    cfg.out_channels = 3;
    SplineConv conv(cfg, g, rng);
    Tensor x = Tensor::uniform(rng, -1.0, 1.0, {4, 2}, true);

    auto report = testing::fd_check({x, conv.theta(), conv.root(), conv.bias()},
                                    [&] { return sum_sq(conv.forward(x)); });
    CHECK(report.checked > 0);
    CHECK(report.max_rel < 1e-6);
}

TEST_CASE("gradients with the root term disabled") {
    MeshGraph g = path4();
    Rng rng(17);
    SplineConvConfig cfg;
    cfg.in_channels = 2;
    cfg.out_channels = 2;
    cfg.root_weight = false;
    SplineConv conv(cfg, g, rng);
    CHECK(conv.parameters().size() == 2);

    Tensor x = Tensor::uniform(rng, -1.0, 1.0, {4, 2}, true);
    auto report =
        testing::fd_check({x, conv.theta(), conv.bias()}, [&] { return sum_sq(conv.forward(x)); });
    CHECK(report.max_rel < 1e-6);

    // With the root off, the untouched root matrix must not leak into the
    // forward value.
    Tensor y1 = conv.forward(x);
    std::fill(conv.root().values().begin(), conv.root().values().end(), 9.0);
    Tensor y2 = conv.forward(x);
    for (std::size_t k = 0; k < y1.size(); ++k) CHECK(y1.values()[k] == y2.values()[k]);
}

TEST_CASE("residual spatial block keeps shape and matches its definition") {
    MeshGraph g = build_graph(synth_mesh(MeshKind::Sphere, 1));
    Rng rng(19);
    SpatialBlock block(4, g, rng);
    Tensor x = Tensor::uniform(rng, -1.0, 1.0, {g.node_count, 4}, true);

    Tensor y = block.forward(x);
    REQUIRE(y.shape() == x.shape());
    Tensor expected = add(x, elu(block.conv().forward(x)));
    for (std::size_t k = 0; k < y.size(); ++k) CHECK(y.values()[k] == expected.values()[k]);

    auto params = block.parameters();
    std::vector<Tensor> inputs = {x};
    inputs.insert(inputs.end(), params.begin(), params.end());
    auto report = testing::fd_check(inputs, [&] { return sum_sq(block.forward(x)); });
    CHECK(report.max_rel < 1e-6);
}

TEST_CASE("pointwise mixer applies weight, bias, and optional activation") {
    Rng rng(23);
    PointwiseConv pw(3, 2, rng, false);
    Tensor x = Tensor::uniform(rng, -1.0, 1.0, {5, 3}, true);
    Tensor y = pw.forward(x);
    Tensor expected = add(matmul(x, pw.weight()), pw.bias());
    REQUIRE(y.shape() == Shape{5, 2});
    for (std::size_t k = 0; k < y.size(); ++k) CHECK(y.values()[k] == expected.values()[k]);

    PointwiseConv act(3, 2, rng, true);
    // Force negative pre-activations to exercise the nonlinear branch.
    std::fill(act.weight().values().begin(), act.weight().values().end(), -1.0);
    Tensor ones = Tensor::full({5, 3}, 1.0);
    Tensor z = act.forward(ones);
    for (std::size_t k = 0; k < z.size(); ++k)
        CHECK(z.values()[k] == doctest::Approx(std::expm1(-3.0)).epsilon(1e-12));

    auto report = testing::fd_check({x, pw.weight(), pw.bias()},
                                    [&] { return sum_sq(pw.forward(x)); });
    CHECK(report.max_rel < 1e-6);
}

TEST_CASE("convolution validates input shape") {
    MeshGraph g = path4();
    Rng rng(29);
    SplineConvConfig cfg;
    cfg.in_channels = 2;
    cfg.out_channels = 2;
    SplineConv conv(cfg, g, rng);
    CHECK_THROWS_AS(conv.forward(Tensor::zeros({4, 3})), std::invalid_argument);
    CHECK_THROWS_AS(conv.forward(Tensor::zeros({5, 2})), std::invalid_argument);
    CHECK_THROWS_AS(conv.forward(Tensor::zeros({8})), std::invalid_argument);

    SplineConvConfig bad;
    bad.in_channels = 0;
    bad.out_channels = 2;
    CHECK_THROWS_AS(SplineConv(bad, g, rng), std::invalid_argument);
}

TEST_CASE("initialization scale follows the fan-in rule") {
    MeshGraph g = path4();
    Rng rng(31);
    SplineConvConfig cfg;
    cfg.in_channels = 8;
    cfg.out_channels = 8;
    SplineConv conv(cfg, g, rng);
    const double s = 1.0 / std::sqrt(8.0 * 27.0);
    for (double v : conv.theta().values()) CHECK(std::abs(v) <= s);
    for (double v : conv.root().values()) CHECK(std::abs(v) <= s);
    for (double v : conv.bias().values()) CHECK(v == 0.0);
    CHECK(conv.basis_count() == 27);
}
