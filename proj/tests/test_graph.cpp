#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "helpers.hpp"
#include "tkgcn/graph.hpp"
#include "tkgcn/mesh.hpp"
#include "tkgcn/ops.hpp"

using namespace tkgcn;

namespace {

std::vector<std::array<double, 3>> line_positions(std::size_t n, double spacing = 1.0) {
    std::vector<std::array<double, 3>> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = {spacing * static_cast<double>(i), 0.0, 0.0};
    return p;
}

}  // namespace

TEST_CASE("icosphere vertex/face counts follow subdivision arithmetic") {
    Mesh m0 = synth_mesh(MeshKind::Sphere, 0);
    CHECK(m0.vertices.size() == 12);
    CHECK(m0.faces.size() == 20);
    Mesh m2 = synth_mesh(MeshKind::Sphere, 2);
    CHECK(m2.vertices.size() == 162);
    CHECK(m2.faces.size() == 320);
    for (const auto& v : m2.vertices)
        CHECK(std::abs(std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) - 1.0) < 1e-12);
    CHECK(boundary_edges(m2).empty());
}

TEST_CASE("uv ellipsoid is closed; half shell has a rim") {
    Mesh e = synth_mesh(MeshKind::Ellipsoid, 13);
    CHECK(e.vertices.size() == 2 + 12 * 26);  // 314
    CHECK(boundary_edges(e).empty());

    Mesh v = synth_mesh(MeshKind::Ventricle, 12);
    CHECK_FALSE(boundary_edges(v).empty());
    CHECK(boundary_edges(v).size() == 24);  // one open ring of 2*resolution edges
    v.validate();

    CHECK_THROWS_AS(synth_mesh(MeshKind::Ellipsoid, 2), std::invalid_argument);
    CHECK_THROWS_AS(synth_mesh(MeshKind::Sphere, -1), std::invalid_argument);
}

TEST_CASE("mesh validation rejects bad faces") {
    Mesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    m.faces = {{0, 1, 5}};
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    m.faces = {{0, 1, 1}};
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
}

TEST_CASE("mesh text format round-trips exactly") {
    Mesh m = synth_mesh(MeshKind::Sphere, 1);
    const auto dir = std::filesystem::temp_directory_path() / "tkgcn_mesh_test";
    std::filesystem::create_directories(dir);
    save_mesh(dir / "s.mesh", m);
    Mesh r = load_mesh(dir / "s.mesh");
    REQUIRE(r.vertices.size() == m.vertices.size());
    REQUIRE(r.faces.size() == m.faces.size());
    for (std::size_t i = 0; i < m.vertices.size(); ++i)
        for (int c = 0; c < 3; ++c) CHECK(r.vertices[i][c] == m.vertices[i][c]);
    CHECK(r.faces == m.faces);
}

TEST_CASE("pseudo-coordinates: hand example, range, reflection") {
    // Two nodes one unit apart on x.
    MeshGraph g = build_graph_from_edges({{0, 0, 0}, {1, 0, 0}}, {{0, 1}});
    REQUIRE(g.edges.size() == 2);
    CHECK(g.edges[0] == std::pair<std::size_t, std::size_t>{0, 1});
    CHECK(g.pseudo[0][0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(g.pseudo[0][1] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(g.pseudo[0][2] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(g.pseudo[1][0] == doctest::Approx(0.0).epsilon(1e-14));

    MeshGraph ico = build_graph(synth_mesh(MeshKind::Sphere, 0));
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> index;
    for (std::size_t k = 0; k < ico.edges.size(); ++k) index[ico.edges[k]] = k;
    for (std::size_t k = 0; k < ico.edges.size(); ++k) {
        const auto [i, j] = ico.edges[k];
        for (int c = 0; c < 3; ++c) {
            CHECK(ico.pseudo[k][c] >= 0.0);
            CHECK(ico.pseudo[k][c] <= 1.0);
            const std::size_t rk = index.at({j, i});
            CHECK(std::abs(ico.pseudo[k][c] + ico.pseudo[rk][c] - 1.0) < 1e-12);
        }
        CHECK(i != j);
    }
}

TEST_CASE("build_graph rejects disconnected input and coincident endpoints") {
    // Two separate segments.
    CHECK_THROWS_AS(build_graph_from_edges(line_positions(4), {{0, 1}, {2, 3}}), std::invalid_argument);
    CHECK_THROWS_AS(build_graph_from_edges({{0, 0, 0}, {0, 0, 0}}, {{0, 1}}), std::invalid_argument);
    CHECK_THROWS_AS(build_graph_from_edges(line_positions(2), {{0, 0}}), std::invalid_argument);
}

TEST_CASE("knn_rewire hand cases") {
    auto e = knn_rewire(line_positions(3), 1);
    MeshGraph g = build_graph_from_edges(line_positions(3), e);
    // Symmetrized: {0-1, 1-2}; node 1 ties 0 vs 2 at distance 1 -> lower index 0.
    CHECK(g.edges.size() == 4);
    CHECK(g.degree(1) == 2);

    auto full = knn_rewire(line_positions(5), 4);
    MeshGraph gf = build_graph_from_edges(line_positions(5), full);
    CHECK(gf.edges.size() == 5 * 4);  // complete graph, both directions

    CHECK_THROWS_AS(knn_rewire(line_positions(3), 0), std::invalid_argument);
    CHECK_THROWS_AS(knn_rewire(line_positions(3), 3), std::invalid_argument);
}

TEST_CASE("graclus on the uniform path graph pairs into two midpoint clusters") {
    MeshGraph g = build_graph_from_edges(line_positions(4), {{0, 1}, {1, 2}, {2, 3}});
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 77ull}) {
        Coarsening c = graclus_coarsen(g, seed);
        REQUIRE(c.cluster_sizes.size() == 2);
        CHECK(c.cluster_sizes[0] == 2);
        CHECK(c.cluster_sizes[1] == 2);
        // End-pair weights dominate (endpoint degree 1), so clusters are
        // {0,1} and {2,3} with centroids at the segment midpoints.
        std::set<double> xs{c.coarse.positions[0][0], c.coarse.positions[1][0]};
        CHECK(xs == std::set<double>{0.5, 2.5});
        std::size_t total = 0;
        for (std::size_t s : c.cluster_sizes) total += s;
        CHECK(total == 4);
    }
}

TEST_CASE("graclus degenerate and size bounds") {
    MeshGraph single{1, {{0, 0, 0}}, {}, {}, {0, 0}, {}, {}};
    Coarsening c = graclus_coarsen(single, 5);
    CHECK(c.coarse.node_count == 1);
    CHECK(c.assignment == std::vector<std::size_t>{0});
    CHECK(c.cluster_sizes == std::vector<std::size_t>{1});

    MeshGraph ico = build_graph(synth_mesh(MeshKind::Sphere, 1));
    Coarsening cc = graclus_coarsen(ico, 9);
    std::size_t total = 0;
    for (std::size_t s : cc.cluster_sizes) total += s;
    CHECK(total == ico.node_count);
    CHECK(cc.coarse.node_count >= (ico.node_count + 1) / 2);
    CHECK(cc.coarse.node_count <= ico.node_count);
    // Every fine node has exactly one cluster and clusters are contiguous ids.
    for (std::size_t a : cc.assignment) CHECK(a < cc.coarse.node_count);
}

TEST_CASE("hierarchy: centroid property, size telescoping, coarse pseudo invariants") {
    MeshGraph fine = build_graph(synth_mesh(MeshKind::Ellipsoid, 8, {1.0, 0.8, 1.3}));
    GraphHierarchy h = build_hierarchy(fine, 2, 42);
    REQUIRE(h.levels.size() == 3);
    for (int level = 0; level < 2; ++level) {
        const MeshGraph& f = h.levels[level];
        const MeshGraph& c = h.levels[level + 1];
        const auto& asg = h.assignments[level];
        const auto& sz = h.cluster_sizes[level];
        std::vector<std::array<double, 3>> centroid(c.node_count, {0, 0, 0});
        for (std::size_t i = 0; i < f.node_count; ++i)
            for (int k = 0; k < 3; ++k) centroid[asg[i]][k] += f.positions[i][k];
        for (std::size_t cc = 0; cc < c.node_count; ++cc)
            for (int k = 0; k < 3; ++k)
                CHECK(std::abs(centroid[cc][k] / static_cast<double>(sz[cc]) - c.positions[cc][k]) < 1e-12);
        std::size_t total = 0;
        for (std::size_t s : sz) total += s;
        CHECK(total == f.node_count);
    }
    const double factor =
        static_cast<double>(h.levels.front().node_count) / static_cast<double>(h.levels.back().node_count);
    CHECK(factor >= 2.0);
    CHECK(factor <= 4.0);

    // k-NN rewiring variant keeps the same invariants.
    GraphHierarchy hk = build_hierarchy(fine, 2, 42, CoarseEdgeMode::Knn, 6);
    CHECK(hk.levels.size() == 3);
    CHECK(hk.levels[2].node_count >= hk.levels[0].node_count / 4);
}

TEST_CASE("pool/unpool: hand values, brute-force oracle, duality, gradients") {
    std::vector<std::size_t> asg{0, 0, 1};
    Tensor x = Tensor::from_data({3}, {2.0, 4.0, 7.0});
    Tensor p = pool_features(x, asg);
    CHECK(p.shape() == Shape{2});
    CHECK(p(0) == 3.0);
    CHECK(p(1) == 7.0);
    Tensor back = unpool_features(Tensor::from_data({2}, {3.0, 9.0}), asg);
    CHECK(back.values() == std::vector<double>{3.0, 3.0, 9.0});

    // Constant field passes through pooling unchanged.
    Tensor cfield = Tensor::full({3, 2}, 1.25);
    Tensor pc = pool_features(cfield, asg);
    for (double v : pc.values()) CHECK(v == 1.25);

    // Brute-force group-by mean on random features over a random hierarchy.
    Rng rng(7);
    MeshGraph g = build_graph(synth_mesh(MeshKind::Sphere, 1));
    Coarsening c = graclus_coarsen(g, 3);
    Tensor feats = Tensor::uniform(rng, -1.0, 1.0, {g.node_count, 4});
    Tensor pooled = pool_features(feats, c.assignment);
    for (std::size_t cl = 0; cl < c.coarse.node_count; ++cl)
        for (std::size_t f = 0; f < 4; ++f) {
            double acc = 0.0;
            std::size_t cnt = 0;
            for (std::size_t i = 0; i < g.node_count; ++i)
                if (c.assignment[i] == cl) {
                    acc += feats(i, f);
                    ++cnt;
                }
            CHECK(std::abs(pooled(cl, f) - acc / static_cast<double>(cnt)) < 1e-12);
        }

    // pool(unpool(Xc)) = Xc exactly (mean of identical copies).
    Tensor xc = Tensor::uniform(rng, -2.0, 2.0, {c.coarse.node_count, 3});
    Tensor round = pool_features(unpool_features(xc, c.assignment), c.assignment);
    for (std::size_t i = 0; i < xc.size(); ++i)
        CHECK(std::abs(round.values()[i] - xc.values()[i]) < 1e-12);

    // Gradients through both ops.
    Tensor gx = Tensor::uniform(rng, -1.0, 1.0, {g.node_count, 2}, true);
    auto r = testing::fd_check({gx}, [&] {
        return sum_sq(unpool_features(pool_features(gx, c.assignment), c.assignment));
    });
    CHECK(r.max_rel < 1e-6);

    CHECK_THROWS_AS(pool_features(Tensor::zeros({5}), asg), std::invalid_argument);
    CHECK_THROWS_AS(unpool_features(Tensor::zeros({5}), asg), std::invalid_argument);
}

TEST_CASE("bfs distances on the icosahedron") {
    MeshGraph g = build_graph(synth_mesh(MeshKind::Sphere, 0));
    auto d = bfs_distances(g, 0);
    std::size_t mx = 0;
    for (std::size_t v : d) {
        CHECK(v != SIZE_MAX);
        mx = std::max(mx, v);
    }
    CHECK(mx == 3);  // icosahedron diameter: 1 + 5 + 5 + antipode
}
