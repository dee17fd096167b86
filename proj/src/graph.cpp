#include "tkgcn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>
#include <stdexcept>

#include "tkgcn/ops.hpp"
#include "tkgcn/tape.hpp"

namespace tkgcn {

namespace {

double dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

void check_connected(const MeshGraph& g) {
    if (g.node_count == 0) throw std::invalid_argument("graph has no nodes");
    std::vector<std::size_t> d = bfs_distances(g, 0);
    for (std::size_t i = 0; i < g.node_count; ++i)
        if (d[i] == SIZE_MAX)
            throw std::invalid_argument("graph is disconnected (node " + std::to_string(i) +
                                        " unreachable); pooling assumes one component");
}

MeshGraph assemble(std::vector<std::array<double, 3>> positions,
                   std::vector<std::pair<std::size_t, std::size_t>> undirected) {
    const std::size_t n = positions.size();
    // Normalize to a unique undirected set, then emit both directions.
    for (auto& e : undirected) {
        if (e.first >= n || e.second >= n)
            throw std::invalid_argument("edge endpoint out of range");
        if (e.first == e.second) throw std::invalid_argument("self-loop edge at node " + std::to_string(e.first));
        if (e.first > e.second) std::swap(e.first, e.second);
    }
    std::sort(undirected.begin(), undirected.end());
    undirected.erase(std::unique(undirected.begin(), undirected.end()), undirected.end());

    MeshGraph g;
    g.node_count = n;
    g.positions = std::move(positions);
    g.edges.reserve(undirected.size() * 2);
    for (const auto& [a, b] : undirected) {
        if (dist(g.positions[a], g.positions[b]) == 0.0)
            throw std::invalid_argument("coincident endpoints on edge " + std::to_string(a) + "-" +
                                        std::to_string(b));
        g.edges.emplace_back(a, b);
        g.edges.emplace_back(b, a);
    }
    std::sort(g.edges.begin(), g.edges.end());

    // Global (infinity-norm) extent across all edges sets one affine map for
    // every pseudo-coordinate, so opposite directions mirror exactly.
    double max_ext = 0.0;
    for (const auto& [i, j] : g.edges)
        for (int c = 0; c < 3; ++c)
            max_ext = std::max(max_ext, std::abs(g.positions[j][c] - g.positions[i][c]));
    g.pseudo.resize(g.edges.size());
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        const auto& [i, j] = g.edges[k];
        for (int c = 0; c < 3; ++c) {
            const double w = (g.positions[j][c] - g.positions[i][c]) / (2.0 * max_ext) + 0.5;
            g.pseudo[k][c] = std::clamp(w, 0.0, 1.0);
        }
    }

    g.adj_offsets.assign(n + 1, 0);
    for (const auto& [i, j] : g.edges) ++g.adj_offsets[i + 1];
    std::partial_sum(g.adj_offsets.begin(), g.adj_offsets.end(), g.adj_offsets.begin());
    g.adj_nodes.resize(g.edges.size());
    g.adj_edge.resize(g.edges.size());
    // edges are sorted by source, so CSR slots fill in order
    std::vector<std::size_t> cursor(g.adj_offsets.begin(), g.adj_offsets.end() - 1);
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        const auto& [i, j] = g.edges[k];
        g.adj_nodes[cursor[i]] = j;
        g.adj_edge[cursor[i]] = k;
        ++cursor[i];
    }
    check_connected(g);
    return g;
}

}  // namespace

MeshGraph build_graph(const Mesh& mesh) {
    mesh.validate();
    std::vector<std::pair<std::size_t, std::size_t>> undirected;
    undirected.reserve(mesh.faces.size() * 3);
    for (const auto& f : mesh.faces)
        for (int e = 0; e < 3; ++e) undirected.emplace_back(f[e], f[(e + 1) % 3]);
    return assemble(mesh.vertices, std::move(undirected));
}

MeshGraph build_graph_from_edges(std::vector<std::array<double, 3>> positions,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& undirected_edges) {
    return assemble(std::move(positions), undirected_edges);
}

std::vector<std::pair<std::size_t, std::size_t>> knn_rewire(
    const std::vector<std::array<double, 3>>& positions, int k) {
    const std::size_t n = positions.size();
    if (k <= 0) throw std::invalid_argument("knn_rewire: k must be positive");
    if (static_cast<std::size_t>(k) >= n)
        throw std::invalid_argument("knn_rewire: k = " + std::to_string(k) + " too large for " +
                                    std::to_string(n) + " nodes");
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) cand.emplace_back(dist(positions[i], positions[j]), j);
        // ties resolved toward lower node index
        std::sort(cand.begin(), cand.end());
        for (int t = 0; t < k; ++t) edges.emplace_back(i, cand[static_cast<std::size_t>(t)].second);
    }
    return edges;  // symmetrization happens in graph assembly (both directions kept)
}

std::vector<std::size_t> bfs_distances(const MeshGraph& graph, std::size_t source) {
    std::vector<std::size_t> d(graph.node_count, SIZE_MAX);
    std::queue<std::size_t> q;
    d[source] = 0;
    q.push(source);
    while (!q.empty()) {
        const std::size_t v = q.front();
        q.pop();
        for (std::size_t u : graph.neighbors(v))
            if (d[u] == SIZE_MAX) {
                d[u] = d[v] + 1;
                q.push(u);
            }
    }
    return d;
}

Coarsening graclus_coarsen(const MeshGraph& graph, std::uint64_t seed, CoarseEdgeMode mode, int knn_k) {
    const std::size_t n = graph.node_count;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    constexpr double kEps = 1e-9;
    std::vector<bool> matched(n, false);
    std::vector<std::size_t> assignment(n, SIZE_MAX);
    std::vector<std::size_t> sizes;
    for (std::size_t v : order) {
        if (matched[v]) continue;
        std::size_t best = SIZE_MAX;
        double best_w = -1.0;
        for (std::size_t u : graph.neighbors(v)) {
            if (matched[u]) continue;
            const double e = 1.0 / (kEps + dist(graph.positions[v], graph.positions[u]));
            const double w = e * (1.0 / static_cast<double>(graph.degree(v)) +
                                  1.0 / static_cast<double>(graph.degree(u)));
            // strict > keeps the lowest-index neighbor on ties (CSR is sorted)
            if (w > best_w) {
                best_w = w;
                best = u;
            }
        }
        const std::size_t cluster = sizes.size();
        matched[v] = true;
        assignment[v] = cluster;
        if (best != SIZE_MAX) {
            matched[best] = true;
            assignment[best] = cluster;
            sizes.push_back(2);
        } else {
            sizes.push_back(1);
        }
    }

    const std::size_t nc = sizes.size();
    std::vector<std::array<double, 3>> centroids(nc, {0.0, 0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) centroids[assignment[i]][c] += graph.positions[i][c];
    for (std::size_t c = 0; c < nc; ++c)
        for (int k = 0; k < 3; ++k) centroids[c][k] /= static_cast<double>(sizes[c]);

    std::vector<std::pair<std::size_t, std::size_t>> coarse_edges;
    if (nc > 1) {
        if (mode == CoarseEdgeMode::ClusterAdjacency) {
            std::set<std::pair<std::size_t, std::size_t>> uniq;
            for (const auto& [i, j] : graph.edges) {
                const std::size_t a = assignment[i], b = assignment[j];
                if (a != b) uniq.insert(std::minmax(a, b));
            }
            coarse_edges.assign(uniq.begin(), uniq.end());
        } else {
            const int k = std::min<int>(knn_k, static_cast<int>(nc) - 1);
            coarse_edges = knn_rewire(centroids, k);
        }
    }

    Coarsening result;
    result.coarse = nc == 1 ? MeshGraph{1, centroids, {}, {}, {0, 0}, {}, {}}
                            : build_graph_from_edges(std::move(centroids), coarse_edges);
    result.assignment = std::move(assignment);
    result.cluster_sizes = std::move(sizes);
    return result;
}

GraphHierarchy build_hierarchy(MeshGraph fine, int depth, std::uint64_t seed, CoarseEdgeMode mode, int knn_k) {
    if (depth < 0) throw std::invalid_argument("hierarchy depth must be >= 0");
    GraphHierarchy h;
    h.levels.push_back(std::move(fine));
    for (int level = 0; level < depth; ++level) {
        Coarsening c = graclus_coarsen(h.levels.back(), derive_seed(seed, "coarsen/" + std::to_string(level)),
                                       mode, knn_k);
        h.levels.push_back(std::move(c.coarse));
        h.assignments.push_back(std::move(c.assignment));
        h.cluster_sizes.push_back(std::move(c.cluster_sizes));
    }
    return h;
}

namespace {

std::size_t cluster_count_of(const std::vector<std::size_t>& assignment) {
    std::size_t nc = 0;
    for (std::size_t c : assignment) nc = std::max(nc, c + 1);
    return nc;
}

}  // namespace

Tensor pool_features(const Tensor& x, const std::vector<std::size_t>& assignment) {
    if (x.rank() != 1 && x.rank() != 2)
        throw std::invalid_argument("pool_features: expected rank 1 or 2, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0);
    if (n != assignment.size())
        throw std::invalid_argument("pool_features: " + std::to_string(n) + " rows vs assignment of " +
                                    std::to_string(assignment.size()));
    const std::size_t nc = cluster_count_of(assignment);
    const std::size_t ch = x.rank() == 2 ? x.dim(1) : 1;
    std::vector<double> inv_size(nc, 0.0);
    for (std::size_t c : assignment) inv_size[c] += 1.0;
    for (double& s : inv_size) s = 1.0 / s;

    Tensor out = Tensor::zeros(x.rank() == 2 ? Shape{nc, ch} : Shape{nc});
    {
        const auto& xv = x.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = assignment[i];
            for (std::size_t f = 0; f < ch; ++f) ov[c * ch + f] += xv[i * ch + f] * inv_size[c];
        }
    }
    detail::check_finite(out, "pool_features");
    out.set_requires_grad(x.requires_grad());
    if (grad_recording({&x})) {
        Tensor xc = x, oc = out;
        auto asg = assignment;
        Tape::active()->record([xc, oc, asg = std::move(asg), inv_size = std::move(inv_size), n, ch]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            auto& gx = xc.grad();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t c = asg[i];
                for (std::size_t f = 0; f < ch; ++f) gx[i * ch + f] += go[c * ch + f] * inv_size[c];
            }
        });
    }
    return out;
}

Tensor unpool_features(const Tensor& xc, const std::vector<std::size_t>& assignment) {
    if (xc.rank() != 1 && xc.rank() != 2)
        throw std::invalid_argument("unpool_features: expected rank 1 or 2, got " + shape_str(xc.shape()));
    const std::size_t nc = cluster_count_of(assignment);
    if (xc.dim(0) != nc)
        throw std::invalid_argument("unpool_features: " + std::to_string(xc.dim(0)) + " rows vs " +
                                    std::to_string(nc) + " clusters");
    const std::size_t n = assignment.size();
    const std::size_t ch = xc.rank() == 2 ? xc.dim(1) : 1;
    Tensor out = Tensor::zeros(xc.rank() == 2 ? Shape{n, ch} : Shape{n});
    {
        const auto& cv = xc.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = assignment[i];
            for (std::size_t f = 0; f < ch; ++f) ov[i * ch + f] = cv[c * ch + f];
        }
    }
    detail::check_finite(out, "unpool_features");
    out.set_requires_grad(xc.requires_grad());
    if (grad_recording({&xc})) {
        Tensor cc = xc, oc = out;
        auto asg = assignment;
        Tape::active()->record([cc, oc, asg = std::move(asg), n, ch]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            auto& gc = cc.grad();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t c = asg[i];
                for (std::size_t f = 0; f < ch; ++f) gc[c * ch + f] += go[i * ch + f];
            }
        });
    }
    return out;
}

}  // namespace tkgcn
