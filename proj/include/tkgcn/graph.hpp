#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "tkgcn/mesh.hpp"
#include "tkgcn/tensor.hpp"

namespace tkgcn {

// Attributed graph over mesh vertices. Edges are stored as both directions;
// each directed edge (i,j) carries a pseudo-coordinate w(i,j) in [0,1]^3
// obtained from the raw displacement V[j]-V[i] by a single global affine map
// (divide by twice the largest per-component edge extent, add 0.5), so
// w(i,j) and w(j,i) are reflections through (0.5, 0.5, 0.5).
struct MeshGraph {
    std::size_t node_count = 0;
    std::vector<std::array<double, 3>> positions;
    // Directed edges sorted lexicographically; pseudo[k] belongs to edges[k].
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::vector<std::array<double, 3>> pseudo;
    // CSR adjacency: neighbors of i are adj_nodes[adj_offsets[i] .. adj_offsets[i+1]),
    // and adj_edge[k] is the index into `edges` for that directed edge.
    std::vector<std::size_t> adj_offsets;
    std::vector<std::size_t> adj_nodes;
    std::vector<std::size_t> adj_edge;

    std::size_t degree(std::size_t i) const { return adj_offsets[i + 1] - adj_offsets[i]; }
    std::span<const std::size_t> neighbors(std::size_t i) const {
        return {adj_nodes.data() + adj_offsets[i], degree(i)};
    }
};

// Graph from mesh connectivity. Throws std::invalid_argument on invalid or
// disconnected meshes and on coincident edge endpoints.
MeshGraph build_graph(const Mesh& mesh);

// Same construction from an explicit undirected edge list (each pair once,
// either orientation). Used for coarse graphs and by tests.
MeshGraph build_graph_from_edges(std::vector<std::array<double, 3>> positions,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& undirected_edges);

// Symmetrized k-nearest-neighbor edges by Euclidean distance, ties broken by
// lower node index. Throws on k <= 0 or k >= node count.
std::vector<std::pair<std::size_t, std::size_t>> knn_rewire(
    const std::vector<std::array<double, 3>>& positions, int k);

// BFS hop distances from `source` (SIZE_MAX where unreachable).
std::vector<std::size_t> bfs_distances(const MeshGraph& graph, std::size_t source);

enum class CoarseEdgeMode { ClusterAdjacency, Knn };

struct Coarsening {
    MeshGraph coarse;
    std::vector<std::size_t> assignment;     // fine node -> cluster index
    std::vector<std::size_t> cluster_sizes;  // per cluster (1 or 2)
};

// Greedy heavy-edge matching: nodes are visited in a seeded random order and
// each unmatched node pairs with the unmatched neighbor maximizing
// e(i,j) * (1/deg(i) + 1/deg(j)), e = 1/(eps + ||V_i - V_j||), eps = 1e-9.
// Leftovers become singletons. Coarse positions are cluster centroids.
Coarsening graclus_coarsen(const MeshGraph& graph, std::uint64_t seed,
                           CoarseEdgeMode mode = CoarseEdgeMode::ClusterAdjacency, int knn_k = 6);

struct GraphHierarchy {
    std::vector<MeshGraph> levels;                        // fine -> coarse, depth+1 entries
    std::vector<std::vector<std::size_t>> assignments;    // one per pooling stage
    std::vector<std::vector<std::size_t>> cluster_sizes;  // one per pooling stage
};

GraphHierarchy build_hierarchy(MeshGraph fine, int depth, std::uint64_t seed,
                               CoarseEdgeMode mode = CoarseEdgeMode::ClusterAdjacency, int knn_k = 6);

// Cluster-mean pooling and its broadcast inverse, differentiable. X may be
// (N,) or (N, C); the first dimension must match the assignment length
// (pool) or the cluster count (unpool).
Tensor pool_features(const Tensor& x, const std::vector<std::size_t>& assignment);
Tensor unpool_features(const Tensor& xc, const std::vector<std::size_t>& assignment);

}  // namespace tkgcn
