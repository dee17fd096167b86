#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <utility>
#include <vector>

namespace tkgcn {

// Triangulated surface mesh. Vertices are dimensionless 3-D coordinates,
// faces are vertex-index triples.
struct Mesh {
    std::vector<std::array<double, 3>> vertices;
    std::vector<std::array<std::size_t, 3>> faces;

    // Throws std::invalid_argument on out-of-range indices or degenerate
    // faces (repeated vertex within a face).
    void validate() const;
};

enum class MeshKind { Sphere, Ellipsoid, Ventricle };

// Deterministic synthetic meshes:
//   Sphere     — icosphere; `resolution` = subdivision count (2 -> 162/320).
//   Ellipsoid  — closed UV triangulation; `resolution` = latitude band count,
//                2 + (resolution-1)*2*resolution vertices.
//   Ventricle  — open half-ellipsoid shell (elongated cup with a rim).
// Throws std::invalid_argument when the resolution yields fewer than 12
// vertices or cannot be triangulated.
Mesh synth_mesh(MeshKind kind, int resolution, std::array<double, 3> axes = {1.0, 1.0, 1.0});

// Undirected edges that belong to exactly one face (open-surface rim).
std::vector<std::pair<std::size_t, std::size_t>> boundary_edges(const Mesh& mesh);

// Plain-text format: "N F" header, N lines "x y z", F lines "i j k"
// (0-based). Doubles round-trip exactly.
Mesh load_mesh(const std::filesystem::path& path);
void save_mesh(const std::filesystem::path& path, const Mesh& mesh);

MeshKind mesh_kind_from_string(const std::string& s);
std::string to_string(MeshKind kind);

}  // namespace tkgcn
