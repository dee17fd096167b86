#include "tkgcn/mesh.hpp"

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "tkgcn/util.hpp"

namespace tkgcn {

void Mesh::validate() const {
    const std::size_t n = vertices.size();
    for (const auto& f : faces) {
        for (std::size_t idx : f)
            if (idx >= n)
                throw std::invalid_argument("mesh face references vertex " + std::to_string(idx) +
                                            " but mesh has " + std::to_string(n) + " vertices");
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
            throw std::invalid_argument("degenerate mesh face with repeated vertex " + std::to_string(f[0]));
    }
}

namespace {

using Vec3 = std::array<double, 3>;

Vec3 normalized(const Vec3& v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / n, v[1] / n, v[2] / n};
}

Mesh icosahedron() {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    Mesh m;
    m.vertices = {
        {-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi},  {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1},
    };
    for (auto& v : m.vertices) v = normalized(v);
    m.faces = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
        {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
        {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1},
    };
    return m;
}

Mesh subdivide_on_sphere(const Mesh& in) {
    Mesh out;
    out.vertices = in.vertices;
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> midpoint;
    auto mid = [&](std::size_t a, std::size_t b) {
        const auto key = std::minmax(a, b);
        auto it = midpoint.find(key);
        if (it != midpoint.end()) return it->second;
        const Vec3& va = out.vertices[a];
        const Vec3& vb = out.vertices[b];
        out.vertices.push_back(normalized({(va[0] + vb[0]) / 2, (va[1] + vb[1]) / 2, (va[2] + vb[2]) / 2}));
        const std::size_t idx = out.vertices.size() - 1;
        midpoint.emplace(key, idx);
        return idx;
    };
    for (const auto& f : in.faces) {
        const std::size_t ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
        out.faces.push_back({f[0], ab, ca});
        out.faces.push_back({f[1], bc, ab});
        out.faces.push_back({f[2], ca, bc});
        out.faces.push_back({ab, bc, ca});
    }
    return out;
}

void scale_axes(Mesh& m, const Vec3& axes) {
    for (auto& v : m.vertices) {
        v[0] *= axes[0];
        v[1] *= axes[1];
        v[2] *= axes[2];
    }
}

Mesh uv_ellipsoid(int res, const Vec3& axes) {
    if (res < 3) throw std::invalid_argument("ellipsoid resolution must be >= 3");
    const int rings = res - 1;       // interior latitude rings
    const int segs = 2 * res;        // azimuthal segments
    Mesh m;
    m.vertices.push_back({0, 0, 1});   // north pole
    for (int i = 1; i <= rings; ++i) {
        const double theta = M_PI * static_cast<double>(i) / static_cast<double>(res);
        for (int j = 0; j < segs; ++j) {
            const double phi = 2.0 * M_PI * static_cast<double>(j) / static_cast<double>(segs);
            m.vertices.push_back(
                {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)});
        }
    }
    m.vertices.push_back({0, 0, -1});  // south pole
    const std::size_t south = m.vertices.size() - 1;
    auto ring_vert = [&](int i, int j) {  // i in [1, rings]
        return static_cast<std::size_t>(1 + (i - 1) * segs + (j % segs));
    };
    for (int j = 0; j < segs; ++j) m.faces.push_back({0, ring_vert(1, j), ring_vert(1, j + 1)});
    for (int i = 1; i < rings; ++i)
        for (int j = 0; j < segs; ++j) {
            m.faces.push_back({ring_vert(i, j), ring_vert(i + 1, j), ring_vert(i + 1, j + 1)});
            m.faces.push_back({ring_vert(i, j), ring_vert(i + 1, j + 1), ring_vert(i, j + 1)});
        }
    for (int j = 0; j < segs; ++j) m.faces.push_back({south, ring_vert(rings, j + 1), ring_vert(rings, j)});
    scale_axes(m, axes);
    return m;
}

// Open lower half of an elongated ellipsoid: rim at the equator, apex at the
// bottom pole. Mimics a single-chamber cup.
Mesh half_shell(int res, Vec3 axes) {
    if (res < 4) throw std::invalid_argument("ventricle resolution must be >= 4");
    if (axes == Vec3{1.0, 1.0, 1.0}) axes = {1.0, 1.0, 1.4};  // default elongation
    const int segs = 2 * res;
    const int i0 = (res + 1) / 2;  // first ring at or below the equator
    Mesh m;
    for (int i = i0; i <= res - 1; ++i) {
        const double theta = M_PI * static_cast<double>(i) / static_cast<double>(res);
        for (int j = 0; j < segs; ++j) {
            const double phi = 2.0 * M_PI * static_cast<double>(j) / static_cast<double>(segs);
            m.vertices.push_back(
                {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)});
        }
    }
    m.vertices.push_back({0, 0, -1});  // apex
    const std::size_t apex = m.vertices.size() - 1;
    const int ring_count = res - i0;
    auto ring_vert = [&](int r, int j) {  // r in [0, ring_count)
        return static_cast<std::size_t>(r * segs + (j % segs));
    };
    for (int r = 0; r + 1 < ring_count; ++r)
        for (int j = 0; j < segs; ++j) {
            m.faces.push_back({ring_vert(r, j), ring_vert(r + 1, j), ring_vert(r + 1, j + 1)});
            m.faces.push_back({ring_vert(r, j), ring_vert(r + 1, j + 1), ring_vert(r, j + 1)});
        }
    for (int j = 0; j < segs; ++j)
        m.faces.push_back({apex, ring_vert(ring_count - 1, j + 1), ring_vert(ring_count - 1, j)});
    scale_axes(m, axes);
    return m;
}

}  // namespace

Mesh synth_mesh(MeshKind kind, int resolution, std::array<double, 3> axes) {
    Mesh m;
    switch (kind) {
        case MeshKind::Sphere: {
            if (resolution < 0) throw std::invalid_argument("sphere subdivision must be >= 0");
            m = icosahedron();
            for (int i = 0; i < resolution; ++i) m = subdivide_on_sphere(m);
            scale_axes(m, axes);
            break;
        }
        case MeshKind::Ellipsoid:
            m = uv_ellipsoid(resolution, axes);
            break;
        case MeshKind::Ventricle:
            m = half_shell(resolution, axes);
            break;
    }
    if (m.vertices.size() < 12)
        throw std::invalid_argument("synthetic mesh resolution too low: " + std::to_string(m.vertices.size()) +
                                    " vertices (minimum 12)");
    m.validate();
    return m;
}

std::vector<std::pair<std::size_t, std::size_t>> boundary_edges(const Mesh& mesh) {
    std::map<std::pair<std::size_t, std::size_t>, int> count;
    for (const auto& f : mesh.faces)
        for (int e = 0; e < 3; ++e) {
            const std::size_t a = f[e], b = f[(e + 1) % 3];
            ++count[std::minmax(a, b)];
        }
    std::vector<std::pair<std::size_t, std::size_t>> rim;
    for (const auto& [edge, c] : count)
        if (c == 1) rim.push_back(edge);
    return rim;
}

Mesh load_mesh(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::size_t n = 0, f = 0;
    if (!(in >> n >> f)) throw std::runtime_error("mesh file header unreadable: " + path.string());
    Mesh m;
    m.vertices.resize(n);
    for (auto& v : m.vertices)
        if (!(in >> v[0] >> v[1] >> v[2])) throw std::runtime_error("mesh vertex data truncated: " + path.string());
    m.faces.resize(f);
    for (auto& face : m.faces)
        if (!(in >> face[0] >> face[1] >> face[2]))
            throw std::runtime_error("mesh face data truncated: " + path.string());
    m.validate();
    return m;
}

void save_mesh(const std::filesystem::path& path, const Mesh& mesh) {
    std::string out = std::to_string(mesh.vertices.size()) + " " + std::to_string(mesh.faces.size()) + "\n";
    for (const auto& v : mesh.vertices)
        out += format_double(v[0]) + " " + format_double(v[1]) + " " + format_double(v[2]) + "\n";
    for (const auto& f : mesh.faces)
        out += std::to_string(f[0]) + " " + std::to_string(f[1]) + " " + std::to_string(f[2]) + "\n";
    atomic_write_file(path, out);
}

MeshKind mesh_kind_from_string(const std::string& s) {
    if (s == "sphere") return MeshKind::Sphere;
    if (s == "ellipsoid") return MeshKind::Ellipsoid;
    if (s == "ventricle") return MeshKind::Ventricle;
    throw std::invalid_argument("unknown mesh kind '" + s + "' (expected sphere, ellipsoid, or ventricle)");
}

std::string to_string(MeshKind kind) {
    switch (kind) {
        case MeshKind::Sphere: return "sphere";
        case MeshKind::Ellipsoid: return "ellipsoid";
        case MeshKind::Ventricle: return "ventricle";
    }
    return "?";
}

}  // namespace tkgcn
