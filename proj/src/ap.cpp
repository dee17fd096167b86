#include "tkgcn/ap.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "tkgcn/util.hpp"

namespace tkgcn {

void APParams::validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("AP params: dt must be positive");
    if (!(D >= 0.0)) throw std::invalid_argument("AP params: D must be non-negative");
    if (!(mu2 > 0.0)) throw std::invalid_argument("AP params: mu2 must be positive");
}

void GraphLaplacian::apply(const std::vector<double>& x, std::vector<double>& out) const {
    const std::size_t n = size();
    if (x.size() != n) throw std::invalid_argument("laplacian apply: field size mismatch");
    out.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = diag[i] * x[i];
        for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k) acc += weights[k] * x[cols[k]];
        out[i] = acc;
    }
}

GraphLaplacian graph_laplacian(const MeshGraph& graph) {
    constexpr double kEps = 1e-9;
    const std::size_t n = graph.node_count;
    GraphLaplacian lap;
    lap.offsets.assign(n + 1, 0);
    lap.diag.assign(n, 0.0);
    lap.cols.reserve(graph.edges.size());
    lap.weights.reserve(graph.edges.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto nbrs = graph.neighbors(i);
        double row_sum = 0.0;
        for (std::size_t j : nbrs) {
            const double dx = graph.positions[i][0] - graph.positions[j][0];
            const double dy = graph.positions[i][1] - graph.positions[j][1];
            const double dz = graph.positions[i][2] - graph.positions[j][2];
            const double w = 1.0 / (kEps + std::sqrt(dx * dx + dy * dy + dz * dz));
            lap.cols.push_back(j);
            lap.weights.push_back(w);
            row_sum += w;
        }
        for (std::size_t k = lap.offsets[i]; k < lap.offsets[i] + nbrs.size(); ++k) lap.weights[k] /= row_sum;
        lap.offsets[i + 1] = lap.offsets[i] + nbrs.size();
        lap.diag[i] = nbrs.empty() ? 0.0 : -1.0;
    }
    return lap;
}

void StimulusProtocol::validate(std::size_t node_count) const {
    for (std::size_t s : primary_sites)
        if (s >= node_count) throw std::invalid_argument("stimulus site " + std::to_string(s) + " out of range");
    for (std::size_t s : secondary_sites)
        if (s >= node_count) throw std::invalid_argument("stimulus site " + std::to_string(s) + " out of range");
    if (primary_sites.empty()) throw std::invalid_argument("protocol has no primary pacing sites");
    if (duration < 1) throw std::invalid_argument("stimulus duration must be >= 1 frame");
    if (period <= duration) throw std::invalid_argument("pacing period must exceed stimulus duration");
    if (!std::isfinite(amplitude)) throw std::invalid_argument("stimulus amplitude must be finite");
}

bool StimulusProtocol::primary_active(long frame) const {
    return frame >= 0 && frame % period < duration;
}

bool StimulusProtocol::secondary_active(long frame, long resolved_onset) const {
    if (secondary_sites.empty() || frame < resolved_onset) return false;
    return (frame - resolved_onset) % period < duration;
}

namespace {

std::vector<std::size_t> patch_around(const MeshGraph& graph, std::size_t center) {
    std::vector<std::size_t> patch{center};
    for (std::size_t u : graph.neighbors(center)) patch.push_back(u);
    std::sort(patch.begin(), patch.end());
    return patch;
}

std::vector<std::size_t> multi_source_bfs(const MeshGraph& graph, const std::vector<std::size_t>& sources) {
    std::vector<std::size_t> d(graph.node_count, SIZE_MAX);
    std::vector<std::size_t> frontier;
    for (std::size_t s : sources) {
        d[s] = 0;
        frontier.push_back(s);
    }
    std::size_t level = 0;
    while (!frontier.empty()) {
        std::vector<std::size_t> next;
        for (std::size_t v : frontier)
            for (std::size_t u : graph.neighbors(v))
                if (d[u] == SIZE_MAX) {
                    d[u] = level + 1;
                    next.push_back(u);
                }
        frontier = std::move(next);
        ++level;
    }
    return d;
}

}  // namespace

StimulusProtocol make_protocol(ProtocolId id, const MeshGraph& graph, const ProtocolOptions& opts) {
    StimulusProtocol p;
    p.id = id;
    p.period = opts.period;
    p.duration = opts.duration;
    p.amplitude = opts.amplitude;
    p.secondary_onset = opts.secondary_onset;

    std::size_t apex = 0;
    for (std::size_t i = 1; i < graph.node_count; ++i)
        if (graph.positions[i][2] < graph.positions[apex][2]) apex = i;
    p.primary_sites = patch_around(graph, apex);

    if (id == ProtocolId::II) {
        const auto dist = multi_source_bfs(graph, p.primary_sites);
        std::size_t pick = SIZE_MAX;
        for (std::size_t i = 0; i < graph.node_count; ++i)
            if (dist[i] == 3) {
                pick = i;
                break;
            }
        if (pick == SIZE_MAX)
            throw std::invalid_argument("graph too small for a nearby secondary source (no node at distance 3)");
        p.secondary_sites = patch_around(graph, pick);
    } else if (id == ProtocolId::III) {
        std::size_t far = 0;
        for (std::size_t i = 1; i < graph.node_count; ++i)
            if (graph.positions[i][0] > graph.positions[far][0]) far = i;
        p.secondary_sites = patch_around(graph, far);
    }
    p.validate(graph.node_count);
    return p;
}

std::vector<double> TrajectoryDataset::snapshot(std::size_t t) const {
    std::vector<double> snap(nodes);
    for (std::size_t i = 0; i < nodes; ++i) snap[i] = states[i * frames + t];
    return snap;
}

std::size_t ap_step(std::vector<double>& omega1, std::vector<double>& omega2, const APParams& params,
                    const GraphLaplacian& laplacian, const std::vector<double>& stimulus) {
    const std::size_t n = omega1.size();
    if (omega2.size() != n) throw std::invalid_argument("ap_step: state arrays differ in length");
    if (!stimulus.empty() && stimulus.size() != n)
        throw std::invalid_argument("ap_step: stimulus length mismatch");
    if (laplacian.size() != n) throw std::invalid_argument("ap_step: laplacian size mismatch");

    static thread_local std::vector<double> diffusion;
    laplacian.apply(omega1, diffusion);

    std::size_t clamps = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w1 = omega1[i], w2 = omega2[i];
        const double reaction = params.k * w1 * (w1 - params.a) * (1.0 - w1) - w1 * w2;
        const double stim = stimulus.empty() ? 0.0 : stimulus[i];
        const double xi = params.e0 + params.mu1 * w2 / (w1 + params.mu2);
        double n1 = w1 + params.dt * (params.D * diffusion[i] + reaction + stim);
        double n2 = w2 + params.dt * xi * (-w2 - params.k * w1 * (w1 - params.a - 1.0));
        if (!std::isfinite(n1) || !std::isfinite(n2))
            throw std::runtime_error("state became non-finite during an integration step");
        if (n1 < -0.2) { n1 = -0.2; ++clamps; }
        if (n1 > 1.2)  { n1 = 1.2;  ++clamps; }
        if (n2 < 0.0)  { n2 = 0.0;  ++clamps; }
        if (n2 > 3.0)  { n2 = 3.0;  ++clamps; }
        omega1[i] = n1;
        omega2[i] = n2;
    }
    return clamps;
}

TrajectoryDataset simulate(const MeshGraph& graph, const StimulusProtocol& protocol, const APParams& params,
                           long frames, const SimOptions& opts) {
    params.validate();
    protocol.validate(graph.node_count);
    if (frames <= 0) throw std::invalid_argument("simulate: frame count must be positive");
    if (opts.substeps < 1) throw std::invalid_argument("simulate: substeps must be >= 1");
    if (opts.burn_in < 0) throw std::invalid_argument("simulate: burn-in must be >= 0");

    const GraphLaplacian lap = graph_laplacian(graph);
    const std::size_t n = graph.node_count;
    const long resolved_onset = protocol.secondary_onset >= 0 ? protocol.secondary_onset : frames / 2;
    // Pacing runs from the start of integration; the recorded window begins
    // after burn_in frames, and the secondary onset indexes recorded frames.
    const long onset_global = opts.burn_in + resolved_onset;

    TrajectoryDataset out;
    out.nodes = n;
    out.frames = static_cast<std::size_t>(frames);
    out.states.assign(n * static_cast<std::size_t>(frames), 0.0);
    out.recovery.assign(n * static_cast<std::size_t>(frames), 0.0);
    out.meta.protocol = to_string(protocol.id);
    out.meta.params = params;
    out.meta.substeps = opts.substeps;
    out.meta.burn_in = opts.burn_in;
    out.meta.seed = opts.seed;

    std::vector<double> w1(n, 0.0), w2(n, 0.0), stim;
    for (long g = 0; g < opts.burn_in + frames; ++g) {
        stim.clear();
        const bool prim = protocol.primary_active(g);
        const bool sec = protocol.secondary_active(g, onset_global);
        if (prim || sec) {
            stim.assign(n, 0.0);
            if (prim)
                for (std::size_t s : protocol.primary_sites) stim[s] = protocol.amplitude;
            if (sec)
                for (std::size_t s : protocol.secondary_sites) stim[s] = protocol.amplitude;
        }
        for (int sub = 0; sub < opts.substeps; ++sub) {
            try {
                out.clamp_count += ap_step(w1, w2, params, lap, stim);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error(std::string(e.what()) + " (frame " + std::to_string(g) +
                                         ", substep " + std::to_string(sub) + ")");
            }
        }
        const long t = g - opts.burn_in;
        if (t >= 0) {
            for (std::size_t i = 0; i < n; ++i) {
                out.states[i * out.frames + static_cast<std::size_t>(t)] = w1[i];
                out.recovery[i * out.frames + static_cast<std::size_t>(t)] = w2[i];
            }
        }
    }
    return out;
}

void save_trajectory(const std::filesystem::path& path, const TrajectoryDataset& data) {
    StdfData file;
    file.nodes = static_cast<std::uint32_t>(data.nodes);
    file.steps = static_cast<std::uint32_t>(data.frames);
    file.features = 1;
    file.values = data.states;
    write_stdf(path, file);

    nlohmann::json meta;
    meta["protocol"] = data.meta.protocol;
    meta["params"] = {{"a", data.meta.params.a},   {"k", data.meta.params.k},
                      {"e0", data.meta.params.e0}, {"mu1", data.meta.params.mu1},
                      {"mu2", data.meta.params.mu2}, {"D", data.meta.params.D},
                      {"dt", data.meta.params.dt}};
    meta["mesh"] = data.meta.mesh_ref;
    meta["substeps"] = data.meta.substeps;
    meta["burn_in"] = data.meta.burn_in;
    meta["seed"] = data.meta.seed;
    meta["clamp_count"] = data.clamp_count;
    std::filesystem::path meta_path = path;
    meta_path += ".meta.json";
    atomic_write_file(meta_path, meta.dump(2) + "\n");
}

TrajectoryDataset load_trajectory(const std::filesystem::path& path) {
    StdfData file = read_stdf(path);
    if (file.features != 1)
        throw std::runtime_error("trajectory file must have one feature per node, got " +
                                 std::to_string(file.features));
    TrajectoryDataset data;
    data.nodes = file.nodes;
    data.frames = file.steps;
    data.states = std::move(file.values);

    std::filesystem::path meta_path = path;
    meta_path += ".meta.json";
    if (std::filesystem::exists(meta_path)) {
        const nlohmann::json meta = nlohmann::json::parse(read_text_file(meta_path));
        data.meta.protocol = meta.value("protocol", "I");
        if (meta.contains("params")) {
            const auto& p = meta["params"];
            data.meta.params.a = p.value("a", data.meta.params.a);
            data.meta.params.k = p.value("k", data.meta.params.k);
            data.meta.params.e0 = p.value("e0", data.meta.params.e0);
            data.meta.params.mu1 = p.value("mu1", data.meta.params.mu1);
            data.meta.params.mu2 = p.value("mu2", data.meta.params.mu2);
            data.meta.params.D = p.value("D", data.meta.params.D);
            data.meta.params.dt = p.value("dt", data.meta.params.dt);
        }
        data.meta.mesh_ref = meta.value("mesh", "");
        data.meta.substeps = meta.value("substeps", 5);
        data.meta.burn_in = meta.value("burn_in", 0L);
        data.meta.seed = meta.value("seed", 0ULL);
        data.clamp_count = meta.value("clamp_count", 0ULL);
    }
    return data;
}

ProtocolId protocol_from_string(const std::string& s) {
    if (s == "I") return ProtocolId::I;
    if (s == "II") return ProtocolId::II;
    if (s == "III") return ProtocolId::III;
    throw std::invalid_argument("unknown protocol '" + s + "' (expected I, II, or III)");
}

std::string to_string(ProtocolId id) {
    switch (id) {
        case ProtocolId::I: return "I";
        case ProtocolId::II: return "II";
        case ProtocolId::III: return "III";
    }
    return "?";
}

}  // namespace tkgcn
