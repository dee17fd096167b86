#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tkgcn/graph.hpp"
#include "tkgcn/stdf.hpp"

namespace tkgcn {

// Two-variable excitable-media constants. k0 and k are the same constant
// (the model has a single k); config accepts either name.
struct APParams {
    double a = 0.01;
    double k = 8.0;
    double e0 = 0.002;
    double mu1 = 0.2;
    double mu2 = 0.3;
    double D = 0.3;    // scalar diffusivity on the row-normalized Laplacian
    double dt = 0.05;

    void validate() const;  // dt > 0, D >= 0, mu2 > 0
};

// Sparse row-normalized diffusion operator: off-diagonal entries are
// inverse-distance edge weights scaled so each row of off-diagonals sums to
// 1; the diagonal is -1 (0 for an isolated node, which has no diffusion).
struct GraphLaplacian {
    std::vector<std::size_t> offsets;  // per row into cols/weights
    std::vector<std::size_t> cols;
    std::vector<double> weights;
    std::vector<double> diag;

    std::size_t size() const { return diag.size(); }
    void apply(const std::vector<double>& x, std::vector<double>& out) const;
};

GraphLaplacian graph_laplacian(const MeshGraph& graph);

enum class ProtocolId { I, II, III };

// Pacing schedule. Periods, durations, and onsets count saved frames; the
// stimulus is applied on every integrator substep of a stimulated frame.
struct StimulusProtocol {
    ProtocolId id = ProtocolId::I;
    std::vector<std::size_t> primary_sites;
    std::vector<std::size_t> secondary_sites;
    long period = 240;
    long duration = 2;
    double amplitude = 0.5;
    long secondary_onset = -1;  // -1: simulate() uses T/2

    void validate(std::size_t node_count) const;
    bool primary_active(long frame) const;
    bool secondary_active(long frame, long resolved_onset) const;
};

struct ProtocolOptions {
    long period = 240;
    long duration = 2;
    double amplitude = 0.5;
    long secondary_onset = -1;
};

// Site selection: the "apex" is the minimal-z node plus its 1-ring; protocol
// II adds a second patch at graph distance 3 from the apex patch; protocol
// III adds one around the maximal-x node (remote).
StimulusProtocol make_protocol(ProtocolId id, const MeshGraph& graph, const ProtocolOptions& opts = {});

struct TrajectoryMeta {
    std::string protocol = "I";
    APParams params;
    std::string mesh_ref;
    int substeps = 5;
    long burn_in = 0;
    std::uint64_t seed = 0;
};

// Node-major snapshot storage: states[node * frames + t].
struct TrajectoryDataset {
    std::size_t nodes = 0;
    std::size_t frames = 0;
    std::vector<double> states;    // omega1
    std::vector<double> recovery;  // omega2, kept for diagnostics
    TrajectoryMeta meta;
    std::size_t clamp_count = 0;

    double state(std::size_t node, std::size_t t) const { return states[node * frames + t]; }
    std::vector<double> snapshot(std::size_t t) const;
};

// One forward-Euler step (in place). `stimulus` is an additive current per
// node (empty = none). Returns the number of guard-band clamps applied.
// Throws std::runtime_error if the state goes non-finite.
std::size_t ap_step(std::vector<double>& omega1, std::vector<double>& omega2, const APParams& params,
                    const GraphLaplacian& laplacian, const std::vector<double>& stimulus);

struct SimOptions {
    int substeps = 5;    // integrator steps per saved frame
    long burn_in = 0;    // saved frames discarded before recording
    std::uint64_t seed = 0;
};

TrajectoryDataset simulate(const MeshGraph& graph, const StimulusProtocol& protocol, const APParams& params,
                           long frames, const SimOptions& opts = {});

// STDF + JSON sidecar (<path>.meta.json).
void save_trajectory(const std::filesystem::path& path, const TrajectoryDataset& data);
TrajectoryDataset load_trajectory(const std::filesystem::path& path);

ProtocolId protocol_from_string(const std::string& s);
std::string to_string(ProtocolId id);

}  // namespace tkgcn
