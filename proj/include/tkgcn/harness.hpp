#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tkgcn/ap.hpp"
#include "tkgcn/baselines.hpp"
#include "tkgcn/koopman.hpp"
#include "tkgcn/mesh.hpp"
#include "tkgcn/transformer.hpp"

namespace tkgcn {

// Experiment orchestration: a JSON-configured end-to-end run that simulates
// (or loads) a trajectory, trains both stages, rolls the forecast over the
// held-out tail, fits the comparison methods on the identical split, and
// writes machine-readable reports.

struct MeshSpec {
    // "synth" builds a mesh from kind/resolution/axes; "file" loads `path`.
    std::string source = "synth";
    std::string kind = "sphere";
    int resolution = 2;
    std::array<double, 3> axes = {1.0, 1.0, 1.0};
    std::string path;

    Mesh build() const;
};

struct SplitSpec {
    std::size_t train = 1200;
    std::size_t test = 300;
};

struct Interval {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive

    std::string label() const;  // e.g. "interval_0_100"
};

struct BaselineSpec {
    std::size_t dmd_rank = 32;
    std::size_t var_order = 1;
    double var_ridge = 1e-6;
    std::string var_space = "latent";  // or "raw"
};

struct ExperimentConfig {
    MeshSpec mesh;
    std::string protocol = "I";
    APParams ap;
    ProtocolOptions pacing;
    long frames = 1500;
    int substeps = 5;
    long burn_in = 0;
    Stage1Config stage1;
    TransformerConfig stage2;
    BaselineSpec baselines;
    SplitSpec split;
    std::vector<Interval> intervals = {{0, 100}, {100, 200}, {200, 300}};
    std::vector<std::size_t> snapshots = {99, 199, 299};
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "runs/default";

    // Throws std::invalid_argument when lengths, intervals, or snapshot
    // steps are inconsistent.
    void validate() const;

    // Canonical JSON (sorted keys, round-trip floats). parse() rejects
    // unknown keys so typos cannot silently fall back to defaults.
    std::string canonical_json() const;
    static ExperimentConfig parse(const std::string& json_text);
    static ExperimentConfig load(const std::filesystem::path& path);

    // FNV-1a of the canonical JSON, as 16 hex digits.
    std::string fingerprint() const;
};

struct SplitRange {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive

    std::size_t length() const { return end - begin; }
};

struct DatasetSplit {
    SplitRange train;
    SplitRange test;
};

// Contiguous train/test ranges: [0, train) and [train, train + test).
// Throws std::invalid_argument when the dataset is too short.
DatasetSplit split_dataset(const TrajectoryDataset& data, const ExperimentConfig& config);

// Deterministic experiment ingredients, shared by the pipeline and the
// step-by-step CLI so both produce identical artifacts: the graph from the
// mesh spec, the two-stage pooling hierarchy, the simulated trajectory, and
// the per-stage configs with seeds derived from the experiment seed.
MeshGraph experiment_graph(const ExperimentConfig& config);
GraphHierarchy experiment_hierarchy(const ExperimentConfig& config, const MeshGraph& graph);
TrajectoryDataset simulate_experiment(const ExperimentConfig& config, const MeshGraph& graph);
Stage1Config derived_stage1_config(const ExperimentConfig& config);
TransformerConfig derived_stage2_config(const ExperimentConfig& config);

// Forecast container: STDF with one feature, nodes x steps, written from and
// read into a (steps, nodes) tensor.
void save_forecast(const std::filesystem::path& path, const Tensor& predictions);
Tensor load_forecast(const std::filesystem::path& path);

// Per-step mean over nodes of the squared error; both tensors are
// (horizon, nodes).
std::vector<double> per_step_mse(const Tensor& predictions, const Tensor& targets);

// Mean of the per-step MSE over each [begin, end) interval. Intervals must
// be non-empty and lie within the horizon.
std::vector<double> mse_intervals(const Tensor& predictions, const Tensor& targets,
                                  const std::vector<Interval>& intervals);

struct ForecastReport {
    std::string method;
    std::vector<double> step_mse;      // one entry per forecast step
    std::vector<Interval> intervals;   // as configured
    std::vector<double> interval_mse;  // parallel to `intervals`
    std::vector<std::size_t> snapshot_steps;
    std::vector<std::vector<double>> snapshot_node_sqerr;  // per step, length N
    std::vector<std::pair<std::string, std::string>> metadata;
    std::string fingerprint;
    double runtime_seconds = 0.0;

    std::string to_json() const;  // sorted keys; runtime under "runtime_seconds"
};

// Forecast evaluation shared by every method: per-step series, interval
// means, and per-node squared-error fields at the configured snapshots.
ForecastReport evaluate_forecast(const std::string& method, const Tensor& predictions,
                                 const Tensor& targets, const ExperimentConfig& config);

// Full two-stage pipeline plus the three comparison methods, all on the
// identical split. Artifacts (trajectory, checkpoints, latents, logs,
// forecasts, reports) land under config.out_dir; a stage failure is
// rethrown with the stage name attached and earlier artifacts are kept.
std::vector<ForecastReport> run_pipeline(const ExperimentConfig& config);

// Model variants sharing the pipeline:
//   "tk-gcn"           — the primary two-stage model;
//   "transformer+gcn"  — stage 1 trained with both Koopman losses off;
//   "transformer-only" — no spatial encoder: latents are the training
//                        states' leading principal components.
// Throws std::invalid_argument for unknown names, listing the valid ones.
ForecastReport run_ablation(const ExperimentConfig& config, const std::string& variant);

// Writes report_<method>.json, a combined report.csv with one row per
// method and one column per interval, and errors_<method>.stdf holding the
// per-node squared-error snapshots.
void emit_report(const std::vector<ForecastReport>& reports, const ExperimentConfig& config);

// Reads a forecast back from STDF (steps x nodes) and evaluates it against
// the trajectory tail; the evaluator never sees which method produced it.
ForecastReport evaluate_forecast_file(const std::string& method,
                                      const std::filesystem::path& forecast_path,
                                      const TrajectoryDataset& data,
                                      const ExperimentConfig& config);

}  // namespace tkgcn
