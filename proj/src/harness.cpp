#include "tkgcn/harness.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <json.hpp>
#include <stdexcept>

#include "tkgcn/ops.hpp"
#include "tkgcn/util.hpp"

namespace tkgcn {
namespace {

using nlohmann::json;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void expect_keys(const json& j, const std::string& section,
                 std::initializer_list<const char*> allowed) {
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* key : allowed)
            if (item.key() == key) {
                known = true;
                break;
            }
        if (!known)
            throw std::invalid_argument("config: unknown key '" + item.key() + "' in " + section);
    }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Stage failures surface with the stage name attached; artifacts written
// before the failure stay on disk for inspection.
template <typename F>
auto stage(const char* name, F&& body) {
    try {
        return body();
    } catch (const std::exception& e) {
        throw std::runtime_error("pipeline stage '" + std::string(name) + "' failed: " + e.what());
    }
}

}  // namespace

Mesh MeshSpec::build() const {
    if (source == "file") {
        if (path.empty()) throw std::invalid_argument("mesh: file source needs a path");
        return load_mesh(path);
    }
    if (source != "synth")
        throw std::invalid_argument("mesh: source must be \"synth\" or \"file\", got \"" +
                                    source + "\"");
    return synth_mesh(mesh_kind_from_string(kind), resolution, axes);
}

std::string Interval::label() const {
    return "interval_" + std::to_string(begin) + "_" + std::to_string(end);
}

void ExperimentConfig::validate() const {
    protocol_from_string(protocol);  // throws on unknown names
    if (mesh.source != "synth" && mesh.source != "file")
        throw std::invalid_argument("mesh: source must be \"synth\" or \"file\"");
    ap.validate();
    if (frames < 2) throw std::invalid_argument("simulation: need at least 2 frames");
    if (substeps < 1) throw std::invalid_argument("simulation: substeps must be positive");
    if (burn_in < 0) throw std::invalid_argument("simulation: burn_in must be non-negative");
    if (pacing.period <= 0) throw std::invalid_argument("pacing: period must be positive");
    if (pacing.duration <= 0) throw std::invalid_argument("pacing: duration must be positive");

    if (split.train == 0 || split.test == 0)
        throw std::invalid_argument("split: train and test must both be positive");
    if (static_cast<long>(split.train + split.test) > frames)
        throw std::invalid_argument("split: train + test = " +
                                    std::to_string(split.train + split.test) +
                                    " exceeds the " + std::to_string(frames) + " frames");

    stage1.validate();
    TransformerConfig s2 = stage2;
    s2.d_z = stage1.d_z;
    s2.validate();
    if (split.train <= stage2.window)
        throw std::invalid_argument("split: train length " + std::to_string(split.train) +
                                    " must exceed the stage-2 window " +
                                    std::to_string(stage2.window));

    if (baselines.dmd_rank == 0) throw std::invalid_argument("baselines: dmd_rank must be >= 1");
    if (baselines.var_order == 0) throw std::invalid_argument("baselines: var_order must be >= 1");
    if (baselines.var_ridge < 0.0)
        throw std::invalid_argument("baselines: var_ridge must be non-negative");
    if (baselines.var_space != "latent" && baselines.var_space != "raw")
        throw std::invalid_argument("baselines: var_space must be \"latent\" or \"raw\"");

    if (intervals.empty()) throw std::invalid_argument("intervals: need at least one");
    for (const Interval& iv : intervals) {
        if (iv.begin >= iv.end)
            throw std::invalid_argument("intervals: [" + std::to_string(iv.begin) + ", " +
                                        std::to_string(iv.end) + ") is empty");
        if (iv.end > split.test)
            throw std::invalid_argument("intervals: [" + std::to_string(iv.begin) + ", " +
                                        std::to_string(iv.end) + ") exceeds the test length " +
                                        std::to_string(split.test));
    }
    for (std::size_t s : snapshots)
        if (s >= split.test)
            throw std::invalid_argument("snapshots: step " + std::to_string(s) +
                                        " is outside the test horizon " +
                                        std::to_string(split.test));
    if (out_dir.empty()) throw std::invalid_argument("out_dir: must not be empty");
}

std::string ExperimentConfig::canonical_json() const {
    json j;
    j["mesh"] = {{"source", mesh.source}};
    if (mesh.source == "file") {
        j["mesh"]["path"] = mesh.path;
    } else {
        j["mesh"]["kind"] = mesh.kind;
        j["mesh"]["resolution"] = mesh.resolution;
        j["mesh"]["axes"] = mesh.axes;
    }
    j["protocol"] = protocol;
    j["ap"] = {{"a", ap.a},     {"k", ap.k}, {"e0", ap.e0}, {"mu1", ap.mu1},
               {"mu2", ap.mu2}, {"D", ap.D}, {"dt", ap.dt}};
    j["pacing"] = {{"period", pacing.period},
                   {"duration", pacing.duration},
                   {"amplitude", pacing.amplitude},
                   {"secondary_onset", pacing.secondary_onset}};
    j["simulation"] = {{"frames", frames}, {"substeps", substeps}, {"burn_in", burn_in}};
    j["stage1"] = {{"d_z", stage1.d_z},
                   {"channels", stage1.channels},
                   {"lambda1", stage1.lambda1},
                   {"lambda2", stage1.lambda2},
                   {"delta_T", stage1.delta_T},
                   {"epochs", stage1.epochs},
                   {"learning_rate", stage1.learning_rate},
                   {"batch_size", stage1.batch_size},
                   {"target_recon_mse", stage1.target_recon_mse}};
    j["stage2"] = {{"window", stage2.window},
                   {"heads", stage2.heads},
                   {"layers", stage2.layers},
                   {"d_ff", stage2.d_ff},
                   {"mask_constant", stage2.mask_constant},
                   {"learning_rate", stage2.learning_rate},
                   {"lr_decay", stage2.lr_decay},
                   {"epochs", stage2.epochs},
                   {"batch_size", stage2.batch_size},
                   {"target_loss", stage2.target_loss}};
    j["baselines"] = {{"dmd_rank", baselines.dmd_rank},
                      {"var_order", baselines.var_order},
                      {"var_ridge", baselines.var_ridge},
                      {"var_space", baselines.var_space}};
    j["split"] = {{"train", split.train}, {"test", split.test}};
    json ivs = json::array();
    for (const Interval& iv : intervals) ivs.push_back({iv.begin, iv.end});
    j["intervals"] = ivs;
    j["snapshots"] = snapshots;
    j["seed"] = seed;
    j["out_dir"] = out_dir.generic_string();
    return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::parse(const std::string& json_text) {
    ExperimentConfig cfg;
    try {
        const json j = json::parse(json_text);
        expect_keys(j, "the top level",
                    {"mesh", "protocol", "ap", "pacing", "simulation", "stage1", "stage2",
                     "baselines", "split", "intervals", "snapshots", "seed", "out_dir"});
        if (j.contains("mesh")) {
            const json& m = j["mesh"];
            expect_keys(m, "mesh", {"source", "kind", "resolution", "axes", "path"});
            cfg.mesh.source = m.value("source", cfg.mesh.source);
            cfg.mesh.kind = m.value("kind", cfg.mesh.kind);
            cfg.mesh.resolution = m.value("resolution", cfg.mesh.resolution);
            cfg.mesh.axes = m.value("axes", cfg.mesh.axes);
            cfg.mesh.path = m.value("path", cfg.mesh.path);
        }
        cfg.protocol = j.value("protocol", cfg.protocol);
        if (j.contains("ap")) {
            const json& p = j["ap"];
            expect_keys(p, "ap", {"a", "k", "k0", "e0", "mu1", "mu2", "D", "dt"});
            if (p.contains("k") && p.contains("k0"))
                throw std::invalid_argument("config: give either ap.k or ap.k0, not both");
            cfg.ap.a = p.value("a", cfg.ap.a);
            cfg.ap.k = p.value("k", p.value("k0", cfg.ap.k));
            cfg.ap.e0 = p.value("e0", cfg.ap.e0);
            cfg.ap.mu1 = p.value("mu1", cfg.ap.mu1);
            cfg.ap.mu2 = p.value("mu2", cfg.ap.mu2);
            cfg.ap.D = p.value("D", cfg.ap.D);
            cfg.ap.dt = p.value("dt", cfg.ap.dt);
        }
        if (j.contains("pacing")) {
            const json& p = j["pacing"];
            expect_keys(p, "pacing", {"period", "duration", "amplitude", "secondary_onset"});
            cfg.pacing.period = p.value("period", cfg.pacing.period);
            cfg.pacing.duration = p.value("duration", cfg.pacing.duration);
            cfg.pacing.amplitude = p.value("amplitude", cfg.pacing.amplitude);
            cfg.pacing.secondary_onset = p.value("secondary_onset", cfg.pacing.secondary_onset);
        }
        if (j.contains("simulation")) {
            const json& s = j["simulation"];
            expect_keys(s, "simulation", {"frames", "substeps", "burn_in"});
            cfg.frames = s.value("frames", cfg.frames);
            cfg.substeps = s.value("substeps", cfg.substeps);
            cfg.burn_in = s.value("burn_in", cfg.burn_in);
        }
        if (j.contains("stage1")) {
            const json& s = j["stage1"];
            expect_keys(s, "stage1",
                        {"d_z", "channels", "lambda1", "lambda2", "delta_T", "epochs",
                         "learning_rate", "batch_size", "target_recon_mse"});
            cfg.stage1.d_z = s.value("d_z", cfg.stage1.d_z);
            cfg.stage1.channels = s.value("channels", cfg.stage1.channels);
            cfg.stage1.lambda1 = s.value("lambda1", cfg.stage1.lambda1);
            cfg.stage1.lambda2 = s.value("lambda2", cfg.stage1.lambda2);
            cfg.stage1.delta_T = s.value("delta_T", cfg.stage1.delta_T);
            cfg.stage1.epochs = s.value("epochs", cfg.stage1.epochs);
            cfg.stage1.learning_rate = s.value("learning_rate", cfg.stage1.learning_rate);
            cfg.stage1.batch_size = s.value("batch_size", cfg.stage1.batch_size);
            cfg.stage1.target_recon_mse = s.value("target_recon_mse", cfg.stage1.target_recon_mse);
        }
        if (j.contains("stage2")) {
            const json& s = j["stage2"];
            expect_keys(s, "stage2",
                        {"window", "heads", "layers", "d_ff", "mask_constant", "learning_rate",
                         "lr_decay", "epochs", "batch_size", "target_loss"});
            cfg.stage2.window = s.value("window", cfg.stage2.window);
            cfg.stage2.heads = s.value("heads", cfg.stage2.heads);
            cfg.stage2.layers = s.value("layers", cfg.stage2.layers);
            cfg.stage2.d_ff = s.value("d_ff", cfg.stage2.d_ff);
            cfg.stage2.mask_constant = s.value("mask_constant", cfg.stage2.mask_constant);
            cfg.stage2.learning_rate = s.value("learning_rate", cfg.stage2.learning_rate);
            cfg.stage2.lr_decay = s.value("lr_decay", cfg.stage2.lr_decay);
            cfg.stage2.epochs = s.value("epochs", cfg.stage2.epochs);
            cfg.stage2.batch_size = s.value("batch_size", cfg.stage2.batch_size);
            cfg.stage2.target_loss = s.value("target_loss", cfg.stage2.target_loss);
        }
        if (j.contains("baselines")) {
            const json& b = j["baselines"];
            expect_keys(b, "baselines", {"dmd_rank", "var_order", "var_ridge", "var_space"});
            cfg.baselines.dmd_rank = b.value("dmd_rank", cfg.baselines.dmd_rank);
            cfg.baselines.var_order = b.value("var_order", cfg.baselines.var_order);
            cfg.baselines.var_ridge = b.value("var_ridge", cfg.baselines.var_ridge);
            cfg.baselines.var_space = b.value("var_space", cfg.baselines.var_space);
        }
        if (j.contains("split")) {
            const json& s = j["split"];
            expect_keys(s, "split", {"train", "test"});
            cfg.split.train = s.value("train", cfg.split.train);
            cfg.split.test = s.value("test", cfg.split.test);
        }
        if (j.contains("intervals")) {
            cfg.intervals.clear();
            for (const json& iv : j["intervals"]) {
                if (!iv.is_array() || iv.size() != 2)
                    throw std::invalid_argument(
                        "config: each interval must be a [begin, end] pair");
                cfg.intervals.push_back({iv[0].get<std::size_t>(), iv[1].get<std::size_t>()});
            }
        }
        if (j.contains("snapshots")) cfg.snapshots = j["snapshots"].get<std::vector<std::size_t>>();
        cfg.seed = j.value("seed", cfg.seed);
        cfg.out_dir = j.value("out_dir", cfg.out_dir.generic_string());
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    return parse(read_text_file(path));
}

std::string ExperimentConfig::fingerprint() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical_json())));
    return buf;
}

DatasetSplit split_dataset(const TrajectoryDataset& data, const ExperimentConfig& config) {
    const std::size_t need = config.split.train + config.split.test;
    if (need > data.frames)
        throw std::invalid_argument("split_dataset: need " + std::to_string(need) +
                                    " frames but the dataset has " + std::to_string(data.frames));
    DatasetSplit split;
    split.train = {0, config.split.train};
    split.test = {config.split.train, config.split.train + config.split.test};
    return split;
}

MeshGraph experiment_graph(const ExperimentConfig& config) {
    return build_graph(config.mesh.build());
}

GraphHierarchy experiment_hierarchy(const ExperimentConfig& config, const MeshGraph& graph) {
    return build_hierarchy(graph, 2, derive_seed(config.seed, "hierarchy"));
}

TrajectoryDataset simulate_experiment(const ExperimentConfig& config, const MeshGraph& graph) {
    StimulusProtocol protocol =
        make_protocol(protocol_from_string(config.protocol), graph, config.pacing);
    SimOptions opts;
    opts.substeps = config.substeps;
    opts.burn_in = config.burn_in;
    opts.seed = derive_seed(config.seed, "simulate");
    TrajectoryDataset data = simulate(graph, protocol, config.ap, config.frames, opts);
    data.meta.protocol = config.protocol;
    data.meta.mesh_ref = config.mesh.source == "file"
                             ? config.mesh.path
                             : config.mesh.kind + "/" + std::to_string(config.mesh.resolution);
    return data;
}

// Per-stage seeds come from the experiment seed, and the transformer width
// is tied to the stage-1 latent size.
Stage1Config derived_stage1_config(const ExperimentConfig& config) {
    Stage1Config cfg = config.stage1;
    cfg.seed = derive_seed(config.seed, "stage1");
    return cfg;
}

TransformerConfig derived_stage2_config(const ExperimentConfig& config) {
    TransformerConfig cfg = config.stage2;
    cfg.d_z = config.stage1.d_z;
    cfg.seed = derive_seed(config.seed, "stage2");
    return cfg;
}

void save_forecast(const std::filesystem::path& path, const Tensor& predictions) {
    if (predictions.shape().size() != 2)
        throw std::invalid_argument("save_forecast: predictions must be (steps, nodes)");
    StdfData file;
    file.steps = static_cast<std::uint32_t>(predictions.dim(0));
    file.nodes = static_cast<std::uint32_t>(predictions.dim(1));
    file.features = 1;
    file.values.resize(predictions.size());
    for (std::size_t i = 0; i < file.nodes; ++i)
        for (std::size_t t = 0; t < file.steps; ++t)
            file.values[i * file.steps + t] = predictions(t, i);
    write_stdf(path, file);
}

Tensor load_forecast(const std::filesystem::path& path) {
    StdfData file = read_stdf(path);
    if (file.features != 1)
        throw std::runtime_error("forecast file must have one feature per node, got " +
                                 std::to_string(file.features));
    Tensor out = Tensor::zeros({file.steps, file.nodes});
    for (std::size_t i = 0; i < file.nodes; ++i)
        for (std::size_t t = 0; t < file.steps; ++t) out.at(t, i) = file.at(i, t);
    return out;
}

std::vector<double> per_step_mse(const Tensor& predictions, const Tensor& targets) {
    if (predictions.shape().size() != 2 || predictions.shape() != targets.shape())
        throw std::invalid_argument("per_step_mse: predictions and targets must share a "
                                    "(steps, nodes) shape");
    const std::size_t steps = predictions.dim(0);
    const std::size_t nodes = predictions.dim(1);
    std::vector<double> out(steps, 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
        double acc = 0.0;
        for (std::size_t i = 0; i < nodes; ++i) {
            const double d = predictions(t, i) - targets(t, i);
            acc += d * d;
        }
        out[t] = acc / static_cast<double>(nodes);
    }
    return out;
}

namespace {

std::vector<double> interval_means(const std::vector<double>& step_mse,
                                   const std::vector<Interval>& intervals) {
    std::vector<double> out;
    out.reserve(intervals.size());
    for (const Interval& iv : intervals) {
        if (iv.begin >= iv.end)
            throw std::invalid_argument("mse_intervals: [" + std::to_string(iv.begin) + ", " +
                                        std::to_string(iv.end) + ") is empty");
        if (iv.end > step_mse.size())
            throw std::invalid_argument("mse_intervals: [" + std::to_string(iv.begin) + ", " +
                                        std::to_string(iv.end) + ") exceeds the horizon " +
                                        std::to_string(step_mse.size()));
        double acc = 0.0;
        for (std::size_t t = iv.begin; t < iv.end; ++t) acc += step_mse[t];
        out.push_back(acc / static_cast<double>(iv.end - iv.begin));
    }
    return out;
}

}  // namespace

std::vector<double> mse_intervals(const Tensor& predictions, const Tensor& targets,
                                  const std::vector<Interval>& intervals) {
    return interval_means(per_step_mse(predictions, targets), intervals);
}

ForecastReport evaluate_forecast(const std::string& method, const Tensor& predictions,
                                 const Tensor& targets, const ExperimentConfig& config) {
    ForecastReport report;
    report.method = method;
    report.step_mse = per_step_mse(predictions, targets);
    report.intervals = config.intervals;
    report.interval_mse = interval_means(report.step_mse, config.intervals);
    report.fingerprint = config.fingerprint();
    const std::size_t nodes = predictions.dim(1);
    for (std::size_t s : config.snapshots) {
        if (s >= predictions.dim(0))
            throw std::invalid_argument("evaluate_forecast: snapshot step " + std::to_string(s) +
                                        " is outside the horizon");
        std::vector<double> field(nodes, 0.0);
        for (std::size_t i = 0; i < nodes; ++i) {
            const double d = predictions(s, i) - targets(s, i);
            field[i] = d * d;
        }
        report.snapshot_steps.push_back(s);
        report.snapshot_node_sqerr.push_back(std::move(field));
    }
    return report;
}

std::string ForecastReport::to_json() const {
    json j;
    j["method"] = method;
    j["fingerprint"] = fingerprint;
    j["runtime_seconds"] = runtime_seconds;
    json ivs = json::array();
    for (std::size_t i = 0; i < intervals.size(); ++i)
        ivs.push_back({{"begin", intervals[i].begin},
                       {"end", intervals[i].end},
                       {"mse", interval_mse[i]}});
    j["intervals"] = ivs;
    j["step_mse"] = step_mse;
    j["snapshot_steps"] = snapshot_steps;
    json meta = json::object();
    for (const auto& [key, value] : metadata) meta[key] = value;
    j["metadata"] = meta;
    return j.dump(2) + "\n";
}

namespace {

// Everything the pipeline derives from the config before any training.
struct PipelineData {
    MeshGraph graph;
    GraphHierarchy hierarchy;
    TrajectoryDataset data;
    DatasetSplit split;
    std::vector<Tensor> frames;  // all T frames, each (N, 1)
    Tensor targets;              // (test, N)
};

Tensor states_as_rows(const TrajectoryDataset& data, const SplitRange& range) {
    Tensor out = Tensor::zeros({range.length(), data.nodes});
    for (std::size_t t = range.begin; t < range.end; ++t)
        for (std::size_t i = 0; i < data.nodes; ++i)
            out.at(t - range.begin, i) = data.state(i, t);
    return out;
}

PipelineData prepare_pipeline(const ExperimentConfig& config) {
    PipelineData pd;
    stage("prepare", [&] {
        pd.graph = experiment_graph(config);
        pd.hierarchy = experiment_hierarchy(config, pd.graph);
        return 0;
    });
    stage("simulate", [&] {
        pd.data = simulate_experiment(config, pd.graph);
        std::filesystem::create_directories(config.out_dir);
        save_trajectory(config.out_dir / "trajectory.stdf", pd.data);
        return 0;
    });
    pd.split = split_dataset(pd.data, config);
    pd.frames.reserve(pd.data.frames);
    for (std::size_t t = 0; t < pd.data.frames; ++t) {
        Tensor frame = Tensor::zeros({pd.data.nodes, 1});
        for (std::size_t i = 0; i < pd.data.nodes; ++i) frame.at(i, 0) = pd.data.state(i, t);
        pd.frames.push_back(std::move(frame));
    }
    pd.targets = states_as_rows(pd.data, pd.split.test);
    return pd;
}

void write_report_files(const ForecastReport& report, const ExperimentConfig& config) {
    std::filesystem::create_directories(config.out_dir);
    atomic_write_file(config.out_dir / ("report_" + report.method + ".json"), report.to_json());
    if (!report.snapshot_steps.empty()) {
        StdfData errors;
        errors.nodes = static_cast<std::uint32_t>(report.snapshot_node_sqerr.front().size());
        errors.steps = static_cast<std::uint32_t>(report.snapshot_steps.size());
        errors.features = 1;
        errors.values.resize(std::size_t(errors.nodes) * errors.steps);
        for (std::size_t s = 0; s < report.snapshot_steps.size(); ++s)
            for (std::size_t i = 0; i < errors.nodes; ++i)
                errors.values[i * errors.steps + s] = report.snapshot_node_sqerr[s][i];
        write_stdf(config.out_dir / ("errors_" + report.method + ".stdf"), errors);
    }
}

// Principal-component latent map for the variant with no spatial encoder:
// rows of the training states are centered and projected onto the leading
// right singular vectors.
struct PcaMap {
    Eigen::RowVectorXd mean;
    RowMat components;  // (N, d_z)

    Tensor encode_rows(const Tensor& states) const {
        Eigen::Map<const RowMat> x(states.values().data(),
                                   static_cast<Eigen::Index>(states.dim(0)),
                                   static_cast<Eigen::Index>(states.dim(1)));
        RowMat z = (x.rowwise() - mean) * components;
        Tensor out = Tensor::zeros({states.dim(0), static_cast<std::size_t>(components.cols())});
        Eigen::Map<RowMat>(out.values().data(), z.rows(), z.cols()) = z;
        return out;
    }

    Tensor decode_rows(const Tensor& latents) const {
        Eigen::Map<const RowMat> z(latents.values().data(),
                                   static_cast<Eigen::Index>(latents.dim(0)),
                                   static_cast<Eigen::Index>(latents.dim(1)));
        RowMat x = (z * components.transpose()).rowwise() + mean;
        Tensor out = Tensor::zeros({latents.dim(0), static_cast<std::size_t>(x.cols())});
        Eigen::Map<RowMat>(out.values().data(), x.rows(), x.cols()) = x;
        return out;
    }
};

PcaMap fit_pca(const Tensor& train_states, std::size_t d_z) {
    const std::size_t t = train_states.dim(0);
    const std::size_t n = train_states.dim(1);
    if (d_z > std::min(t, n))
        throw std::invalid_argument("transformer-only variant: d_z = " + std::to_string(d_z) +
                                    " exceeds min(train frames, nodes) = " +
                                    std::to_string(std::min(t, n)));
    Eigen::Map<const RowMat> x(train_states.values().data(), static_cast<Eigen::Index>(t),
                               static_cast<Eigen::Index>(n));
    PcaMap map;
    map.mean = x.colwise().mean();
    RowMat centered = x.rowwise() - map.mean;
    Eigen::BDCSVD<RowMat> svd(centered, Eigen::ComputeThinV);
    map.components = svd.matrixV().leftCols(static_cast<Eigen::Index>(d_z));
    return map;
}

// Stage-2 training on the training rows of a latent trajectory, then a
// closed-loop rollout across the test horizon seeded with the last window of
// training latents.
std::pair<Stage2Result, Tensor> train_and_roll(const Tensor& latents, const PipelineData& pd,
                                               const TransformerConfig& cfg,
                                               const std::string& suffix,
                                               const ExperimentConfig& config) {
    const std::size_t train = pd.split.train.length();
    Stage2Result s2 = stage("stage2-train", [&] {
        return train_stage2(slice(latents, 0, 0, train), cfg);
    });
    save_checkpoint(config.out_dir / ("stage2" + suffix + ".ckpt"), s2.model.named_parameters());
    save_stage2_log_csv(config.out_dir / ("stage2_log" + suffix + ".csv"), s2.log);

    Tensor rolled = stage("rollout", [&] {
        Tensor window = slice(latents, 0, train - cfg.window, train);
        return rollout(s2.model, window, train - cfg.window,
                       static_cast<long long>(pd.split.test.length()));
    });
    return {std::move(s2), std::move(rolled)};
}

ForecastReport finish_report(ForecastReport report, double seconds,
                             std::vector<std::pair<std::string, std::string>> metadata,
                             const ExperimentConfig& config) {
    report.runtime_seconds = seconds;
    report.metadata = std::move(metadata);
    write_report_files(report, config);
    return report;
}

// The two trained-variant paths ("tk-gcn" and "transformer+gcn") differ only
// in the stage-1 loss weights and artifact suffix.
struct TwoStageOutcome {
    Stage1Result s1;
    ForecastReport report;
};

TwoStageOutcome run_two_stage(const ExperimentConfig& config, const PipelineData& pd,
                              const std::string& variant) {
    const auto start = std::chrono::steady_clock::now();
    const bool primary = variant == "tk-gcn";
    const std::string suffix = primary ? "" : "_" + variant;

    Stage1Config s1cfg = derived_stage1_config(config);
    if (!primary) {
        s1cfg.lambda1 = 0.0;
        s1cfg.lambda2 = 0.0;
    }
    Stage1Result s1 = stage("stage1-train", [&] {
        return train_stage1(pd.frames, pd.split.train.length(), pd.hierarchy, s1cfg);
    });
    save_checkpoint(config.out_dir / ("stage1" + suffix + ".ckpt"), s1.model.named_parameters());
    save_latents(config.out_dir / ("latents" + suffix + ".stdf"), s1.latents);
    save_stage1_log_csv(config.out_dir / ("stage1_log" + suffix + ".csv"), s1.log);

    auto [s2, rolled] = train_and_roll(s1.latents, pd, derived_stage2_config(config), suffix, config);
    Tensor predictions = stage("decode", [&] { return forecast_states(s1.model, rolled); });
    save_forecast(config.out_dir / ("forecast_" + variant + ".stdf"), predictions);

    ForecastReport report = evaluate_forecast(variant, predictions, pd.targets, config);
    std::vector<std::pair<std::string, std::string>> metadata = {
        {"variant", variant},
        {"stage1_epochs_run", std::to_string(s1.epochs_run)},
        {"stage1_train_recon_mse", format_double(s1.train_recon_mse)},
        {"stage2_epochs_run", std::to_string(s2.epochs_run)},
        {"stage2_final_loss", format_double(s2.final_loss)},
        {"lambda1", format_double(s1cfg.lambda1)},
        {"lambda2", format_double(s1cfg.lambda2)},
    };
    return {std::move(s1),
            finish_report(std::move(report), seconds_since(start), std::move(metadata), config)};
}

ForecastReport run_transformer_only(const ExperimentConfig& config, const PipelineData& pd) {
    const auto start = std::chrono::steady_clock::now();
    const std::string variant = "transformer-only";

    PcaMap map = stage("latent-projection", [&] {
        return fit_pca(states_as_rows(pd.data, pd.split.train), config.stage1.d_z);
    });
    Tensor latents = map.encode_rows(states_as_rows(pd.data, {0, pd.data.frames}));
    save_latents(config.out_dir / ("latents_" + variant + ".stdf"), latents);

    auto [s2, rolled] = train_and_roll(latents, pd, derived_stage2_config(config), "_" + variant, config);
    Tensor predictions = map.decode_rows(rolled);
    save_forecast(config.out_dir / ("forecast_" + variant + ".stdf"), predictions);

    ForecastReport report = evaluate_forecast(variant, predictions, pd.targets, config);
    std::vector<std::pair<std::string, std::string>> metadata = {
        {"variant", variant},
        {"latent_map", "principal-components"},
        {"stage2_epochs_run", std::to_string(s2.epochs_run)},
        {"stage2_final_loss", format_double(s2.final_loss)},
    };
    return finish_report(std::move(report), seconds_since(start), std::move(metadata), config);
}

}  // namespace

std::vector<ForecastReport> run_pipeline(const ExperimentConfig& config) {
    config.validate();
    std::filesystem::create_directories(config.out_dir);
    atomic_write_file(config.out_dir / "config.json", config.canonical_json());

    PipelineData pd = prepare_pipeline(config);
    std::vector<ForecastReport> reports;

    TwoStageOutcome primary = run_two_stage(config, pd, "tk-gcn");
    reports.push_back(primary.report);

    // All comparison methods are fitted on the identical training range and
    // forecast the identical horizon.
    const std::size_t train = pd.split.train.length();
    const std::size_t test = pd.split.test.length();

    {
        const auto start = std::chrono::steady_clock::now();
        auto [model, predictions] = stage("baseline-dmd", [&] {
            Tensor snapshots = Tensor::zeros({pd.data.nodes, train});
            for (std::size_t i = 0; i < pd.data.nodes; ++i)
                for (std::size_t t = 0; t < train; ++t) snapshots.at(i, t) = pd.data.state(i, t);
            DMDConfig cfg;
            cfg.rank = config.baselines.dmd_rank;
            DMDModel fitted = dmd_fit(snapshots, cfg);
            Tensor preds = dmd_forecast(fitted, fitted.last_state,
                                        static_cast<long long>(test));
            return std::pair(std::move(fitted), std::move(preds));
        });
        save_forecast(config.out_dir / "forecast_dmd.stdf", predictions);
        reports.push_back(finish_report(
            evaluate_forecast("dmd", predictions, pd.targets, config), seconds_since(start),
            {{"requested_rank", std::to_string(model.requested_rank)},
             {"effective_rank", std::to_string(model.rank)}},
            config));
    }

    {
        const auto start = std::chrono::steady_clock::now();
        const bool latent_space = config.baselines.var_space == "latent";
        Tensor predictions = stage("baseline-var", [&] {
            VARConfig cfg;
            cfg.order = config.baselines.var_order;
            cfg.ridge = config.baselines.var_ridge;
            if (latent_space) {
                Tensor train_latents = slice(primary.s1.latents, 0, 0, train);
                VARModel fitted = var_fit(train_latents, cfg);
                Tensor latent_preds =
                    var_forecast(fitted, train_latents, static_cast<long long>(test));
                return forecast_states(primary.s1.model, latent_preds);
            }
            Tensor train_states = states_as_rows(pd.data, pd.split.train);
            VARModel fitted = var_fit(train_states, cfg);
            return var_forecast(fitted, train_states, static_cast<long long>(test));
        });
        save_forecast(config.out_dir / "forecast_var.stdf", predictions);
        reports.push_back(finish_report(
            evaluate_forecast("var", predictions, pd.targets, config), seconds_since(start),
            {{"order", std::to_string(config.baselines.var_order)},
             {"ridge", format_double(config.baselines.var_ridge)},
             {"space", config.baselines.var_space}},
            config));
    }

    {
        const auto start = std::chrono::steady_clock::now();
        Tensor predictions = stage("baseline-pure-koopman", [&] {
            return pure_koopman_forecast(primary.s1.model, pd.frames[train - 1],
                                         static_cast<long long>(test));
        });
        save_forecast(config.out_dir / "forecast_pure-koopman.stdf", predictions);
        reports.push_back(finish_report(
            evaluate_forecast("pure-koopman", predictions, pd.targets, config),
            seconds_since(start), {{"source", "stage1-operator"}}, config));
    }

    emit_report(reports, config);
    return reports;
}

ForecastReport run_ablation(const ExperimentConfig& config, const std::string& variant) {
    config.validate();
    if (variant != "tk-gcn" && variant != "transformer+gcn" && variant != "transformer-only")
        throw std::invalid_argument(
            "run_ablation: unknown variant \"" + variant +
            "\"; valid names are tk-gcn, transformer+gcn, transformer-only");

    std::filesystem::create_directories(config.out_dir);
    atomic_write_file(config.out_dir / "config.json", config.canonical_json());
    PipelineData pd = prepare_pipeline(config);
    if (variant == "transformer-only") return run_transformer_only(config, pd);
    return run_two_stage(config, pd, variant).report;
}

void emit_report(const std::vector<ForecastReport>& reports, const ExperimentConfig& config) {
    if (reports.empty()) throw std::invalid_argument("emit_report: no reports to write");
    std::filesystem::create_directories(config.out_dir);
    for (const ForecastReport& report : reports) write_report_files(report, config);

    // One row per method, one interval column per configured interval,
    // mirroring the layout of a comparison table.
    std::string csv = "model";
    for (const Interval& iv : reports.front().intervals) csv += "," + iv.label();
    csv += "\n";
    for (const ForecastReport& report : reports) {
        csv += report.method;
        for (double v : report.interval_mse) csv += "," + format_double(v);
        csv += "\n";
    }
    atomic_write_file(config.out_dir / "report.csv", csv);
}

ForecastReport evaluate_forecast_file(const std::string& method,
                                      const std::filesystem::path& forecast_path,
                                      const TrajectoryDataset& data,
                                      const ExperimentConfig& config) {
    Tensor predictions = load_forecast(forecast_path);
    DatasetSplit split = split_dataset(data, config);
    Tensor targets = states_as_rows(data, split.test);
    return evaluate_forecast(method, predictions, targets, config);
}

}  // namespace tkgcn
