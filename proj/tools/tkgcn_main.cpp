// Command-line front end for the forecasting pipeline. Every subcommand
// reads one JSON experiment config; stages can run end to end (via the
// pipeline inside `ablate`/`forecast`) or step by step, sharing the same
// derived seeds so both routes produce identical artifacts.
//
// Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.

#include <CLI11.hpp>
#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>

#include "tkgcn/harness.hpp"
#include "tkgcn/ops.hpp"
#include "tkgcn/util.hpp"

namespace fs = std::filesystem;
using namespace tkgcn;

namespace {

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::string variant = "tk-gcn";
};

ExperimentConfig load_config(const Options& opt) {
    if (!fs::exists(opt.config_path))
        throw std::invalid_argument("config file not found: " + opt.config_path);
    ExperimentConfig cfg = ExperimentConfig::load(opt.config_path);
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.out) cfg.out_dir = *opt.out;
    cfg.validate();
    return cfg;
}

TrajectoryDataset load_or_simulate(const ExperimentConfig& cfg, const MeshGraph& graph) {
    const fs::path path = cfg.out_dir / "trajectory.stdf";
    if (fs::exists(path)) return load_trajectory(path);
    TrajectoryDataset data = simulate_experiment(cfg, graph);
    fs::create_directories(cfg.out_dir);
    save_trajectory(path, data);
    return data;
}

std::vector<Tensor> dataset_frames(const TrajectoryDataset& data) {
    std::vector<Tensor> frames;
    frames.reserve(data.frames);
    for (std::size_t t = 0; t < data.frames; ++t) {
        Tensor frame = Tensor::zeros({data.nodes, 1});
        for (std::size_t i = 0; i < data.nodes; ++i) frame.at(i, 0) = data.state(i, t);
        frames.push_back(std::move(frame));
    }
    return frames;
}

void require_artifact(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path))
        throw std::runtime_error(path.generic_string() + " not found; run `" + producer +
                                 "` first");
}

// Row order used by the end-to-end pipeline's CSV: model variants first,
// then the comparison methods; anything unrecognized goes last, by name.
int method_rank(const std::string& method) {
    const std::array<const char*, 6> order = {"tk-gcn", "transformer+gcn", "transformer-only",
                                              "dmd",    "var",             "pure-koopman"};
    for (std::size_t i = 0; i < order.size(); ++i)
        if (method == order[i]) return static_cast<int>(i);
    return static_cast<int>(order.size());
}

int cmd_simulate(const Options& opt) {
    ExperimentConfig cfg = load_config(opt);
    MeshGraph graph = experiment_graph(cfg);
    TrajectoryDataset data = simulate_experiment(cfg, graph);
    fs::create_directories(cfg.out_dir);
    save_trajectory(cfg.out_dir / "trajectory.stdf", data);
    std::cout << "wrote " << (cfg.out_dir / "trajectory.stdf").generic_string() << " ("
              << data.nodes << " nodes, " << data.frames << " frames, clamp count "
              << data.clamp_count << ")\n";
    return 0;
}

int cmd_train_kgcn(const Options& opt) {
    ExperimentConfig cfg = load_config(opt);
    MeshGraph graph = experiment_graph(cfg);
    GraphHierarchy hierarchy = experiment_hierarchy(cfg, graph);
    TrajectoryDataset data = load_or_simulate(cfg, graph);
    DatasetSplit split = split_dataset(data, cfg);

    Stage1Result result = train_stage1(dataset_frames(data), split.train.length(), hierarchy,
                                       derived_stage1_config(cfg));
    save_checkpoint(cfg.out_dir / "stage1.ckpt", result.model.named_parameters());
    save_latents(cfg.out_dir / "latents.stdf", result.latents);
    save_stage1_log_csv(cfg.out_dir / "stage1_log.csv", result.log);
    std::cout << "stage 1 finished after " << result.epochs_run
              << " epochs; training reconstruction MSE "
              << format_double(result.train_recon_mse) << "\n";
    return 0;
}

int cmd_train_transformer(const Options& opt) {
    ExperimentConfig cfg = load_config(opt);
    require_artifact(cfg.out_dir / "latents.stdf", "train-kgcn");
    Tensor latents = load_latents(cfg.out_dir / "latents.stdf");

    Stage2Result result =
        train_stage2(slice(latents, 0, 0, cfg.split.train), derived_stage2_config(cfg));
    save_checkpoint(cfg.out_dir / "stage2.ckpt", result.model.named_parameters());
    save_stage2_log_csv(cfg.out_dir / "stage2_log.csv", result.log);
    std::cout << "stage 2 finished after " << result.epochs_run << " epochs; final loss "
              << format_double(result.final_loss) << "\n";
    return 0;
}

int cmd_forecast(const Options& opt) {
    ExperimentConfig cfg = load_config(opt);
    require_artifact(cfg.out_dir / "stage1.ckpt", "train-kgcn");
    require_artifact(cfg.out_dir / "latents.stdf", "train-kgcn");
    require_artifact(cfg.out_dir / "stage2.ckpt", "train-transformer");

    MeshGraph graph = experiment_graph(cfg);
    GraphHierarchy hierarchy = experiment_hierarchy(cfg, graph);
    Rng rng(0);  // parameters are immediately overwritten by the checkpoint
    KoopmanAutoencoder autoencoder(hierarchy, cfg.stage1.d_z, cfg.stage1.channels, rng);
    NamedParams s1_params = autoencoder.named_parameters();
    load_checkpoint(cfg.out_dir / "stage1.ckpt", s1_params);
    autoencoder.freeze();

    LatentTransformer model(derived_stage2_config(cfg), rng);
    NamedParams s2_params = model.named_parameters();
    load_checkpoint(cfg.out_dir / "stage2.ckpt", s2_params);
    model.freeze();

    Tensor latents = load_latents(cfg.out_dir / "latents.stdf");
    const std::size_t train = cfg.split.train;
    const std::size_t window = cfg.stage2.window;
    Tensor rolled = rollout(model, slice(latents, 0, train - window, train), train - window,
                            static_cast<long long>(cfg.split.test));
    Tensor predictions = forecast_states(autoencoder, rolled);
    save_forecast(cfg.out_dir / "forecast_tk-gcn.stdf", predictions);
    std::cout << "wrote " << (cfg.out_dir / "forecast_tk-gcn.stdf").generic_string() << " ("
              << predictions.dim(0) << " steps)\n";
    return 0;
}

int cmd_baseline(const Options& opt) {
    ExperimentConfig cfg = load_config(opt);
    MeshGraph graph = experiment_graph(cfg);
    TrajectoryDataset data = load_or_simulate(cfg, graph);
    DatasetSplit split = split_dataset(data, cfg);
    const std::size_t train = split.train.length();
    const long long horizon = static_cast<long long>(split.test.length());

    Tensor snapshots = Tensor::zeros({data.nodes, train});
    for (std::size_t i = 0; i < data.nodes; ++i)
        for (std::size_t t = 0; t < train; ++t) snapshots.at(i, t) = data.state(i, t);
    DMDConfig dmd_cfg;
    dmd_cfg.rank = cfg.baselines.dmd_rank;
    DMDModel dmd = dmd_fit(snapshots, dmd_cfg);
    save_forecast(cfg.out_dir / "forecast_dmd.stdf",
                  dmd_forecast(dmd, dmd.last_state, horizon));

    // The latent-space methods need the trained autoencoder.
    require_artifact(cfg.out_dir / "stage1.ckpt", "train-kgcn");
    require_artifact(cfg.out_dir / "latents.stdf", "train-kgcn");
    GraphHierarchy hierarchy = experiment_hierarchy(cfg, graph);
    Rng rng(0);
    KoopmanAutoencoder autoencoder(hierarchy, cfg.stage1.d_z, cfg.stage1.channels, rng);
    NamedParams params = autoencoder.named_parameters();
    load_checkpoint(cfg.out_dir / "stage1.ckpt", params);
    autoencoder.freeze();
    Tensor latents = load_latents(cfg.out_dir / "latents.stdf");

    VARConfig var_cfg;
    var_cfg.order = cfg.baselines.var_order;
    var_cfg.ridge = cfg.baselines.var_ridge;
    Tensor var_predictions;
    if (cfg.baselines.var_space == "latent") {
        Tensor train_latents = slice(latents, 0, 0, train);
        VARModel var = var_fit(train_latents, var_cfg);
        var_predictions = forecast_states(autoencoder, var_forecast(var, train_latents, horizon));
    } else {
        Tensor train_states = Tensor::zeros({train, data.nodes});
        for (std::size_t t = 0; t < train; ++t)
            for (std::size_t i = 0; i < data.nodes; ++i) train_states.at(t, i) = data.state(i, t);
        VARModel var = var_fit(train_states, var_cfg);
        var_predictions = var_forecast(var, train_states, horizon);
    }
    save_forecast(cfg.out_dir / "forecast_var.stdf", var_predictions);

    Tensor last_frame = Tensor::zeros({data.nodes, 1});
    for (std::size_t i = 0; i < data.nodes; ++i) last_frame.at(i, 0) = data.state(i, train - 1);
    save_forecast(cfg.out_dir / "forecast_pure-koopman.stdf",
                  pure_koopman_forecast(autoencoder, last_frame, horizon));

    std::cout << "wrote dmd, var, and pure-koopman forecasts under "
              << cfg.out_dir.generic_string() << "\n";
    return 0;
}

int cmd_ablate(const Options& opt) {
    ExperimentConfig cfg = load_config(opt);
    ForecastReport report = run_ablation(cfg, opt.variant);
    std::cout << "variant " << report.method << ":";
    for (std::size_t k = 0; k < report.intervals.size(); ++k)
        std::cout << " " << report.intervals[k].label() << " = "
                  << format_double(report.interval_mse[k]);
    std::cout << "\n";
    return 0;
}

int cmd_evaluate(const Options& opt) {
    ExperimentConfig cfg = load_config(opt);
    require_artifact(cfg.out_dir / "trajectory.stdf", "simulate");
    TrajectoryDataset data = load_trajectory(cfg.out_dir / "trajectory.stdf");

    std::vector<ForecastReport> reports;
    for (const auto& entry : fs::directory_iterator(cfg.out_dir)) {
        const std::string name = entry.path().filename().generic_string();
        if (name.rfind("forecast_", 0) != 0 || entry.path().extension() != ".stdf") continue;
        const std::string method = name.substr(9, name.size() - 9 - 5);
        reports.push_back(evaluate_forecast_file(method, entry.path(), data, cfg));
    }
    if (reports.empty())
        throw std::runtime_error("no forecast_*.stdf files under " +
                                 cfg.out_dir.generic_string() + "; run `forecast` or `baseline`");
    std::sort(reports.begin(), reports.end(),
              [](const ForecastReport& a, const ForecastReport& b) {
                  const int ra = method_rank(a.method), rb = method_rank(b.method);
                  return ra != rb ? ra < rb : a.method < b.method;
              });
    emit_report(reports, cfg);
    std::cout << "evaluated " << reports.size() << " forecasts; wrote "
              << (cfg.out_dir / "report.csv").generic_string() << "\n";
    return 0;
}

int cmd_report(const Options& opt) {
    ExperimentConfig cfg = load_config(opt);
    if (!fs::is_directory(cfg.out_dir))
        throw std::runtime_error("output directory " + cfg.out_dir.generic_string() +
                                 " does not exist; run `evaluate` first");
    std::vector<std::pair<std::string, nlohmann::json>> found;
    for (const auto& entry : fs::directory_iterator(cfg.out_dir)) {
        const std::string name = entry.path().filename().generic_string();
        if (name.rfind("report_", 0) != 0 || entry.path().extension() != ".json") continue;
        found.emplace_back(name.substr(7, name.size() - 7 - 5),
                           nlohmann::json::parse(read_text_file(entry.path())));
    }
    if (found.empty())
        throw std::runtime_error("no report_*.json files under " + cfg.out_dir.generic_string() +
                                 "; run `evaluate` first");
    std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) {
        const int ra = method_rank(a.first), rb = method_rank(b.first);
        return ra != rb ? ra < rb : a.first < b.first;
    });

    std::string csv = "model";
    for (const auto& iv : found.front().second.at("intervals"))
        csv += ",interval_" + std::to_string(iv.at("begin").get<std::size_t>()) + "_" +
               std::to_string(iv.at("end").get<std::size_t>());
    csv += "\n";
    for (const auto& [method, j] : found) {
        csv += method;
        for (const auto& iv : j.at("intervals"))
            csv += "," + format_double(iv.at("mse").get<double>());
        csv += "\n";
    }
    atomic_write_file(cfg.out_dir / "report.csv", csv);
    std::cout << "combined " << found.size() << " reports into "
              << (cfg.out_dir / "report.csv").generic_string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage graph forecasting laboratory"};
    app.require_subcommand(1);

    Options opt;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "experiment config JSON")->required();
        sub->add_option("--seed", opt.seed, "override the experiment seed");
        sub->add_option("--out", opt.out, "override the output directory");
    };

    CLI::App* simulate = app.add_subcommand("simulate", "generate the trajectory dataset");
    CLI::App* train_kgcn =
        app.add_subcommand("train-kgcn", "train the spatial autoencoder (stage 1)");
    CLI::App* train_transformer =
        app.add_subcommand("train-transformer", "train the latent forecaster (stage 2)");
    CLI::App* forecast =
        app.add_subcommand("forecast", "roll the trained model over the test horizon");
    CLI::App* baseline = app.add_subcommand("baseline", "fit and forecast the comparison methods");
    CLI::App* ablate = app.add_subcommand("ablate", "run one model variant end to end");
    CLI::App* evaluate = app.add_subcommand("evaluate", "score every forecast file");
    CLI::App* report = app.add_subcommand("report", "combine report JSONs into the CSV table");
    for (CLI::App* sub :
         {simulate, train_kgcn, train_transformer, forecast, baseline, ablate, evaluate, report})
        add_common(sub);
    ablate->add_option("--variant", opt.variant,
                       "tk-gcn, transformer+gcn, or transformer-only");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(simulate)) return cmd_simulate(opt);
        if (app.got_subcommand(train_kgcn)) return cmd_train_kgcn(opt);
        if (app.got_subcommand(train_transformer)) return cmd_train_transformer(opt);
        if (app.got_subcommand(forecast)) return cmd_forecast(opt);
        if (app.got_subcommand(baseline)) return cmd_baseline(opt);
        if (app.got_subcommand(ablate)) return cmd_ablate(opt);
        if (app.got_subcommand(evaluate)) return cmd_evaluate(opt);
        if (app.got_subcommand(report)) return cmd_report(opt);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
