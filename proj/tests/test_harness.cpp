#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "tkgcn/harness.hpp"
#include "tkgcn/ops.hpp"
#include "tkgcn/util.hpp"

using namespace tkgcn;
namespace fs = std::filesystem;

namespace {

// Small but complete experiment: icosphere(1) has 42 nodes, so every stage
// runs in seconds while still exercising the full pipeline.
ExperimentConfig tiny_experiment(const std::string& tag) {
    ExperimentConfig cfg;
    cfg.mesh.source = "synth";
    cfg.mesh.kind = "sphere";
    cfg.mesh.resolution = 1;
    cfg.protocol = "I";
    cfg.ap.D = 0.2;
    cfg.frames = 120;
    cfg.substeps = 5;
    cfg.split = {80, 30};
    cfg.stage1.d_z = 8;
    cfg.stage1.channels = 4;
    cfg.stage1.delta_T = 2;
    cfg.stage1.epochs = 3;
    cfg.stage1.batch_size = 16;
    cfg.stage2.window = 16;
    cfg.stage2.heads = 2;
    cfg.stage2.layers = 1;
    cfg.stage2.epochs = 3;
    cfg.baselines.dmd_rank = 8;
    cfg.intervals = {{0, 10}, {10, 30}};
    cfg.snapshots = {0, 29};
    cfg.seed = 7;
    cfg.out_dir = fs::temp_directory_path() / "tkgcn_harness_tests" / tag;
    return cfg;
}

TrajectoryDataset fake_dataset(std::size_t nodes, std::size_t frames) {
    TrajectoryDataset data;
    data.nodes = nodes;
    data.frames = frames;
    data.states.resize(nodes * frames);
    for (std::size_t i = 0; i < nodes; ++i)
        for (std::size_t t = 0; t < frames; ++t)
            data.states[i * frames + t] = std::sin(0.01 * double(i * frames + t));
    return data;
}

std::string strip_runtime(const std::string& report_json) {
    std::istringstream in(report_json);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line))
        if (line.find("runtime_seconds") == std::string::npos) out << line << '\n';
    return out.str();
}

}  // namespace

TEST_CASE("an empty config document yields the documented defaults") {
    ExperimentConfig cfg = ExperimentConfig::parse("{}");
    CHECK(cfg.mesh.source == "synth");
    CHECK(cfg.protocol == "I");
    CHECK(cfg.frames == 1500);
    CHECK(cfg.split.train == 1200);
    CHECK(cfg.split.test == 300);
    REQUIRE(cfg.intervals.size() == 3);
    CHECK(cfg.intervals[0].begin == 0);
    CHECK(cfg.intervals[0].end == 100);
    CHECK(cfg.intervals[2].begin == 200);
    CHECK(cfg.intervals[2].end == 300);
    CHECK(cfg.stage1.d_z == 64);
    CHECK(cfg.stage2.window == 128);
    CHECK(cfg.baselines.var_space == "latent");
}

TEST_CASE("unknown config keys are rejected by name") {
    CHECK_THROWS_WITH_AS(ExperimentConfig::parse("{\"typo\": 1}"),
                         doctest::Contains("typo"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(ExperimentConfig::parse("{\"stage1\": {\"lambda3\": 1.0}}"),
                         doctest::Contains("lambda3"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(ExperimentConfig::parse("{\"mesh\": {\"sourse\": \"synth\"}}"),
                         doctest::Contains("sourse"), std::invalid_argument);
    CHECK_THROWS_AS(ExperimentConfig::parse("not json"), std::invalid_argument);
}

TEST_CASE("the reaction constant accepts either of its two published names") {
    ExperimentConfig a = ExperimentConfig::parse("{\"ap\": {\"k\": 9.5}}");
    CHECK(a.ap.k == 9.5);
    ExperimentConfig b = ExperimentConfig::parse("{\"ap\": {\"k0\": 9.5}}");
    CHECK(b.ap.k == 9.5);
    CHECK_THROWS_WITH_AS(ExperimentConfig::parse("{\"ap\": {\"k\": 8.0, \"k0\": 8.0}}"),
                         doctest::Contains("either"), std::invalid_argument);
}

TEST_CASE("config serialization round-trips exactly") {
    ExperimentConfig cfg = tiny_experiment("roundtrip");
    cfg.ap.dt = 0.0375;  // not representable in a short decimal
    cfg.stage1.lambda2 = 3.7e-5;
    std::string first = cfg.canonical_json();
    ExperimentConfig reparsed = ExperimentConfig::parse(first);
    CHECK(reparsed.canonical_json() == first);
    CHECK(reparsed.fingerprint() == cfg.fingerprint());
}

TEST_CASE("every field change alters the fingerprint") {
    const ExperimentConfig base = tiny_experiment("fingerprint");
    const std::string fp = base.fingerprint();
    CHECK(fp == base.fingerprint());  // stable across calls
    CHECK(fp.size() == 16);

    ExperimentConfig m = base;
    m.seed = 8;
    CHECK(m.fingerprint() != fp);
    m = base;
    m.protocol = "III";
    CHECK(m.fingerprint() != fp);
    m = base;
    m.stage1.lambda1 = 0.5;
    CHECK(m.fingerprint() != fp);
    m = base;
    m.baselines.dmd_rank = 9;
    CHECK(m.fingerprint() != fp);
    m = base;
    m.intervals[1].end = 29;
    CHECK(m.fingerprint() != fp);
    m = base;
    m.out_dir = base.out_dir / "elsewhere";
    CHECK(m.fingerprint() != fp);
    m = base;
    m.ap.dt = 0.049;
    CHECK(m.fingerprint() != fp);
}

TEST_CASE("config validation rejects inconsistent experiments") {
    ExperimentConfig cfg = tiny_experiment("validate");
    cfg.split = {100, 30};  // 130 > 120 frames
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = tiny_experiment("validate");
    cfg.intervals.clear();
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = tiny_experiment("validate");
    cfg.intervals = {{10, 10}};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = tiny_experiment("validate");
    cfg.intervals = {{0, 31}};  // beyond the 30-step test horizon
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = tiny_experiment("validate");
    cfg.snapshots = {30};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = tiny_experiment("validate");
    cfg.stage2.window = 80;  // needs train > window
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = tiny_experiment("validate");
    cfg.baselines.var_space = "spectral";
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = tiny_experiment("validate");
    cfg.protocol = "IV";
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("the split is contiguous, disjoint, and sized as configured") {
    ExperimentConfig cfg;
    cfg.split = {1200, 300};
    TrajectoryDataset data = fake_dataset(3, 1500);
    DatasetSplit split = split_dataset(data, cfg);
    CHECK(split.train.begin == 0);
    CHECK(split.train.end == 1200);
    CHECK(split.test.begin == 1200);
    CHECK(split.test.end == 1500);
    CHECK(split.train.length() + split.test.length() == 1500);

    TrajectoryDataset small = fake_dataset(3, 1499);
    CHECK_THROWS_AS(split_dataset(small, cfg), std::invalid_argument);
}

TEST_CASE("per-step error vanishes on identical tensors and squares a uniform offset") {
    Rng rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor targets = Tensor::zeros({30, 7});
    for (std::size_t i = 0; i < targets.size(); ++i) targets.values()[i] = u(rng);

    std::vector<double> zero = per_step_mse(targets, targets);
    for (double v : zero) CHECK(v == 0.0);

    Tensor shifted = add(targets, Tensor::full({30, 7}, 0.5));
    std::vector<Interval> intervals = {{0, 10}, {10, 20}, {20, 30}};
    std::vector<double> means = mse_intervals(shifted, targets, intervals);
    REQUIRE(means.size() == 3);
    for (double v : means) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("interval means agree with a brute-force double loop") {
    Rng rng(12);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Tensor pred = Tensor::zeros({25, 9});
    Tensor target = Tensor::zeros({25, 9});
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred.values()[i] = u(rng);
        target.values()[i] = u(rng);
    }
    std::vector<Interval> intervals = {{0, 5}, {5, 25}, {3, 8}};
    std::vector<double> got = mse_intervals(pred, target, intervals);

    for (std::size_t k = 0; k < intervals.size(); ++k) {
        double total = 0.0;
        for (std::size_t t = intervals[k].begin; t < intervals[k].end; ++t) {
            double step = 0.0;
            for (std::size_t i = 0; i < 9; ++i) {
                const double d = pred(t, i) - target(t, i);
                step += d * d;
            }
            total += step / 9.0;
        }
        const double want = total / double(intervals[k].end - intervals[k].begin);
        CHECK(got[k] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("evaluation rejects malformed inputs") {
    Tensor a = Tensor::zeros({10, 4});
    Tensor b = Tensor::zeros({10, 5});
    CHECK_THROWS_AS(per_step_mse(a, b), std::invalid_argument);
    CHECK_THROWS_AS(per_step_mse(Tensor::zeros({10}), Tensor::zeros({10})),
                    std::invalid_argument);
    CHECK_THROWS_AS(mse_intervals(a, a, {{5, 5}}), std::invalid_argument);
    CHECK_THROWS_AS(mse_intervals(a, a, {{0, 11}}), std::invalid_argument);
}

TEST_CASE("forecast evaluation snapshots the per-node squared error") {
    ExperimentConfig cfg = tiny_experiment("eval");
    cfg.snapshots = {2, 29};
    Rng rng(13);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor pred = Tensor::zeros({30, 6});
    Tensor target = Tensor::zeros({30, 6});
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred.values()[i] = u(rng);
        target.values()[i] = u(rng);
    }
    ForecastReport report = evaluate_forecast("probe", pred, target, cfg);
    CHECK(report.method == "probe");
    CHECK(report.fingerprint == cfg.fingerprint());
    CHECK(report.step_mse.size() == 30);
    REQUIRE(report.snapshot_steps == std::vector<std::size_t>{2, 29});
    REQUIRE(report.snapshot_node_sqerr.size() == 2);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < 6; ++i) {
            const double d = pred(report.snapshot_steps[k], i) - target(report.snapshot_steps[k], i);
            CHECK(report.snapshot_node_sqerr[k][i] == d * d);
        }

    // Interval means must reproduce the mean of their per-step members.
    for (std::size_t k = 0; k < report.intervals.size(); ++k) {
        double acc = 0.0;
        for (std::size_t t = report.intervals[k].begin; t < report.intervals[k].end; ++t)
            acc += report.step_mse[t];
        acc /= double(report.intervals[k].end - report.intervals[k].begin);
        CHECK(report.interval_mse[k] == doctest::Approx(acc).epsilon(1e-12));
    }

    // The serialized report is valid JSON carrying the same numbers.
    nlohmann::json j = nlohmann::json::parse(report.to_json());
    CHECK(j["method"] == "probe");
    CHECK(j["fingerprint"] == cfg.fingerprint());
    CHECK(j["step_mse"].size() == 30);
    CHECK(j["intervals"].size() == report.intervals.size());
    CHECK(j["intervals"][0]["mse"].get<double>() == report.interval_mse[0]);
}

TEST_CASE("the full pipeline emits one evaluated forecast per method") {
    ExperimentConfig cfg = tiny_experiment("pipeline");
    fs::remove_all(cfg.out_dir);
    std::vector<ForecastReport> reports = run_pipeline(cfg);

    REQUIRE(reports.size() == 4);
    CHECK(reports[0].method == "tk-gcn");
    CHECK(reports[1].method == "dmd");
    CHECK(reports[2].method == "var");
    CHECK(reports[3].method == "pure-koopman");
    for (const ForecastReport& r : reports) {
        CHECK(r.fingerprint == cfg.fingerprint());
        CHECK(r.step_mse.size() == 30);
        REQUIRE(r.interval_mse.size() == 2);
        for (double v : r.interval_mse) CHECK(std::isfinite(v));
        CHECK(r.runtime_seconds >= 0.0);
    }

    for (const char* name :
         {"config.json", "trajectory.stdf", "trajectory.stdf.meta.json", "stage1.ckpt",
          "latents.stdf", "stage1_log.csv", "stage2.ckpt", "stage2_log.csv",
          "forecast_tk-gcn.stdf", "forecast_dmd.stdf", "forecast_var.stdf",
          "forecast_pure-koopman.stdf", "report_tk-gcn.json", "report_dmd.json",
          "report_var.json", "report_pure-koopman.json", "errors_tk-gcn.stdf", "report.csv"})
        CHECK_MESSAGE(fs::exists(cfg.out_dir / name), name);

    // The combined table mirrors the configured intervals.
    std::ifstream csv(cfg.out_dir / "report.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "model,interval_0_10,interval_10_30");
    std::size_t rows = 0;
    for (std::string line; std::getline(csv, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == 4);

    // The file-based evaluator reproduces the in-memory reports without
    // knowing which method wrote the forecast.
    TrajectoryDataset data = load_trajectory(cfg.out_dir / "trajectory.stdf");
    for (const ForecastReport& r : reports) {
        ForecastReport again = evaluate_forecast_file(
            r.method, cfg.out_dir / ("forecast_" + r.method + ".stdf"), data, cfg);
        REQUIRE(again.step_mse.size() == r.step_mse.size());
        for (std::size_t t = 0; t < r.step_mse.size(); ++t)
            CHECK(again.step_mse[t] == r.step_mse[t]);
        for (std::size_t k = 0; k < r.interval_mse.size(); ++k)
            CHECK(again.interval_mse[k] == r.interval_mse[k]);
    }
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("reruns with the same config are byte-identical apart from runtimes") {
    ExperimentConfig cfg = tiny_experiment("determinism");
    fs::remove_all(cfg.out_dir);
    run_pipeline(cfg);

    auto read_bytes = [&](const char* name) { return read_text_file(cfg.out_dir / name); };
    const std::string forecast = read_bytes("forecast_tk-gcn.stdf");
    const std::string dmd = read_bytes("forecast_dmd.stdf");
    const std::string latents = read_bytes("latents.stdf");
    const std::string csv = read_bytes("report.csv");
    const std::string report = strip_runtime(read_bytes("report_tk-gcn.json"));
    const std::string trajectory = read_bytes("trajectory.stdf");

    run_pipeline(cfg);
    CHECK(read_bytes("forecast_tk-gcn.stdf") == forecast);
    CHECK(read_bytes("forecast_dmd.stdf") == dmd);
    CHECK(read_bytes("latents.stdf") == latents);
    CHECK(read_bytes("report.csv") == csv);
    CHECK(strip_runtime(read_bytes("report_tk-gcn.json")) == report);
    CHECK(read_bytes("trajectory.stdf") == trajectory);
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("ablation variants share the pipeline and record their substitutions") {
    ExperimentConfig cfg = tiny_experiment("ablation");
    fs::remove_all(cfg.out_dir);

    CHECK_THROWS_WITH_AS(run_ablation(cfg, "transformer"),
                         doctest::Contains("transformer-only"), std::invalid_argument);

    std::vector<ForecastReport> reports = run_pipeline(cfg);
    ForecastReport same = run_ablation(cfg, "tk-gcn");
    REQUIRE(same.step_mse.size() == reports[0].step_mse.size());
    for (std::size_t t = 0; t < same.step_mse.size(); ++t)
        CHECK(same.step_mse[t] == reports[0].step_mse[t]);

    ForecastReport nodyn = run_ablation(cfg, "transformer+gcn");
    CHECK(nodyn.method == "transformer+gcn");
    bool lambda_reported = false;
    for (const auto& [key, value] : nodyn.metadata)
        if (key == "lambda1") {
            CHECK(value == "0");
            lambda_reported = true;
        }
    CHECK(lambda_reported);
    CHECK(fs::exists(cfg.out_dir / "report_transformer+gcn.json"));
    CHECK(fs::exists(cfg.out_dir / "forecast_transformer+gcn.stdf"));

    ForecastReport pca = run_ablation(cfg, "transformer-only");
    CHECK(pca.method == "transformer-only");
    CHECK(pca.interval_mse.size() == nodyn.interval_mse.size());
    bool map_reported = false;
    for (const auto& [key, value] : pca.metadata)
        if (key == "latent_map") map_reported = true;
    CHECK(map_reported);

    fs::remove_all(cfg.out_dir);
}

TEST_CASE("pipeline failures carry the stage name and keep earlier artifacts") {
    ExperimentConfig cfg = tiny_experiment("failure");
    fs::remove_all(cfg.out_dir);
    cfg.mesh.source = "file";
    cfg.mesh.path = (cfg.out_dir / "missing_mesh.txt").generic_string();
    CHECK_THROWS_WITH_AS(run_pipeline(cfg), doctest::Contains("prepare"), std::runtime_error);
    CHECK(fs::exists(cfg.out_dir / "config.json"));  // written before the failure
    fs::remove_all(cfg.out_dir);

    // A latent size beyond what the training matrix can supply fails in the
    // projection stage of the no-encoder variant.
    ExperimentConfig wide = tiny_experiment("failure_wide");
    fs::remove_all(wide.out_dir);
    wide.stage1.d_z = 48;  // 42-node mesh: PCA can supply at most 42
    CHECK_THROWS_WITH_AS(run_ablation(wide, "transformer-only"),
                         doctest::Contains("latent-projection"), std::runtime_error);
    fs::remove_all(wide.out_dir);
}
