#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "helpers.hpp"
#include "tkgcn/ap.hpp"
#include "tkgcn/graph.hpp"
#include "tkgcn/koopman.hpp"
#include "tkgcn/mesh.hpp"
#include "tkgcn/ops.hpp"
#include "tkgcn/tape.hpp"

using namespace tkgcn;

namespace {

GraphHierarchy small_hierarchy() {
    return build_hierarchy(build_graph(synth_mesh(MeshKind::Sphere, 0)), 2, 42);
}

KoopmanAutoencoder small_model(std::size_t d_z = 4, std::size_t channels = 2,
                               std::uint64_t seed = 7) {
    Rng rng(seed);
    return KoopmanAutoencoder(small_hierarchy(), d_z, channels, rng);
}

std::vector<Tensor> frames_of(const TrajectoryDataset& data) {
    std::vector<Tensor> frames;
    frames.reserve(data.frames);
    for (std::size_t t = 0; t < data.frames; ++t)
        frames.push_back(Tensor::from_data({data.nodes, 1}, data.snapshot(t)));
    return frames;
}

// Small paced trajectory on the 42-node sphere; slow-variable timescale
// shortened via substeps so a short clip holds a full wave.
std::vector<Tensor> wave_frames(std::size_t frames_wanted) {
    MeshGraph g = build_graph(synth_mesh(MeshKind::Sphere, 1));
    APParams params;
    params.D = 0.2;
    StimulusProtocol protocol = make_protocol(ProtocolId::I, g, {});
    SimOptions opts;
    opts.substeps = 40;
    TrajectoryDataset data = simulate(g, protocol, params, frames_wanted, opts);
    return frames_of(data);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Median over t of ||z(t+1) - z(t) K|| / ||z(t+1)|| from a latent matrix.
double linearity_residual(const Tensor& latents, const Tensor& k) {
    const std::size_t t_count = latents.dim(0);
    const std::size_t d = latents.dim(1);
    std::vector<double> ratios;
    for (std::size_t t = 0; t + 1 < t_count; ++t) {
        std::vector<double> row(d), next(d);
        for (std::size_t f = 0; f < d; ++f) {
            row[f] = latents(t, f);
            next[f] = latents(t + 1, f);
        }
        double err = 0.0, norm = 0.0;
        for (std::size_t f = 0; f < d; ++f) {
            double pred = 0.0;
            for (std::size_t e = 0; e < d; ++e) pred += row[e] * k(e, f);
            err += (next[f] - pred) * (next[f] - pred);
            norm += next[f] * next[f];
        }
        if (norm > 0.0) ratios.push_back(std::sqrt(err) / std::sqrt(norm));
    }
    return median(ratios);
}

}  // namespace

TEST_CASE("encode and decode have the contracted shapes and are deterministic") {
    KoopmanAutoencoder model = small_model();
    Rng rng(1);
    Tensor x = Tensor::uniform(rng, 0.0, 1.0, {model.fine_nodes(), 1});

    Tensor z1 = model.encode(x);
    Tensor z2 = model.encode(x);
    REQUIRE(z1.shape() == Shape{4});
    for (std::size_t i = 0; i < 4; ++i) CHECK(z1.values()[i] == z2.values()[i]);

    Tensor xhat = model.decode(z1);
    REQUIRE(xhat.shape() == Shape{model.fine_nodes(), 1});
    Tensor xhat2 = model.decode(z1);
    for (std::size_t i = 0; i < xhat.size(); ++i) CHECK(xhat.values()[i] == xhat2.values()[i]);
}

TEST_CASE("round trip decode(encode(x)) keeps the snapshot shape across configs") {
    for (std::size_t d_z : {2, 4, 7}) {
        KoopmanAutoencoder model = small_model(d_z, 3);
        Tensor x = Tensor::full({model.fine_nodes(), 1}, 0.25);
        CHECK(model.decode(model.encode(x)).shape() == x.shape());
    }
}

TEST_CASE("latent advance matches an explicit multiplication loop") {
    KoopmanAutoencoder model = small_model();
    Rng rng(3);
    Tensor z = Tensor::uniform(rng, -1.0, 1.0, {4});

    Tensor same = model.advance(z, 0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(same.values()[i] == z.values()[i]);

    // Identity operator: advancing any number of steps is a no-op.
    KoopmanAutoencoder ident = small_model();
    std::fill(ident.koopman().values().begin(), ident.koopman().values().end(), 0.0);
    for (std::size_t i = 0; i < 4; ++i) ident.koopman().at(i, i) = 1.0;
    Tensor z5 = ident.advance(z, 5);
    for (std::size_t i = 0; i < 4; ++i) CHECK(z5.values()[i] == doctest::Approx(z.values()[i]).epsilon(1e-15));

    // Three steps versus looping the single-step product by hand.
    Tensor expected = z;
    for (int s = 0; s < 3; ++s) expected = matmul(expected, model.koopman());
    Tensor got = model.advance(z, 3);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(got.values()[i] == doctest::Approx(expected.values()[i]).epsilon(1e-14));

    CHECK_THROWS_AS(model.advance(z, -1), std::invalid_argument);
}

TEST_CASE("loss terms decompose exactly and honor the weights") {
    KoopmanAutoencoder model = small_model();
    std::vector<Tensor> frames;
    Rng rng(5);
    for (int t = 0; t < 8; ++t)
        frames.push_back(Tensor::uniform(rng, 0.0, 1.0, {model.fine_nodes(), 1}));

    Stage1Config cfg;
    cfg.d_z = 4;
    cfg.delta_T = 2;
    cfg.lambda1 = 0.7;
    cfg.lambda2 = 0.01;
    Stage1Losses losses = stage1_losses(model, frames, {0, 3, 5}, frames.size(), cfg);

    CHECK(losses.dyn_pairs == 6);
    const double recombined =
        losses.recon.item() + cfg.lambda1 * losses.dyn.item() + cfg.lambda2 * losses.decay.item();
    CHECK(losses.total.item() == doctest::Approx(recombined).epsilon(1e-15));

    // Zero operator: the decay term vanishes identically.
    std::fill(model.koopman().values().begin(), model.koopman().values().end(), 0.0);
    Stage1Losses zero_k = stage1_losses(model, frames, {0}, frames.size(), cfg);
    CHECK(zero_k.decay.item() == 0.0);
}

TEST_CASE("static trajectory with identity operator makes dynamics equal reconstruction") {
    // With x(t) constant and K = I, every dynamics residual is the plain
    // reconstruction residual, so the two terms agree exactly; a perfect
    // reconstruction would therefore zero both.
    KoopmanAutoencoder model = small_model();
    auto& kv = model.koopman().values();
    std::fill(kv.begin(), kv.end(), 0.0);
    for (std::size_t i = 0; i < 4; ++i) model.koopman().at(i, i) = 1.0;

    Tensor xbar = Tensor::full({model.fine_nodes(), 1}, 0.4);
    std::vector<Tensor> frames(10, xbar);
    Stage1Config cfg;
    cfg.d_z = 4;
    cfg.delta_T = 3;
    Stage1Losses losses = stage1_losses(model, frames, {0, 2, 4}, frames.size(), cfg);
    CHECK(losses.dyn.item() == doctest::Approx(losses.recon.item()).epsilon(1e-14));
}

TEST_CASE("items too close to the end keep reconstruction but drop dynamics") {
    KoopmanAutoencoder model = small_model();
    Tensor x = Tensor::full({model.fine_nodes(), 1}, 0.1);
    std::vector<Tensor> frames(10, x);
    Stage1Config cfg;
    cfg.d_z = 4;
    cfg.delta_T = 4;

    Stage1Losses ok = stage1_losses(model, frames, {5}, frames.size(), cfg);
    CHECK(ok.dyn_pairs == 4);

    Stage1Losses skipped = stage1_losses(model, frames, {6}, frames.size(), cfg);
    CHECK(skipped.dyn_pairs == 0);
    CHECK(skipped.dyn.item() == 0.0);
    CHECK(skipped.recon.item() > 0.0);

    CHECK_THROWS_AS(stage1_losses(model, frames, {10}, frames.size(), cfg),
                    std::invalid_argument);
    CHECK_THROWS_AS(stage1_losses(model, frames, {}, frames.size(), cfg), std::invalid_argument);
}

TEST_CASE("operator gradient of the total loss matches finite differences") {
    KoopmanAutoencoder model = small_model();
    std::vector<Tensor> frames;
    Rng rng(11);
    for (int t = 0; t < 6; ++t)
        frames.push_back(Tensor::uniform(rng, 0.0, 1.0, {model.fine_nodes(), 1}));
    Stage1Config cfg;
    cfg.d_z = 4;
    cfg.delta_T = 2;

    auto report = testing::fd_check({model.koopman()}, [&] {
        return stage1_losses(model, frames, {0, 2}, frames.size(), cfg).total;
    });
    CHECK(report.checked == 16);
    CHECK(report.max_rel < 1e-6);
}

TEST_CASE("with the dynamics weight at zero the operator grad is pure decay") {
    KoopmanAutoencoder model = small_model();
    std::vector<Tensor> frames;
    Rng rng(13);
    for (int t = 0; t < 6; ++t)
        frames.push_back(Tensor::uniform(rng, 0.0, 1.0, {model.fine_nodes(), 1}));
    Stage1Config cfg;
    cfg.d_z = 4;
    cfg.delta_T = 2;
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 1e-4;

    Tensor k = model.koopman();
    {
        Tape tape;
        Stage1Losses losses = stage1_losses(model, frames, {0, 1}, frames.size(), cfg);
        CHECK(losses.dyn.item() > 0.0);  // still reported
        tape.backward(losses.total);
    }
    REQUIRE(k.has_grad());
    for (std::size_t i = 0; i < k.size(); ++i)
        CHECK(k.grad()[i] == cfg.lambda2 * (2.0 * k.values()[i]));
}

TEST_CASE("training drives the loss down and emits frozen model plus latents") {
    std::vector<Tensor> frames = wave_frames(120);
    GraphHierarchy hierarchy = build_hierarchy(build_graph(synth_mesh(MeshKind::Sphere, 1)), 2, 9);

    Stage1Config cfg;
    cfg.d_z = 8;
    cfg.channels = 4;
    cfg.delta_T = 2;
    cfg.epochs = 12;
    cfg.batch_size = 16;
    cfg.seed = 21;
    Stage1Result result = train_stage1(frames, 100, hierarchy, cfg);

    REQUIRE(result.log.size() == 12);
    CHECK(result.epochs_run == 12);
    // Epoch averages may wobble, but never by more than 5% upward.
    for (std::size_t e = 1; e < result.log.size(); ++e)
        CHECK(result.log[e].total <= result.log[e - 1].total * 1.05);
    CHECK(result.log.back().total < result.log.front().total);
    CHECK(result.train_recon_mse < result.log.front().recon);

    // Latents cover the whole trajectory and match a fresh encode bit for bit.
    REQUIRE(result.latents.shape() == Shape{120, 8});
    Tensor z40 = result.model.encode(frames[40]);
    for (std::size_t f = 0; f < 8; ++f) CHECK(result.latents(40, f) == z40.values()[f]);

    // Frozen: no parameter wants gradients, and a taped encode records nothing.
    for (Tensor& p : result.model.parameters()) CHECK(!p.requires_grad());
    {
        Tape tape;
        Tensor z = result.model.encode(frames[0]);
        auto report = tape.backward(sum_sq(z));
        CHECK(report.detached);
    }
}

TEST_CASE("training is reproducible seed for seed") {
    std::vector<Tensor> frames = wave_frames(60);
    GraphHierarchy hierarchy = build_hierarchy(build_graph(synth_mesh(MeshKind::Sphere, 1)), 2, 9);
    Stage1Config cfg;
    cfg.d_z = 6;
    cfg.channels = 3;
    cfg.delta_T = 2;
    cfg.epochs = 3;
    cfg.seed = 33;

    Stage1Result a = train_stage1(frames, 50, hierarchy, cfg);
    Stage1Result b = train_stage1(frames, 50, hierarchy, cfg);
    REQUIRE(a.latents.size() == b.latents.size());
    for (std::size_t i = 0; i < a.latents.size(); ++i)
        CHECK(a.latents.values()[i] == b.latents.values()[i]);
    CHECK(a.train_recon_mse == b.train_recon_mse);

    cfg.seed = 34;
    Stage1Result c = train_stage1(frames, 50, hierarchy, cfg);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.latents.size() && !any_diff; ++i)
        any_diff = a.latents.values()[i] != c.latents.values()[i];
    CHECK(any_diff);
}

TEST_CASE("early stop ends training once the reconstruction target is met") {
    std::vector<Tensor> frames = wave_frames(40);
    GraphHierarchy hierarchy = build_hierarchy(build_graph(synth_mesh(MeshKind::Sphere, 1)), 2, 9);
    Stage1Config cfg;
    cfg.d_z = 6;
    cfg.channels = 3;
    cfg.delta_T = 1;
    cfg.epochs = 50;
    cfg.seed = 5;
    cfg.target_recon_mse = 10.0;  // trivially satisfied
    Stage1Result result = train_stage1(frames, 30, hierarchy, cfg);
    CHECK(result.epochs_run == 1);
    CHECK(result.train_recon_mse < 10.0);
}

TEST_CASE("dynamics weight shrinks the one-step latent linearity residual") {
    std::vector<Tensor> frames = wave_frames(120);
    GraphHierarchy hierarchy = build_hierarchy(build_graph(synth_mesh(MeshKind::Sphere, 1)), 2, 9);

    Stage1Config cfg;
    cfg.d_z = 8;
    cfg.channels = 4;
    cfg.delta_T = 2;
    cfg.epochs = 20;
    cfg.batch_size = 16;
    cfg.seed = 21;

    Stage1Config plain = cfg;
    plain.lambda1 = 0.0;

    Stage1Result with_dyn = train_stage1(frames, 100, hierarchy, cfg);
    Stage1Result without = train_stage1(frames, 100, hierarchy, plain);

    const double r_with = linearity_residual(with_dyn.latents, with_dyn.model.koopman());
    const double r_without = linearity_residual(without.latents, without.model.koopman());
    CHECK(r_with < r_without);
}

TEST_CASE("checkpoint round trip restores the exact forward pass") {
    KoopmanAutoencoder model = small_model(4, 2, 17);
    NamedParams named = model.named_parameters();
    CHECK(named.size() == model.parameters().size());

    const auto path = std::filesystem::temp_directory_path() / "tkgcn_koopman_ckpt.bin";
    save_checkpoint(path, named);

    KoopmanAutoencoder other = small_model(4, 2, 99);  // different init
    Rng rng(1);
    Tensor x = Tensor::uniform(rng, 0.0, 1.0, {model.fine_nodes(), 1});
    Tensor before = other.encode(x);
    NamedParams target = other.named_parameters();
    load_checkpoint(path, target);
    Tensor after = other.encode(x);

    Tensor reference = model.encode(x);
    bool same_as_before = true;
    for (std::size_t i = 0; i < 4; ++i) {
        if (after.values()[i] != before.values()[i]) same_as_before = false;
        CHECK(after.values()[i] == reference.values()[i]);
    }
    CHECK(!same_as_before);
    std::filesystem::remove(path);
}

TEST_CASE("latent container round trips through the trajectory format") {
    Rng rng(23);
    Tensor latents = Tensor::uniform(rng, -2.0, 2.0, {15, 6});
    const auto path = std::filesystem::temp_directory_path() / "tkgcn_latents.stdf";
    save_latents(path, latents);
    Tensor back = load_latents(path);
    REQUIRE(back.shape() == latents.shape());
    for (std::size_t i = 0; i < latents.size(); ++i)
        CHECK(back.values()[i] == latents.values()[i]);
    std::filesystem::remove(path);
}

TEST_CASE("construction and configuration errors") {
    Rng rng(1);
    GraphHierarchy shallow = build_hierarchy(build_graph(synth_mesh(MeshKind::Sphere, 0)), 1, 42);
    CHECK_THROWS_AS(KoopmanAutoencoder(shallow, 4, 2, rng), std::invalid_argument);

    KoopmanAutoencoder model = small_model();
    CHECK_THROWS_AS(model.encode(Tensor::zeros({5, 1})), std::invalid_argument);
    CHECK_THROWS_AS(model.encode(Tensor::zeros({model.fine_nodes()})), std::invalid_argument);
    CHECK_THROWS_AS(model.decode(Tensor::zeros({5})), std::invalid_argument);

    Stage1Config bad;
    bad.d_z = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = Stage1Config{};
    bad.delta_T = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = Stage1Config{};
    bad.lambda1 = -0.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
