#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tkgcn/checkpoint.hpp"
#include "tkgcn/graph.hpp"
#include "tkgcn/spline.hpp"
#include "tkgcn/tensor.hpp"
#include "tkgcn/util.hpp"

namespace tkgcn {

struct Stage1Config {
    std::size_t d_z = 64;
    std::size_t channels = 8;  // filters per graph-convolution block
    double lambda1 = 1.0;      // weight of the latent-dynamics loss
    double lambda2 = 1e-4;     // weight of the operator-norm decay
    std::size_t delta_T = 4;   // multi-step horizon of the dynamics loss
    std::size_t epochs = 200;
    double learning_rate = 1e-3;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    // Optional early stop: once the exact reconstruction MSE over the
    // training frames drops below this, training ends. 0 disables.
    double target_recon_mse = 0.0;

    void validate() const;
};

// Graph-convolutional autoencoder with a trainable linear operator acting on
// the latent space. The encoder lifts the single-channel snapshot to
// `channels` features, applies a residual spatial block and pools twice
// (following a fixed two-stage hierarchy), mixes channels pointwise, and maps
// the flattened coarse features to a d_z latent with a linear layer. The
// decoder mirrors every stage in reverse. Latents are row vectors; the
// operator acts on the right: z(t+1) ~= z(t) * K.
class KoopmanAutoencoder {
public:
    // The hierarchy must have exactly two pooling stages (three levels).
    KoopmanAutoencoder(const GraphHierarchy& hierarchy, std::size_t d_z, std::size_t channels,
                       Rng& rng);

    Tensor encode(const Tensor& x) const;  // (N, 1) -> (d_z)
    Tensor decode(const Tensor& z) const;  // (d_z) -> (N, 1)
    // z * K^steps by repeated multiplication; steps = 0 returns z unchanged.
    // Throws std::invalid_argument for negative steps.
    Tensor advance(const Tensor& z, long long steps) const;

    Tensor& koopman() { return k_; }
    const Tensor& koopman() const { return k_; }
    std::size_t latent_dim() const { return d_z_; }
    std::size_t fine_nodes() const { return fine_nodes_; }

    std::vector<Tensor> parameters();
    NamedParams named_parameters();
    void freeze();  // clears requires_grad on every parameter

private:
    std::size_t d_z_ = 0, channels_ = 0, fine_nodes_ = 0, coarse_nodes_ = 0;
    std::vector<std::vector<std::size_t>> assignments_;
    PointwiseConv lift_;
    SpatialBlock enc_block0_, enc_block1_;
    PointwiseConv enc_pw0_, enc_pw1_;
    Tensor enc_w_, enc_b_;
    Tensor dec_w_, dec_b_;
    PointwiseConv dec_pw0_, dec_pw1_;
    SpatialBlock dec_block1_, dec_block0_;
    PointwiseConv head_;
    Tensor k_;
};

struct Stage1Losses {
    Tensor recon;  // mean over batch of ||x - decode(encode(x))||^2
    Tensor dyn;    // mean over (item, step) of ||x(t+s) - decode(z K^s)||^2
    Tensor decay;  // ||K||_F^2
    Tensor total;  // recon + lambda1 * dyn + lambda2 * decay
    std::size_t dyn_pairs = 0;  // (item, step) pairs behind `dyn`
};

// `frames` are per-time snapshots of shape (N, 1); `batch` holds frame
// indices < horizon. Items within delta_T of the horizon keep their
// reconstruction term but are left out of the dynamics term.
Stage1Losses stage1_losses(const KoopmanAutoencoder& model, const std::vector<Tensor>& frames,
                           const std::vector<std::size_t>& batch, std::size_t horizon,
                           const Stage1Config& config);

struct Stage1EpochLog {
    std::size_t epoch = 0;
    double recon = 0.0, dyn = 0.0, decay = 0.0, total = 0.0;
};

struct Stage1Result {
    KoopmanAutoencoder model;  // frozen
    Tensor latents;            // (T, d_z): the full trajectory encoded
    std::vector<Stage1EpochLog> log;
    double train_recon_mse = 0.0;  // exact per-node MSE at the final parameters
    std::size_t epochs_run = 0;
};

// Minimizes the stage-1 loss with Adam over shuffled mini-batches of the
// first `train_count` frames, then freezes the model and encodes every frame.
// Throws std::runtime_error with epoch/step context if the loss turns
// non-finite.
Stage1Result train_stage1(const std::vector<Tensor>& frames, std::size_t train_count,
                          const GraphHierarchy& hierarchy, const Stage1Config& config);

// Exact mean over frames [begin, end) and nodes of the squared
// reconstruction error; runs without gradient recording.
double reconstruction_mse(const KoopmanAutoencoder& model, const std::vector<Tensor>& frames,
                          std::size_t begin, std::size_t end);

// Latent trajectories travel in the same container as simulator output, with
// one pseudo-node and d_z features per step.
void save_latents(const std::filesystem::path& path, const Tensor& latents);
Tensor load_latents(const std::filesystem::path& path);

// CSV log: epoch,recon,dyn,decay,total.
void save_stage1_log_csv(const std::filesystem::path& path,
                         const std::vector<Stage1EpochLog>& log);

}  // namespace tkgcn
