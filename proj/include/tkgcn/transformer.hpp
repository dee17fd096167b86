#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tkgcn/checkpoint.hpp"
#include "tkgcn/koopman.hpp"
#include "tkgcn/tensor.hpp"
#include "tkgcn/util.hpp"

namespace tkgcn {

struct TransformerConfig {
    std::size_t window = 128;  // L, rows per training window
    std::size_t heads = 4;
    std::size_t layers = 2;
    std::size_t d_z = 64;
    std::size_t d_ff = 0;          // 0 picks 4 * d_z
    double mask_constant = -1e9;   // added to blocked attention scores
    double learning_rate = 1e-3;
    double lr_decay = 1.0;  // per-epoch multiplicative decay
    std::size_t epochs = 100;
    std::size_t batch_size = 8;  // windows per optimizer step
    std::uint64_t seed = 0;
    // Optional early stop on the exact full-split loss. 0 disables.
    double target_loss = 0.0;

    std::size_t ff_dim() const { return d_ff == 0 ? 4 * d_z : d_ff; }
    std::size_t head_dim() const { return d_z / heads; }
    void validate() const;
};

// Sine/cosine table over absolute time indices: row r describes positions[r],
// with PE(t, 2i) = sin(t / 10000^(2i/d)) and PE(t, 2i+1) the matching cosine.
Tensor positional_encoding(const std::vector<std::size_t>& positions, std::size_t d_z);

// One decoder layer: masked multi-head self-attention and a two-layer ReLU
// feed-forward, each wrapped in residual + layer normalization. Rows may only
// read rows at or before themselves; blocked score entries receive the large
// negative mask constant before the softmax.
class DecoderBlock {
public:
    DecoderBlock(const TransformerConfig& config, Rng& rng);

    // y is (L, d_z); mask_keep/mask_add are the (L, L) causal mask and its
    // additive complement, shared across blocks by the owning model.
    Tensor forward(const Tensor& y, const Tensor& mask_keep, const Tensor& mask_add) const;

    // Single head h of the masked attention, an (L, d_z/H) matrix. Exposed so
    // the head split/merge algebra stays directly testable.
    Tensor head_attention(const Tensor& y, std::size_t head, const Tensor& mask_keep,
                          const Tensor& mask_add) const;

    // Heads concatenated and mixed by the output projection.
    Tensor multi_head(const Tensor& y, const Tensor& mask_keep, const Tensor& mask_add) const;

    std::vector<Tensor> parameters();
    void collect_parameters(const std::string& prefix, NamedParams& out);

    Tensor& output_projection() { return wo_; }

private:
    std::size_t d_z_ = 0, heads_ = 0, d_k_ = 0, d_ff_ = 0;
    Tensor wq_, wk_, wv_, wo_;
    Tensor ff_w1_, ff_b1_, ff_w2_, ff_b2_;
    Tensor ln1_gain_, ln1_bias_, ln2_gain_, ln2_bias_;
};

// Causal decoder stack over latent windows. The input projection is an
// identity-initialized affine map applied before the positional table is
// added; every block preserves (L, d_z).
class LatentTransformer {
public:
    LatentTransformer(const TransformerConfig& config, Rng& rng);

    // window is (L, d_z); first_position is the absolute trajectory index of
    // row 0, anchoring the positional encoding.
    Tensor forward(const Tensor& window, std::size_t first_position) const;

    const TransformerConfig& config() const { return config_; }
    DecoderBlock& block(std::size_t i) { return blocks_.at(i); }

    std::vector<Tensor> parameters();
    NamedParams named_parameters();
    void freeze();

private:
    TransformerConfig config_;
    Tensor in_w_, in_b_;
    std::vector<DecoderBlock> blocks_;
    Tensor mask_keep_, mask_add_;
};

struct Stage2EpochLog {
    std::size_t epoch = 0;  // 0 logs the untrained model
    double loss = 0.0;
};

struct Stage2Result {
    LatentTransformer model;  // frozen
    std::vector<Stage2EpochLog> log;
    double final_loss = 0.0;  // exact full-split loss at the final parameters
    std::size_t epochs_run = 0;
};

// Mean over all windows (stride 1) of the per-element squared error between
// the model output and the one-step-shifted window. Runs without recording.
double stage2_loss(const LatentTransformer& model, const Tensor& latents);

// Teacher-forced training on a latent trajectory (training split only):
// window j is matched against rows j+1 .. j+L. log[0] holds the untrained
// loss. Throws std::runtime_error with epoch/step context on non-finite loss.
Stage2Result train_stage2(const Tensor& latents, const TransformerConfig& config);

// Autoregressive continuation: repeatedly run the model on the current
// window, append the last output row, drop the oldest. seed_window is
// (L, d_z) of true history whose first row sits at absolute index
// first_position. Returns (horizon, d_z). Throws for horizon <= 0.
Tensor rollout(const LatentTransformer& model, const Tensor& seed_window,
               std::size_t first_position, long long horizon);

// Decode each predicted latent row back to a mesh snapshot; (tau, d_z) ->
// (tau, N).
Tensor forecast_states(const KoopmanAutoencoder& autoencoder, const Tensor& latents);

// CSV log: epoch,loss.
void save_stage2_log_csv(const std::filesystem::path& path,
                         const std::vector<Stage2EpochLog>& log);

}  // namespace tkgcn
