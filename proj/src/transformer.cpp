#include "tkgcn/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tkgcn/adam.hpp"
#include "tkgcn/ops.hpp"
#include "tkgcn/tape.hpp"

namespace tkgcn {

namespace {

// Causal mask pair for an L-row window: keep(i, j) = 1 for j <= i (a row may
// read itself and the past), and add(i, j) carries the mask constant on the
// blocked entries so softmax sends their weight to zero.
std::pair<Tensor, Tensor> build_masks(std::size_t rows, double mask_constant) {
    Tensor keep = Tensor::zeros({rows, rows});
    Tensor addc = Tensor::zeros({rows, rows});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < rows; ++j) {
            if (j <= i)
                keep.at(i, j) = 1.0;
            else
                addc.at(i, j) = mask_constant;
        }
    return {keep, addc};
}

}  // namespace

void TransformerConfig::validate() const {
    if (window < 2) throw std::invalid_argument("transformer: window must be >= 2");
    if (heads == 0 || d_z == 0 || layers == 0)
        throw std::invalid_argument("transformer: heads, layers, and width must be positive");
    if (d_z % heads != 0)
        throw std::invalid_argument("transformer: width " + std::to_string(d_z) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    if (mask_constant >= 0.0)
        throw std::invalid_argument("transformer: mask constant must be strongly negative");
    if (learning_rate <= 0.0) throw std::invalid_argument("transformer: learning rate must be positive");
    if (lr_decay <= 0.0 || lr_decay > 1.0)
        throw std::invalid_argument("transformer: learning-rate decay must be in (0, 1]");
    if (batch_size == 0) throw std::invalid_argument("transformer: batch size must be positive");
}

Tensor positional_encoding(const std::vector<std::size_t>& positions, std::size_t d_z) {
    if (d_z == 0) throw std::invalid_argument("positional_encoding: width must be positive");
    Tensor out = Tensor::zeros({positions.size(), d_z});
    for (std::size_t r = 0; r < positions.size(); ++r) {
        const double t = static_cast<double>(positions[r]);
        for (std::size_t i = 0; 2 * i < d_z; ++i) {
            const double rate =
                std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_z));
            out.at(r, 2 * i) = std::sin(t / rate);
            if (2 * i + 1 < d_z) out.at(r, 2 * i + 1) = std::cos(t / rate);
        }
    }
    return out;
}

DecoderBlock::DecoderBlock(const TransformerConfig& config, Rng& rng)
    : d_z_(config.d_z), heads_(config.heads), d_k_(config.head_dim()), d_ff_(config.ff_dim()) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d_z_));
    wq_ = Tensor::uniform(rng, -s, s, {d_z_, d_z_}, true);
    wk_ = Tensor::uniform(rng, -s, s, {d_z_, d_z_}, true);
    wv_ = Tensor::uniform(rng, -s, s, {d_z_, d_z_}, true);
    wo_ = Tensor::uniform(rng, -s, s, {d_z_, d_z_}, true);
    ff_w1_ = Tensor::uniform(rng, -s, s, {d_z_, d_ff_}, true);
    ff_b1_ = Tensor::zeros({d_ff_}, true);
    const double s2 = 1.0 / std::sqrt(static_cast<double>(d_ff_));
    ff_w2_ = Tensor::uniform(rng, -s2, s2, {d_ff_, d_z_}, true);
    ff_b2_ = Tensor::zeros({d_z_}, true);
    ln1_gain_ = Tensor::full({d_z_}, 1.0, true);
    ln1_bias_ = Tensor::zeros({d_z_}, true);
    ln2_gain_ = Tensor::full({d_z_}, 1.0, true);
    ln2_bias_ = Tensor::zeros({d_z_}, true);
}

Tensor DecoderBlock::head_attention(const Tensor& y, std::size_t head, const Tensor& mask_keep,
                                    const Tensor& mask_add) const {
    if (head >= heads_) throw std::invalid_argument("head index out of range");
    const std::size_t lo = head * d_k_, hi = lo + d_k_;
    Tensor q = slice(matmul(y, wq_), 1, lo, hi);
    Tensor k = slice(matmul(y, wk_), 1, lo, hi);
    Tensor v = slice(matmul(y, wv_), 1, lo, hi);
    Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d_k_)));
    Tensor weights = softmax(add(mul(scores, mask_keep), mask_add));
    return matmul(weights, v);
}

Tensor DecoderBlock::multi_head(const Tensor& y, const Tensor& mask_keep,
                                const Tensor& mask_add) const {
    std::vector<Tensor> heads;
    heads.reserve(heads_);
    for (std::size_t h = 0; h < heads_; ++h)
        heads.push_back(head_attention(y, h, mask_keep, mask_add));
    return matmul(concat(heads, 1), wo_);
}

Tensor DecoderBlock::forward(const Tensor& y, const Tensor& mask_keep,
                             const Tensor& mask_add) const {
    Tensor mid = layer_norm(add(y, multi_head(y, mask_keep, mask_add)), ln1_gain_, ln1_bias_);
    Tensor ff = add(matmul(relu(add(matmul(mid, ff_w1_), ff_b1_)), ff_w2_), ff_b2_);
    return layer_norm(add(mid, ff), ln2_gain_, ln2_bias_);
}

std::vector<Tensor> DecoderBlock::parameters() {
    return {wq_,    wk_,    wv_,    wo_,       ff_w1_,    ff_b1_,    ff_w2_,
            ff_b2_, ln1_gain_, ln1_bias_, ln2_gain_, ln2_bias_};
}

void DecoderBlock::collect_parameters(const std::string& prefix, NamedParams& out) {
    out.emplace_back(prefix + ".attn.q", wq_);
    out.emplace_back(prefix + ".attn.k", wk_);
    out.emplace_back(prefix + ".attn.v", wv_);
    out.emplace_back(prefix + ".attn.out", wo_);
    out.emplace_back(prefix + ".ffn.w1", ff_w1_);
    out.emplace_back(prefix + ".ffn.b1", ff_b1_);
    out.emplace_back(prefix + ".ffn.w2", ff_w2_);
    out.emplace_back(prefix + ".ffn.b2", ff_b2_);
    out.emplace_back(prefix + ".ln1.gain", ln1_gain_);
    out.emplace_back(prefix + ".ln1.bias", ln1_bias_);
    out.emplace_back(prefix + ".ln2.gain", ln2_gain_);
    out.emplace_back(prefix + ".ln2.bias", ln2_bias_);
}

LatentTransformer::LatentTransformer(const TransformerConfig& config, Rng& rng)
    : config_(config) {
    config_.validate();
    // Identity start: before training the stack nudges latents rather than
    // scrambling them, which keeps early rollouts finite.
    in_w_ = Tensor::identity(config_.d_z, true);
    in_b_ = Tensor::zeros({config_.d_z}, true);
    blocks_.reserve(config_.layers);
    for (std::size_t i = 0; i < config_.layers; ++i) blocks_.emplace_back(config_, rng);
    auto masks = build_masks(config_.window, config_.mask_constant);
    mask_keep_ = masks.first;
    mask_add_ = masks.second;
}

Tensor LatentTransformer::forward(const Tensor& window, std::size_t first_position) const {
    if (window.rank() != 2 || window.dim(0) != config_.window || window.dim(1) != config_.d_z)
        throw std::invalid_argument("transformer: expected a (" + std::to_string(config_.window) +
                                    ", " + std::to_string(config_.d_z) + ") window, got " +
                                    shape_str(window.shape()));
    std::vector<std::size_t> positions(config_.window);
    std::iota(positions.begin(), positions.end(), first_position);
    Tensor y = add(add(matmul(window, in_w_), in_b_),
                   positional_encoding(positions, config_.d_z));
    for (const DecoderBlock& block : blocks_) y = block.forward(y, mask_keep_, mask_add_);
    return y;
}

std::vector<Tensor> LatentTransformer::parameters() {
    std::vector<Tensor> out = {in_w_, in_b_};
    for (DecoderBlock& b : blocks_) {
        auto p = b.parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

NamedParams LatentTransformer::named_parameters() {
    NamedParams out;
    out.emplace_back("input.weight", in_w_);
    out.emplace_back("input.bias", in_b_);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].collect_parameters("block" + std::to_string(i), out);
    return out;
}

void LatentTransformer::freeze() {
    for (Tensor& p : parameters()) {
        p.drop_grad();
        p.set_requires_grad(false);
    }
}

namespace {

Tensor window_rows(const Tensor& latents, std::size_t begin, std::size_t count) {
    return slice(latents, 0, begin, begin + count);
}

double window_loss_value(const LatentTransformer& model, const Tensor& latents, std::size_t j) {
    const std::size_t l = model.config().window;
    Tensor out = model.forward(window_rows(latents, j, l), j);
    Tensor target = window_rows(latents, j + 1, l);
    return sum_sq(sub(out, target)).item() / static_cast<double>(l * model.config().d_z);
}

}  // namespace

double stage2_loss(const LatentTransformer& model, const Tensor& latents) {
    const std::size_t l = model.config().window;
    if (latents.rank() != 2 || latents.dim(1) != model.config().d_z)
        throw std::invalid_argument("stage 2: latents must be (T, d_z)");
    if (latents.dim(0) < l + 1)
        throw std::invalid_argument("stage 2: trajectory shorter than one window plus target");
    const std::size_t windows = latents.dim(0) - l;
    double total = 0.0;
    for (std::size_t j = 0; j < windows; ++j) total += window_loss_value(model, latents, j);
    return total / static_cast<double>(windows);
}

Stage2Result train_stage2(const Tensor& latents, const TransformerConfig& config) {
    config.validate();
    if (latents.rank() != 2 || latents.dim(1) != config.d_z)
        throw std::invalid_argument("stage 2: latents must be (T, d_z)");
    if (latents.dim(0) < config.window + 1)
        throw std::invalid_argument("stage 2: need at least window + 1 latent rows, got " +
                                    std::to_string(latents.dim(0)));

    Rng init_rng(derive_seed(config.seed, "stage2/init"));
    LatentTransformer model(config, init_rng);
    std::vector<Tensor> params = model.parameters();
    AdamConfig adam;
    adam.learning_rate = config.learning_rate;
    Adam opt(params, adam);

    const std::size_t l = config.window;
    const std::size_t windows = latents.dim(0) - l;
    const double inv_elems = 1.0 / static_cast<double>(l * config.d_z);
    std::vector<std::size_t> order(windows);
    std::iota(order.begin(), order.end(), 0);

    std::vector<Stage2EpochLog> log;
    log.push_back({0, stage2_loss(model, latents)});
    std::size_t epochs_run = 0;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        if (config.lr_decay != 1.0)
            opt.set_learning_rate(config.learning_rate *
                                  std::pow(config.lr_decay, static_cast<double>(epoch - 1)));
        Rng epoch_rng(derive_seed(config.seed, "stage2/epoch/" + std::to_string(epoch)));
        std::shuffle(order.begin(), order.end(), epoch_rng);

        double loss_sum = 0.0;
        std::size_t seen = 0, step = 0;
        for (std::size_t start = 0; start < windows; start += config.batch_size, ++step) {
            const std::size_t stop = std::min(windows, start + config.batch_size);
            try {
                Tape tape;
                std::vector<Tensor> terms;
                terms.reserve(stop - start);
                for (std::size_t b = start; b < stop; ++b) {
                    const std::size_t j = order[b];
                    Tensor out = model.forward(window_rows(latents, j, l), j);
                    Tensor target = window_rows(latents, j + 1, l);
                    terms.push_back(scale(sum_sq(sub(out, target)), inv_elems));
                }
                Tensor batch_loss = terms.front();
                for (std::size_t i = 1; i < terms.size(); ++i)
                    batch_loss = add(batch_loss, terms[i]);
                batch_loss = scale(batch_loss, 1.0 / static_cast<double>(terms.size()));
                tape.backward(batch_loss);
                opt.step();
                loss_sum += batch_loss.item() * static_cast<double>(stop - start);
                seen += stop - start;
            } catch (const std::runtime_error& e) {
                std::ostringstream msg;
                msg << "stage-2 training aborted at epoch " << epoch << ", step " << step << ": "
                    << e.what();
                throw std::runtime_error(msg.str());
            }
        }

        log.push_back({epoch, loss_sum / static_cast<double>(seen)});
        epochs_run = epoch;
        if (config.target_loss > 0.0 && log.back().loss < config.target_loss &&
            stage2_loss(model, latents) < config.target_loss)
            break;
    }

    model.freeze();
    Stage2Result result{std::move(model), std::move(log), 0.0, epochs_run};
    result.final_loss = stage2_loss(result.model, latents);
    return result;
}

Tensor rollout(const LatentTransformer& model, const Tensor& seed_window,
               std::size_t first_position, long long horizon) {
    if (horizon <= 0)
        throw std::invalid_argument("rollout: horizon must be positive, got " +
                                    std::to_string(horizon));
    const std::size_t l = model.config().window;
    const std::size_t d = model.config().d_z;
    if (seed_window.rank() != 2 || seed_window.dim(0) != l || seed_window.dim(1) != d)
        throw std::invalid_argument("rollout: seed window must be (" + std::to_string(l) + ", " +
                                    std::to_string(d) + "), got " +
                                    shape_str(seed_window.shape()));

    Tensor window = seed_window.detached_copy();
    Tensor out = Tensor::zeros({static_cast<std::size_t>(horizon), d});
    std::size_t pos = first_position;
    for (long long step = 0; step < horizon; ++step) {
        Tensor pred = model.forward(window, pos);
        // Slide: drop the oldest row, append the newest prediction.
        auto& wv = window.values();
        std::copy(wv.begin() + static_cast<std::ptrdiff_t>(d), wv.end(), wv.begin());
        const auto& pv = pred.values();
        for (std::size_t f = 0; f < d; ++f) {
            const double v = pv[(l - 1) * d + f];
            wv[(l - 1) * d + f] = v;
            out.values()[static_cast<std::size_t>(step) * d + f] = v;
        }
        ++pos;
    }
    return out;
}

Tensor forecast_states(const KoopmanAutoencoder& autoencoder, const Tensor& latents) {
    if (latents.rank() != 2 || latents.dim(1) != autoencoder.latent_dim())
        throw std::invalid_argument("forecast_states: latents must be (tau, " +
                                    std::to_string(autoencoder.latent_dim()) + "), got " +
                                    shape_str(latents.shape()));
    const std::size_t tau = latents.dim(0);
    const std::size_t n = autoencoder.fine_nodes();
    const std::size_t d = latents.dim(1);
    Tensor out = Tensor::zeros({tau, n});
    for (std::size_t t = 0; t < tau; ++t) {
        std::vector<double> row(d);
        for (std::size_t f = 0; f < d; ++f) row[f] = latents(t, f);
        Tensor x = autoencoder.decode(Tensor::from_data({d}, std::move(row)));
        for (std::size_t i = 0; i < n; ++i) out.at(t, i) = x.values()[i];
    }
    return out;
}

void save_stage2_log_csv(const std::filesystem::path& path,
                         const std::vector<Stage2EpochLog>& log) {
    std::string csv = "epoch,loss\n";
    for (const auto& e : log) {
        csv += std::to_string(e.epoch);
        csv += ',';
        csv += format_double(e.loss);
        csv += '\n';
    }
    atomic_write_file(path, csv);
}

}  // namespace tkgcn
