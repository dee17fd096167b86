#include "tkgcn/koopman.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tkgcn/adam.hpp"
#include "tkgcn/ops.hpp"
#include "tkgcn/stdf.hpp"
#include "tkgcn/tape.hpp"

namespace tkgcn {

namespace {

std::size_t checked_latent_dim(const GraphHierarchy& hierarchy, std::size_t d_z) {
    if (hierarchy.levels.size() != 3 || hierarchy.assignments.size() != 2)
        throw std::invalid_argument("autoencoder expects a two-stage pooling hierarchy, got " +
                                    std::to_string(hierarchy.levels.size()) + " levels");
    if (d_z == 0) throw std::invalid_argument("latent dimension must be positive");
    return d_z;
}

Tensor sum_terms(std::vector<Tensor>& terms) {
    Tensor acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return acc;
}

}  // namespace

void Stage1Config::validate() const {
    if (d_z == 0) throw std::invalid_argument("stage 1: latent dimension must be positive");
    if (channels == 0) throw std::invalid_argument("stage 1: channel count must be positive");
    if (delta_T < 1) throw std::invalid_argument("stage 1: dynamics horizon must be >= 1");
    if (lambda1 < 0.0 || lambda2 < 0.0)
        throw std::invalid_argument("stage 1: loss weights must be non-negative");
    if (batch_size == 0) throw std::invalid_argument("stage 1: batch size must be positive");
    if (learning_rate <= 0.0) throw std::invalid_argument("stage 1: learning rate must be positive");
}

KoopmanAutoencoder::KoopmanAutoencoder(const GraphHierarchy& hierarchy, std::size_t d_z,
                                       std::size_t channels, Rng& rng)
    : d_z_(checked_latent_dim(hierarchy, d_z)),
      channels_(channels),
      fine_nodes_(hierarchy.levels.front().node_count),
      coarse_nodes_(hierarchy.levels.back().node_count),
      assignments_(hierarchy.assignments),
      lift_(1, channels, rng),
      enc_block0_(channels, hierarchy.levels.at(0), rng),
      enc_block1_(channels, hierarchy.levels.at(1), rng),
      enc_pw0_(channels, channels, rng),
      enc_pw1_(channels, channels, rng),
      dec_pw0_(channels, channels, rng),
      dec_pw1_(channels, channels, rng),
      dec_block1_(channels, hierarchy.levels.at(1), rng),
      dec_block0_(channels, hierarchy.levels.at(0), rng),
      head_(channels, 1, rng, /*activation=*/false) {
    const std::size_t flat = coarse_nodes_ * channels_;
    const double s_enc = 1.0 / std::sqrt(static_cast<double>(flat));
    enc_w_ = Tensor::uniform(rng, -s_enc, s_enc, {flat, d_z_}, true);
    enc_b_ = Tensor::zeros({d_z_}, true);
    const double s_dec = 1.0 / std::sqrt(static_cast<double>(d_z_));
    dec_w_ = Tensor::uniform(rng, -s_dec, s_dec, {d_z_, flat}, true);
    dec_b_ = Tensor::zeros({flat}, true);
    // Identity plus small noise: early training starts from stable latent
    // dynamics instead of a random contraction/expansion.
    k_ = Tensor::identity(d_z_, true);
    Tensor noise = Tensor::normal(rng, 0.0, 1e-3, {d_z_, d_z_});
    for (std::size_t i = 0; i < k_.size(); ++i) k_.values()[i] += noise.values()[i];
}

Tensor KoopmanAutoencoder::encode(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(0) != fine_nodes_ || x.dim(1) != 1)
        throw std::invalid_argument("encode: expected shape (" + std::to_string(fine_nodes_) +
                                    ", 1), got " + shape_str(x.shape()));
    Tensor h = lift_.forward(x);
    h = enc_block0_.forward(h);
    h = pool_features(h, assignments_[0]);
    h = enc_block1_.forward(h);
    h = pool_features(h, assignments_[1]);
    h = enc_pw0_.forward(h);
    h = enc_pw1_.forward(h);
    h = reshape(h, {coarse_nodes_ * channels_});
    return add(matmul(h, enc_w_), enc_b_);
}

Tensor KoopmanAutoencoder::decode(const Tensor& z) const {
    if (z.rank() != 1 || z.dim(0) != d_z_)
        throw std::invalid_argument("decode: expected a latent of length " + std::to_string(d_z_) +
                                    ", got " + shape_str(z.shape()));
    Tensor h = add(matmul(z, dec_w_), dec_b_);
    h = reshape(h, {coarse_nodes_, channels_});
    h = dec_pw0_.forward(h);
    h = dec_pw1_.forward(h);
    h = unpool_features(h, assignments_[1]);
    h = dec_block1_.forward(h);
    h = unpool_features(h, assignments_[0]);
    h = dec_block0_.forward(h);
    return head_.forward(h);
}

Tensor KoopmanAutoencoder::advance(const Tensor& z, long long steps) const {
    if (steps < 0)
        throw std::invalid_argument("advance: negative step count " + std::to_string(steps));
    Tensor out = z;
    for (long long s = 0; s < steps; ++s) out = matmul(out, k_);
    return out;
}

std::vector<Tensor> KoopmanAutoencoder::parameters() {
    std::vector<Tensor> out;
    for (auto* layer : {&lift_, &enc_pw0_, &enc_pw1_, &dec_pw0_, &dec_pw1_, &head_}) {
        auto p = layer->parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    for (auto* block : {&enc_block0_, &enc_block1_, &dec_block1_, &dec_block0_}) {
        auto p = block->parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    out.push_back(enc_w_);
    out.push_back(enc_b_);
    out.push_back(dec_w_);
    out.push_back(dec_b_);
    out.push_back(k_);
    return out;
}

NamedParams KoopmanAutoencoder::named_parameters() {
    NamedParams out;
    lift_.collect_parameters("encoder.lift", out);
    enc_block0_.collect_parameters("encoder.block0", out);
    enc_block1_.collect_parameters("encoder.block1", out);
    enc_pw0_.collect_parameters("encoder.pw0", out);
    enc_pw1_.collect_parameters("encoder.pw1", out);
    out.emplace_back("encoder.latent.weight", enc_w_);
    out.emplace_back("encoder.latent.bias", enc_b_);
    out.emplace_back("decoder.latent.weight", dec_w_);
    out.emplace_back("decoder.latent.bias", dec_b_);
    dec_pw0_.collect_parameters("decoder.pw0", out);
    dec_pw1_.collect_parameters("decoder.pw1", out);
    dec_block1_.collect_parameters("decoder.block1", out);
    dec_block0_.collect_parameters("decoder.block0", out);
    head_.collect_parameters("decoder.head", out);
    out.emplace_back("koopman.k", k_);
    return out;
}

void KoopmanAutoencoder::freeze() {
    for (Tensor& p : parameters()) {
        p.drop_grad();
        p.set_requires_grad(false);
    }
}

Stage1Losses stage1_losses(const KoopmanAutoencoder& model, const std::vector<Tensor>& frames,
                           const std::vector<std::size_t>& batch, std::size_t horizon,
                           const Stage1Config& config) {
    if (batch.empty()) throw std::invalid_argument("stage 1: empty batch");
    if (horizon > frames.size()) throw std::invalid_argument("stage 1: horizon beyond trajectory");

    std::vector<Tensor> recon_terms, dyn_terms;
    recon_terms.reserve(batch.size());
    for (std::size_t t : batch) {
        if (t >= horizon) throw std::invalid_argument("stage 1: batch index beyond horizon");
        Tensor z = model.encode(frames[t]);
        recon_terms.push_back(sum_sq(sub(frames[t], model.decode(z))));
        if (t + config.delta_T < horizon) {
            Tensor z_step = z;
            for (std::size_t s = 1; s <= config.delta_T; ++s) {
                z_step = matmul(z_step, model.koopman());
                dyn_terms.push_back(sum_sq(sub(frames[t + s], model.decode(z_step))));
            }
        }
    }

    Stage1Losses out;
    out.recon = scale(sum_terms(recon_terms), 1.0 / static_cast<double>(recon_terms.size()));
    out.dyn_pairs = dyn_terms.size();
    out.dyn = dyn_terms.empty()
                  ? Tensor::scalar(0.0)
                  : scale(sum_terms(dyn_terms), 1.0 / static_cast<double>(dyn_terms.size()));
    out.decay = sum_sq(model.koopman());
    out.total = add(add(out.recon, scale(out.dyn, config.lambda1)),
                    scale(out.decay, config.lambda2));
    return out;
}

double reconstruction_mse(const KoopmanAutoencoder& model, const std::vector<Tensor>& frames,
                          std::size_t begin, std::size_t end) {
    if (begin >= end || end > frames.size())
        throw std::invalid_argument("reconstruction_mse: bad frame range");
    double total = 0.0;
    for (std::size_t t = begin; t < end; ++t) {
        Tensor err = sum_sq(sub(frames[t], model.decode(model.encode(frames[t]))));
        total += err.item();
    }
    const double count = static_cast<double>((end - begin) * model.fine_nodes());
    return total / count;
}

Stage1Result train_stage1(const std::vector<Tensor>& frames, std::size_t train_count,
                          const GraphHierarchy& hierarchy, const Stage1Config& config) {
    config.validate();
    if (train_count == 0 || train_count > frames.size())
        throw std::invalid_argument("stage 1: training split of " + std::to_string(train_count) +
                                    " frames out of " + std::to_string(frames.size()));

    Rng init_rng(derive_seed(config.seed, "stage1/init"));
    KoopmanAutoencoder model(hierarchy, config.d_z, config.channels, init_rng);
    std::vector<Tensor> params = model.parameters();
    AdamConfig adam;
    adam.learning_rate = config.learning_rate;
    Adam opt(params, adam);

    std::vector<Stage1EpochLog> log;
    std::vector<std::size_t> order(train_count);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t fine_nodes = model.fine_nodes();
    std::size_t epochs_run = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng epoch_rng(derive_seed(config.seed, "stage1/epoch/" + std::to_string(epoch)));
        std::shuffle(order.begin(), order.end(), epoch_rng);

        double recon_sum = 0.0, dyn_sum = 0.0, decay_sum = 0.0, total_sum = 0.0;
        std::size_t item_count = 0, pair_count = 0, step = 0;
        for (std::size_t start = 0; start < train_count; start += config.batch_size, ++step) {
            const std::size_t stop = std::min(train_count, start + config.batch_size);
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));
            try {
                Tape tape;
                Stage1Losses losses = stage1_losses(model, frames, batch, train_count, config);
                tape.backward(losses.total);
                opt.step();

                const std::size_t b = batch.size();
                recon_sum += losses.recon.item() * static_cast<double>(b);
                dyn_sum += losses.dyn.item() * static_cast<double>(losses.dyn_pairs);
                decay_sum += losses.decay.item() * static_cast<double>(b);
                total_sum += losses.total.item() * static_cast<double>(b);
                item_count += b;
                pair_count += losses.dyn_pairs;
            } catch (const std::runtime_error& e) {
                std::ostringstream msg;
                msg << "stage-1 training aborted at epoch " << epoch << ", step " << step << ": "
                    << e.what();
                throw std::runtime_error(msg.str());
            }
        }

        Stage1EpochLog entry;
        entry.epoch = epoch;
        entry.recon = recon_sum / static_cast<double>(item_count);
        entry.dyn = pair_count == 0 ? 0.0 : dyn_sum / static_cast<double>(pair_count);
        entry.decay = decay_sum / static_cast<double>(item_count);
        entry.total = total_sum / static_cast<double>(item_count);
        log.push_back(entry);
        epochs_run = epoch + 1;

        if (config.target_recon_mse > 0.0 &&
            entry.recon / static_cast<double>(fine_nodes) < config.target_recon_mse &&
            reconstruction_mse(model, frames, 0, train_count) < config.target_recon_mse)
            break;
    }

    model.freeze();

    Tensor latents = Tensor::zeros({frames.size(), config.d_z});
    for (std::size_t t = 0; t < frames.size(); ++t) {
        Tensor z = model.encode(frames[t]);
        std::copy(z.values().begin(), z.values().end(),
                  latents.values().begin() + static_cast<std::ptrdiff_t>(t * config.d_z));
    }

    Stage1Result result{std::move(model), std::move(latents), std::move(log), 0.0, epochs_run};
    result.train_recon_mse = reconstruction_mse(result.model, frames, 0, train_count);
    return result;
}

void save_latents(const std::filesystem::path& path, const Tensor& latents) {
    if (latents.rank() != 2) throw std::invalid_argument("save_latents: expected a (T, d_z) tensor");
    StdfData data;
    data.nodes = 1;
    data.steps = latents.dim(0);
    data.features = latents.dim(1);
    data.values = latents.values();
    write_stdf(path, data);
}

Tensor load_latents(const std::filesystem::path& path) {
    StdfData data = read_stdf(path);
    if (data.nodes != 1)
        throw std::runtime_error("latent container should hold one pseudo-node, found " +
                                 std::to_string(data.nodes));
    return Tensor::from_data({data.steps, data.features}, std::move(data.values));
}

void save_stage1_log_csv(const std::filesystem::path& path,
                         const std::vector<Stage1EpochLog>& log) {
    std::string csv = "epoch,recon,dyn,decay,total\n";
    for (const auto& e : log) {
        csv += std::to_string(e.epoch);
        for (double v : {e.recon, e.dyn, e.decay, e.total}) {
            csv += ',';
            csv += format_double(v);
        }
        csv += '\n';
    }
    atomic_write_file(path, csv);
}

}  // namespace tkgcn
