#pragma once

// Koopman autoencoder: encoder -> linear Koopman matrix U (no bias) -> decoder.
//
//   y_k = encoder(x_k),  x~_k = decoder(y_k),  y^_{k+l} = U^l y_k,  x^_{k+l} = decoder(y^_{k+l})
//
// Loss on a window x_k..x_{k+H}:
//   MSE(x_k, x~_k) + (1/H) sum_{l=1..H} MSE(x_{k+l}, x^_{k+l}) + eps * sum_j (|lambda_j(U)| - 1)^2

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "kae/data.hpp"
#include "kae/errors.hpp"
#include "kae/nn.hpp"
#include "kae/spectral.hpp"
#include "kae/spectral_reg.hpp"
#include "kae/tolerances.hpp"

namespace kae {

struct GaussianKoopmanInit {
    double sigma = 0.0; // <= 0 selects 1/sqrt(n)
};
struct XavierKoopmanInit {};
struct EigenKoopmanInit {
    SpikeSlabSpec spec;
};
using KoopmanInit = std::variant<GaussianKoopmanInit, XavierKoopmanInit, EigenKoopmanInit>;

inline RealMatrix init_koopman(Eigen::Index n, const KoopmanInit& init, Rng& rng) {
    if (const auto* g = std::get_if<GaussianKoopmanInit>(&init)) {
        const double sigma = g->sigma > 0.0 ? g->sigma : 1.0 / std::sqrt(static_cast<double>(n));
        return init_weights(n, n, WeightInit::gaussian(sigma), rng);
    }
    if (std::holds_alternative<XavierKoopmanInit>(init)) return init_weights(n, n, WeightInit::xavier(), rng);
    return eigeninit_random(n, std::get<EigenKoopmanInit>(init).spec, rng);
}

struct KaeModel {
    Mlp encoder;
    Parameter koopman;
    Mlp decoder;

    Eigen::Index state_dim() const { return encoder.input_width(); }
    Eigen::Index latent_dim() const { return koopman.value.rows(); }

    void validate() const {
        if (koopman.value.rows() != koopman.value.cols()) throw DimensionError("KaeModel: U must be square");
        if (encoder.output_width() != latent_dim() || decoder.input_width() != latent_dim()) {
            throw DimensionError("KaeModel: encoder/decoder widths do not match the Koopman dimension");
        }
        if (decoder.output_width() != state_dim()) {
            throw DimensionError("KaeModel: decoder output width must equal the state dimension");
        }
    }

    std::vector<Parameter*> parameters() {
        auto out = encoder.parameters();
        out.push_back(&koopman);
        for (auto* p : decoder.parameters()) out.push_back(p);
        return out;
    }

    std::vector<const Parameter*> parameters() const {
        auto out = encoder.parameters();
        out.push_back(&koopman);
        for (const auto* p : decoder.parameters()) out.push_back(p);
        return out;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }
};

struct ModelShape {
    Eigen::Index latent_dim = 8;
    std::vector<Eigen::Index> hidden = {64, 32};
};

// Encoder m -> hidden... -> n and the mirrored decoder, He-initialised; U from
// koopman_rng so that changing the U scheme leaves every other weight intact.
inline KaeModel build_model(Eigen::Index state_dim, const ModelShape& shape, const KoopmanInit& init, Rng& net_rng,
                            Rng& koopman_rng) {
    std::vector<Eigen::Index> enc{state_dim};
    enc.insert(enc.end(), shape.hidden.begin(), shape.hidden.end());
    enc.push_back(shape.latent_dim);
    std::vector<Eigen::Index> dec(enc.rbegin(), enc.rend());
    KaeModel m;
    m.encoder = Mlp(enc, WeightInit::he(), net_rng, "encoder");
    m.decoder = Mlp(dec, WeightInit::he(), net_rng, "decoder");
    m.koopman = Parameter("koopman", init_koopman(shape.latent_dim, init, koopman_rng));
    m.validate();
    return m;
}

// Single linear identity layers on both sides; used with a frozen autoencoder
// to fit U directly to state-space data.
inline KaeModel identity_autoencoder_model(const RealMatrix& koopman) {
    const Eigen::Index n = koopman.rows();
    Rng unused(0);
    KaeModel m;
    m.encoder = Mlp({n, n}, WeightInit::gaussian(0.0), unused, "encoder");
    m.decoder = Mlp({n, n}, WeightInit::gaussian(0.0), unused, "decoder");
    m.encoder.weight(0).value = RealMatrix::Identity(n, n);
    m.decoder.weight(0).value = RealMatrix::Identity(n, n);
    m.koopman = Parameter("koopman", koopman);
    m.validate();
    return m;
}

struct KaeForward {
    RealMatrix reconstruction;            // x~_k
    std::vector<RealMatrix> predictions;  // x^_{k+l}, l = 1..H
    std::vector<RealMatrix> latents;      // y_k, y^_{k+1}, ..., y^_{k+H}
    MlpCache encoder_cache;
    std::vector<MlpCache> decoder_caches; // H + 1 entries when caching
};

inline KaeForward kae_forward(const KaeModel& model, const RealMatrix& x, Eigen::Index horizon,
                              bool keep_caches = false) {
    if (horizon < 0) throw ParameterError("kae_forward: horizon must be >= 0");
    if (x.rows() != model.state_dim()) {
        throw DimensionError("kae_forward: state width " + std::to_string(x.rows()) + ", expected " +
                             std::to_string(model.state_dim()));
    }
    KaeForward out;
    const auto h = static_cast<std::size_t>(horizon);
    out.latents.reserve(h + 1);
    out.predictions.reserve(h);
    if (keep_caches) out.decoder_caches.resize(h + 1);
    out.latents.push_back(model.encoder.forward(x, keep_caches ? &out.encoder_cache : nullptr));
    out.reconstruction = model.decoder.forward(out.latents[0], keep_caches ? &out.decoder_caches[0] : nullptr);
    for (std::size_t l = 1; l <= h; ++l) {
        out.latents.push_back(model.koopman.value * out.latents[l - 1]);
        out.predictions.push_back(
            model.decoder.forward(out.latents[l], keep_caches ? &out.decoder_caches[l] : nullptr));
    }
    return out;
}

// Decoded predictions through the eigendecomposition of U:
// y_{k+l} = V diag(lambda^l) V^-1 y_k, for l = 1..H.
inline std::vector<RealMatrix> spectral_predictions(const KaeModel& model, const RealMatrix& x, Eigen::Index horizon) {
    if (horizon < 0) throw ParameterError("spectral_predictions: horizon must be >= 0");
    const auto dec = eig_decompose(model.koopman.value);
    const ComplexMatrix coeffs = dec.left_vectors.adjoint() * model.encoder.forward(x).cast<Complex>();
    ComplexVector powers = ComplexVector::Ones(dec.eigenvalues.size());
    std::vector<RealMatrix> out;
    for (Eigen::Index l = 1; l <= horizon; ++l) {
        powers = powers.cwiseProduct(dec.eigenvalues);
        const RealMatrix y = (dec.right_vectors * powers.asDiagonal() * coeffs).real();
        out.push_back(model.decoder.forward(y));
    }
    return out;
}

struct LossBreakdown {
    double reconstruction = 0.0;
    double prediction = 0.0;     // averaged over l = 1..H
    double eigenloss = 0.0;      // unweighted penalty (0 when not evaluated)
    double eigenloss_term = 0.0; // weight * eigenloss

    double data_loss() const { return reconstruction + prediction; }
    double total() const { return reconstruction + prediction + eigenloss_term; }
};

// Loss on a window batch (H + 1 matrices). With accumulate_grads the gradient
// of the total is added to every parameter's grad.
inline LossBreakdown total_loss(KaeModel& model, const WindowBatch& window, double eigenloss_weight,
                                bool accumulate_grads = true) {
    if (window.size() < 2) throw DimensionError("total_loss: window needs at least two states");
    if (!(eigenloss_weight >= 0.0)) throw ParameterError("total_loss: eigenloss weight must be >= 0");
    const auto horizon = static_cast<Eigen::Index>(window.size() - 1);
    const std::size_t h = window.size() - 1;
    for (const auto& w : window) {
        if (w.rows() != model.state_dim() || w.cols() != window[0].cols()) {
            throw DimensionError("total_loss: inconsistent window batch shape");
        }
    }
    auto fwd = kae_forward(model, window[0], horizon, accumulate_grads);
    LossBreakdown out;
    const auto rec = mse(fwd.reconstruction, window[0]);
    out.reconstruction = rec.value;
    std::vector<RealMatrix> latent_grads(h + 1);
    if (accumulate_grads) latent_grads[0] = model.decoder.backward(fwd.decoder_caches[0], rec.grad);
    const double inv_h = 1.0 / static_cast<double>(h);
    for (std::size_t l = 1; l <= h; ++l) {
        const auto pred = mse(fwd.predictions[l - 1], window[l]);
        out.prediction += inv_h * pred.value;
        if (accumulate_grads) latent_grads[l] = model.decoder.backward(fwd.decoder_caches[l], inv_h * pred.grad);
    }
    if (accumulate_grads) {
        const RealMatrix& u = model.koopman.value;
        RealMatrix gy = latent_grads[h];
        for (std::size_t l = h; l >= 1; --l) {
            model.koopman.grad.noalias() += gy * fwd.latents[l - 1].transpose();
            gy = u.transpose() * gy + latent_grads[l - 1];
        }
        model.encoder.backward(fwd.encoder_cache, gy);
    }
    if (eigenloss_weight > 0.0) {
        const auto eg = eigenloss_gradient(eig_decompose(model.koopman.value));
        out.eigenloss = eg.value;
        out.eigenloss_term = eigenloss_weight * eg.value;
        if (accumulate_grads) model.koopman.grad += eigenloss_weight * eg.grad;
    }
    return out;
}

struct TrainConfig {
    Eigen::Index horizon = 10;
    double eigenloss_weight = 0.0;
    KoopmanInit koopman_init = GaussianKoopmanInit{};
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    AdamConfig adam;
    std::uint64_t seed = 0;
    bool freeze_autoencoder = false; // train U only

    void validate() const {
        if (horizon < 1) throw ParameterError("TrainConfig: horizon must be >= 1");
        if (!(eigenloss_weight >= 0.0)) throw ParameterError("TrainConfig: eigenloss weight must be >= 0");
        if (batch_size < 1) throw ParameterError("TrainConfig: batch size must be >= 1");
    }
};

struct HorizonErrors {
    std::vector<double> per_horizon; // e_l for l = 1..L
    double cumulative = 0.0;
};

struct MetricsLog {
    std::vector<double> train_loss;     // per epoch, includes the eigenloss term
    std::vector<double> val_loss;       // per epoch, reconstruction + prediction only
    std::vector<double> eigenloss_term; // per epoch, weight * penalty of U at epoch end
    std::vector<double> wall_ms;        // per epoch
    std::vector<RealVector> moduli;     // row e: |lambda_j(U)| after epoch e; row 0 is the initial U
    HorizonErrors test;
    std::optional<std::size_t> convergence_epoch;

    std::size_t epochs() const { return train_loss.size(); }
};

// Mean data loss over windows, evaluated in chunks without gradients.
inline double evaluate_loss(KaeModel& model, const Dataset& d, const std::vector<WindowRef>& windows,
                            Eigen::Index horizon, std::size_t chunk = 1024) {
    if (windows.empty()) throw ParameterError("evaluate_loss: no windows");
    double sum = 0.0;
    for (std::size_t b = 0; b < windows.size(); b += chunk) {
        const std::size_t e = std::min(windows.size(), b + chunk);
        const auto batch = gather_windows(d, windows, b, e, horizon + 1);
        sum += static_cast<double>(e - b) * total_loss(model, batch, 0.0, false).data_loss();
    }
    return sum / static_cast<double>(windows.size());
}

using EpochCallback = std::function<void(std::size_t epoch, const KaeModel&)>;

// Shuffled mini-batch Adam on total_loss. Epoch callback fires for epoch 0
// (initial model) and after each epoch.
inline MetricsLog train(KaeModel& model, const Dataset& d, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {}) {
    cfg.validate();
    model.validate();
    if (d.state_dim() != model.state_dim()) throw DimensionError("train: dataset/model state width mismatch");
    const auto train_windows = enumerate_windows(d, Split::train, cfg.horizon + 1);
    const auto val_windows = enumerate_windows(d, Split::val, cfg.horizon + 1);
    if (train_windows.empty() || val_windows.empty()) {
        throw ParameterError("train: need train and val windows of length horizon + 1");
    }

    std::vector<Parameter*> params = cfg.freeze_autoencoder ? std::vector<Parameter*>{&model.koopman}
                                                             : model.parameters();
    Adam optimizer(cfg.adam, params);
    Rng shuffle_rng(cfg.seed);
    MetricsLog log;
    log.moduli.push_back(eig_decompose(model.koopman.value).moduli());
    if (on_epoch) on_epoch(0, model);

    auto order = train_windows;
    std::optional<double> initial_loss;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_sum = 0.0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t e = std::min(order.size(), b + cfg.batch_size);
            const auto batch = gather_windows(d, order, b, e, cfg.horizon + 1);
            model.zero_grad();
            const double loss = total_loss(model, batch, cfg.eigenloss_weight, true).total();
            if (!initial_loss) initial_loss = loss;
            if (!std::isfinite(loss) || loss > Tolerances::divergence_factor * std::max(*initial_loss, 1e-300)) {
                throw DivergenceError("train: loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
                                      " exceeds divergence limit");
            }
            optimizer.step();
            epoch_sum += static_cast<double>(e - b) * loss;
        }
        log.train_loss.push_back(epoch_sum / static_cast<double>(order.size()));
        log.val_loss.push_back(evaluate_loss(model, d, val_windows, cfg.horizon));
        const RealVector moduli = eig_decompose(model.koopman.value).moduli();
        log.eigenloss_term.push_back(cfg.eigenloss_weight * eigenloss_from_moduli(moduli));
        log.moduli.push_back(moduli);
        log.wall_ms.push_back(
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        if (on_epoch) on_epoch(epoch, model);
    }
    model.zero_grad();
    return log;
}

// e_l = mean over test windows of MSE(x_{k+l}, x^_{k+l}); cumulative = sum_l e_l.
inline HorizonErrors evaluate_horizons(const KaeModel& model, const Dataset& d, Eigen::Index max_horizon,
                                       std::size_t chunk = 1024) {
    if (max_horizon < 1) throw ParameterError("evaluate_horizons: max horizon must be >= 1");
    const auto windows = enumerate_windows(d, Split::test, max_horizon + 1);
    if (windows.empty()) {
        throw DimensionError("evaluate_horizons: no test window of length " + std::to_string(max_horizon + 1));
    }
    HorizonErrors out;
    out.per_horizon.assign(static_cast<std::size_t>(max_horizon), 0.0);
    for (std::size_t b = 0; b < windows.size(); b += chunk) {
        const std::size_t e = std::min(windows.size(), b + chunk);
        const auto batch = gather_windows(d, windows, b, e, max_horizon + 1);
        const auto fwd = kae_forward(model, batch[0], max_horizon);
        for (std::size_t l = 1; l <= static_cast<std::size_t>(max_horizon); ++l) {
            out.per_horizon[l - 1] += static_cast<double>(e - b) * mse(fwd.predictions[l - 1], batch[l]).value;
        }
    }
    for (auto& v : out.per_horizon) {
        v /= static_cast<double>(windows.size());
        out.cumulative += v;
    }
    return out;
}

// Combined per-epoch record: epoch, train_loss, val_loss, eigenloss_term, wall_ms, |lambda_1..n|.
inline std::string metrics_csv(const MetricsLog& log) {
    std::string out = "epoch,train_loss,val_loss,eigenloss_term,wall_ms";
    const auto n = log.moduli.empty() ? 0 : log.moduli.front().size();
    for (Eigen::Index j = 0; j < n; ++j) out += ",lambda_" + std::to_string(j + 1);
    out += "\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (std::size_t e = 0; e < log.epochs(); ++e) {
        out += std::to_string(e + 1) + "," + num(log.train_loss[e]) + "," + num(log.val_loss[e]) + "," +
               num(log.eigenloss_term[e]) + "," + num(log.wall_ms[e]);
        for (Eigen::Index j = 0; j < n; ++j) out += "," + num(log.moduli[e + 1][j]);
        out += "\n";
    }
    return out;
}

} // namespace kae
