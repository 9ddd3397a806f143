#pragma once

// Minimal reverse-mode MLP machinery. Batches are column-major: a batch of B
// samples of width d is a d x B matrix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kae/binary_io.hpp"
#include "kae/errors.hpp"
#include "kae/spectral.hpp"

namespace kae {

using Rng = std::mt19937_64;

struct Parameter {
    std::string name;
    RealMatrix value;
    RealMatrix grad;

    Parameter() = default;
    Parameter(std::string n, RealMatrix v)
        : name(std::move(n)), value(std::move(v)), grad(RealMatrix::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

enum class InitScheme { he, xavier, gaussian };

struct WeightInit {
    InitScheme scheme = InitScheme::he;
    double sigma = 1.0; // gaussian only

    static WeightInit he() { return {InitScheme::he, 0.0}; }
    static WeightInit xavier() { return {InitScheme::xavier, 0.0}; }
    static WeightInit gaussian(double sigma) { return {InitScheme::gaussian, sigma}; }
};

// Weight of shape rows x cols maps cols inputs to rows outputs: fan_in = cols.
inline RealMatrix init_weights(Eigen::Index rows, Eigen::Index cols, const WeightInit& init, Rng& rng) {
    if (rows < 1 || cols < 1) {
        throw DimensionError("init_weights: dimensions must be positive");
    }
    RealMatrix w(rows, cols);
    const auto fan_in = static_cast<double>(cols);
    const auto fan_out = static_cast<double>(rows);
    switch (init.scheme) {
    case InitScheme::he: {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
        break;
    }
    case InitScheme::xavier: {
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
        break;
    }
    case InitScheme::gaussian: {
        if (!(init.sigma >= 0.0) || !std::isfinite(init.sigma)) {
            throw ParameterError("init_weights: gaussian sigma must be finite and non-negative");
        }
        if (init.sigma == 0.0) {
            w.setZero();
            break;
        }
        std::normal_distribution<double> dist(0.0, init.sigma);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
        break;
    }
    }
    return w;
}

class Mlp;

// Activations recorded by Mlp::forward for the matching backward pass.
struct MlpCache {
    const Mlp* owner = nullptr;
    std::vector<RealMatrix> inputs;         // input to each linear layer
    std::vector<RealMatrix> preactivations; // output of each linear layer

    bool empty() const { return owner == nullptr; }
};

// Linear layers with ReLU between them; the last layer has no activation.
class Mlp {
public:
    Mlp() = default;

    Mlp(std::vector<Eigen::Index> widths, const WeightInit& init, Rng& rng, const std::string& prefix = "mlp")
        : widths_(std::move(widths)) {
        if (widths_.size() < 2) throw DimensionError("Mlp: need at least input and output widths");
        for (auto w : widths_) {
            if (w < 1) throw DimensionError("Mlp: layer widths must be positive");
        }
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            const auto tag = prefix + "." + std::to_string(l);
            weights_.emplace_back(tag + ".weight", init_weights(widths_[l + 1], widths_[l], init, rng));
            biases_.emplace_back(tag + ".bias", RealMatrix::Zero(widths_[l + 1], 1));
        }
    }

    Eigen::Index input_width() const { return widths_.front(); }
    Eigen::Index output_width() const { return widths_.back(); }
    std::size_t layer_count() const { return weights_.size(); }
    const std::vector<Eigen::Index>& widths() const { return widths_; }

    Parameter& weight(std::size_t l) { return weights_.at(l); }
    Parameter& bias(std::size_t l) { return biases_.at(l); }
    const Parameter& weight(std::size_t l) const { return weights_.at(l); }
    const Parameter& bias(std::size_t l) const { return biases_.at(l); }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            out.push_back(&weights_[l]);
            out.push_back(&biases_[l]);
        }
        return out;
    }

    std::vector<const Parameter*> parameters() const {
        std::vector<const Parameter*> out;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            out.push_back(&weights_[l]);
            out.push_back(&biases_[l]);
        }
        return out;
    }

    RealMatrix forward(const RealMatrix& x, MlpCache* cache = nullptr) const {
        if (x.rows() != input_width()) {
            throw DimensionError("Mlp::forward: input width " + std::to_string(x.rows()) + ", expected " +
                                 std::to_string(input_width()));
        }
        if (cache) {
            cache->owner = this;
            cache->inputs.clear();
            cache->preactivations.clear();
        }
        RealMatrix a = x;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            RealMatrix z = weights_[l].value * a;
            z.colwise() += biases_[l].value.col(0);
            if (cache) {
                cache->inputs.push_back(std::move(a));
                cache->preactivations.push_back(z);
            }
            a = (l + 1 < weights_.size()) ? RealMatrix(z.cwiseMax(0.0)) : std::move(z);
        }
        return a;
    }

    // Accumulates parameter gradients and returns dL/dx.
    RealMatrix backward(const MlpCache& cache, const RealMatrix& output_grad) {
        if (cache.empty()) throw StateError("Mlp::backward: no cached forward pass");
        if (cache.owner != this || cache.inputs.size() != weights_.size()) {
            throw StateError("Mlp::backward: cache was produced by a different network");
        }
        const auto batch = cache.inputs.front().cols();
        if (output_grad.rows() != output_width() || output_grad.cols() != batch) {
            throw DimensionError("Mlp::backward: output gradient shape mismatch");
        }
        RealMatrix g = output_grad;
        for (std::size_t l = weights_.size(); l-- > 0;) {
            if (l + 1 < weights_.size()) {
                g = g.cwiseProduct((cache.preactivations[l].array() > 0.0).cast<double>().matrix());
            }
            weights_[l].grad.noalias() += g * cache.inputs[l].transpose();
            biases_[l].grad += g.rowwise().sum();
            g = weights_[l].value.transpose() * g;
        }
        return g;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }

private:
    std::vector<Eigen::Index> widths_;
    std::vector<Parameter> weights_;
    std::vector<Parameter> biases_;
};

struct LossWithGrad {
    double value = 0.0;
    RealMatrix grad; // d value / d prediction
};

// Mean of squared differences over all elements; gradient with respect to a.
inline LossWithGrad mse(const RealMatrix& a, const RealMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("mse: shape mismatch");
    }
    const auto count = static_cast<double>(a.size());
    if (count == 0) return {0.0, RealMatrix::Zero(a.rows(), a.cols())};
    RealMatrix diff = a - b;
    return {diff.squaredNorm() / count, (2.0 / count) * diff};
}

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

// Adam with bias correction and optional decoupled weight decay.
class Adam {
public:
    Adam(AdamConfig config, std::vector<Parameter*> params) : config_(config), params_(std::move(params)) {
        if (!(config_.learning_rate > 0.0) || !(config_.beta1 >= 0.0 && config_.beta1 < 1.0) ||
            !(config_.beta2 >= 0.0 && config_.beta2 < 1.0) || !(config_.epsilon > 0.0) ||
            !(config_.weight_decay >= 0.0)) {
            throw ParameterError("Adam: invalid hyperparameters");
        }
        for (auto* p : params_) {
            first_.push_back(RealMatrix::Zero(p->value.rows(), p->value.cols()));
            second_.push_back(RealMatrix::Zero(p->value.rows(), p->value.cols()));
        }
    }

    void step() {
        ++step_;
        const double t = static_cast<double>(step_);
        const double c1 = 1.0 - std::pow(config_.beta1, t);
        const double c2 = 1.0 - std::pow(config_.beta2, t);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Parameter& p = *params_[i];
            if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
                throw DimensionError("Adam::step: gradient shape mismatch for " + p.name);
            }
            if (config_.weight_decay > 0.0) {
                p.value *= 1.0 - config_.learning_rate * config_.weight_decay;
            }
            first_[i] = config_.beta1 * first_[i] + (1.0 - config_.beta1) * p.grad;
            second_[i] = config_.beta2 * second_[i] + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
            p.value.array() -= config_.learning_rate * (first_[i].array() / c1) /
                               ((second_[i].array() / c2).sqrt() + config_.epsilon);
        }
    }

    std::uint64_t steps() const { return step_; }
    const AdamConfig& config() const { return config_; }

private:
    AdamConfig config_;
    std::vector<Parameter*> params_;
    std::vector<RealMatrix> first_;
    std::vector<RealMatrix> second_;
    std::uint64_t step_ = 0;
};

// Checkpoint layout: "KAE1", then for each parameter until end of file:
// u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64 row-major.
// All integers and floats little-endian.
inline constexpr std::string_view checkpoint_magic = "KAE1";

struct NamedMatrix {
    std::string name;
    RealMatrix value;
};

inline std::string encode_checkpoint(const std::vector<const Parameter*>& params) {
    binary::Writer w;
    w.bytes(checkpoint_magic);
    for (const auto* p : params) {
        w.u32(static_cast<std::uint32_t>(p->name.size()));
        w.bytes(p->name);
        w.u64(static_cast<std::uint64_t>(p->value.rows()));
        w.u64(static_cast<std::uint64_t>(p->value.cols()));
        for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
            for (Eigen::Index c = 0; c < p->value.cols(); ++c) w.f64(p->value(r, c));
        }
    }
    return w.data();
}

inline std::vector<NamedMatrix> decode_checkpoint(std::string_view data) {
    binary::Reader r(data);
    const auto magic = r.bytes(checkpoint_magic.size(), "checkpoint magic");
    if (magic != checkpoint_magic) {
        throw FormatError("checkpoint: expected magic \"KAE1\"", 0);
    }
    std::vector<NamedMatrix> out;
    while (!r.at_end()) {
        const auto len = r.u32("parameter name length");
        std::string name(r.bytes(len, "parameter name"));
        const auto rows = r.u64("row count");
        const auto cols = r.u64("column count");
        if (rows != 0 && cols > r.remaining() / 8 / rows) {
            r.fail("checkpoint: parameter " + name + " larger than remaining data");
        }
        RealMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f64("parameter values");
        }
        out.push_back({std::move(name), std::move(m)});
    }
    return out;
}

// Copies values into params by name; every param must be present with a matching shape.
inline void load_checkpoint(const std::vector<NamedMatrix>& saved, const std::vector<Parameter*>& params) {
    for (auto* p : params) {
        auto it = std::find_if(saved.begin(), saved.end(), [&](const NamedMatrix& m) { return m.name == p->name; });
        if (it == saved.end()) throw StateError("checkpoint: missing parameter " + p->name);
        if (it->value.rows() != p->value.rows() || it->value.cols() != p->value.cols()) {
            throw DimensionError("checkpoint: shape mismatch for " + p->name);
        }
        p->value = it->value;
        p->zero_grad();
    }
}

} // namespace kae
