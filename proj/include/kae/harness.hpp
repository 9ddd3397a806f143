#pragma once

// Experiment orchestration: JSON configuration, per-seed runs with CSV
// outputs and a manifest, convergence-epoch metric, initialisation spectrum
// report and DMD-based theta estimation for stored datasets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "kae/data.hpp"
#include "kae/dmd.hpp"
#include "kae/errors.hpp"
#include "kae/model.hpp"
#include "kae/nn.hpp"
#include "kae/spectral.hpp"
#include "kae/spectral_reg.hpp"

namespace kae {

inline constexpr const char* library_version = "1.0.0";

// ---------------------------------------------------------------------------
// Convergence epoch

// Epochs are 1-based. delta_e = |val_e - val_{e-1}|; returns the first epoch
// e > warmup with delta_e / max_{warmup < e' <= e} delta_e' < tau. A window
// whose differences are all zero counts as converged.
inline std::optional<std::size_t> convergence_epoch(const std::vector<double>& val_losses, double tau = 0.05,
                                                    std::size_t warmup = 5) {
    if (val_losses.size() < warmup + 2) {
        throw ParameterError("convergence_epoch: need at least " + std::to_string(warmup + 2) + " epochs, got " +
                             std::to_string(val_losses.size()));
    }
    if (!(tau > 0.0)) throw ParameterError("convergence_epoch: tau must be positive");
    double max_delta = 0.0;
    for (std::size_t e = std::max<std::size_t>(warmup + 1, 2); e <= val_losses.size(); ++e) {
        const double delta = std::abs(val_losses[e - 1] - val_losses[e - 2]);
        max_delta = std::max(max_delta, delta);
        const double ratio = max_delta > 0.0 ? delta / max_delta : 0.0;
        if (ratio < tau) return e;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Configuration

enum class Scheme { none, xavier, eigeninit, eigenloss, both };

inline Scheme parse_scheme(const std::string& s) {
    if (s == "none") return Scheme::none;
    if (s == "xavier") return Scheme::xavier;
    if (s == "eigeninit") return Scheme::eigeninit;
    if (s == "eigenloss") return Scheme::eigenloss;
    if (s == "both") return Scheme::both;
    throw ParameterError("unknown scheme \"" + s + "\" (expected none, xavier, eigeninit, eigenloss, both)");
}

inline const char* scheme_name(Scheme s) {
    switch (s) {
    case Scheme::none: return "none";
    case Scheme::xavier: return "xavier";
    case Scheme::eigeninit: return "eigeninit";
    case Scheme::eigenloss: return "eigenloss";
    case Scheme::both: return "both";
    }
    return "?";
}

inline bool uses_eigeninit(Scheme s) { return s == Scheme::eigeninit || s == Scheme::both; }
inline bool uses_eigenloss(Scheme s) { return s == Scheme::eigenloss || s == Scheme::both; }

enum class DatasetSource { pendulum, linear, file };

struct DatasetSpec {
    DatasetSource source = DatasetSource::pendulum;
    std::string path;               // file
    PendulumParams pendulum;        // pendulum (dt and steps also used by linear)
    std::vector<Complex> spectrum;  // linear
    std::size_t n_traj = 200;
    SplitFractions split;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    ModelShape model;
    TrainConfig train; // seed and koopman_init are filled per run
    Scheme scheme = Scheme::none;
    double gaussian_sigma = 0.0; // U init for none/eigenloss; <= 0 means 1/sqrt(n)
    std::optional<SpikeSlabSpec> eigeninit;
    std::optional<double> eigenloss_weight;
    Eigen::Index max_horizon = 50;
    double convergence_tau = 0.05;
    std::size_t convergence_warmup = 5;
    std::vector<std::uint64_t> seeds = {0};
    std::string output_dir = "runs";
    std::size_t checkpoint_every = 0;
    std::size_t jobs = 1;

    void validate() const {
        if (seeds.empty()) throw ParameterError("config: seeds must be non-empty");
        if (uses_eigeninit(scheme) != eigeninit.has_value()) {
            throw ParameterError(std::string("config: \"eigeninit\" block must be present exactly when scheme "
                                             "uses eigeninit (scheme is ") +
                                 scheme_name(scheme) + ")");
        }
        if (uses_eigenloss(scheme) != eigenloss_weight.has_value()) {
            throw ParameterError(std::string("config: \"eigenloss\" block must be present exactly when scheme "
                                             "uses eigenloss (scheme is ") +
                                 scheme_name(scheme) + ")");
        }
        if (eigeninit) eigeninit->validate();
        if (eigenloss_weight && !(*eigenloss_weight >= 0.0)) throw ParameterError("config: eigenloss weight < 0");
        if (model.latent_dim < 1) throw ParameterError("config: latent_dim must be >= 1");
        if (max_horizon < 1) throw ParameterError("config: max_horizon must be >= 1");
        if (jobs < 1) throw ParameterError("config: jobs must be >= 1");
        if (dataset.source == DatasetSource::file && dataset.path.empty()) {
            throw ParameterError("config: file dataset requires a path");
        }
        if (dataset.source == DatasetSource::linear && dataset.spectrum.empty()) {
            throw ParameterError("config: linear dataset requires a spectrum");
        }
        train.validate();
    }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ParameterError("config: " + where + " must be an object");
    for (const auto& item : obj.items()) {
        if (!allowed.count(item.key())) throw ParameterError("config: unknown key \"" + item.key() + "\" in " + where);
    }
}

template <typename T>
void read_opt(const nlohmann::json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

} // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    using detail::read_opt;
    using detail::reject_unknown;
    ExperimentConfig c;
    try {
        reject_unknown(j,
                       {"dataset", "model", "train", "scheme", "gaussian_sigma", "eigeninit", "eigenloss", "eval",
                        "convergence", "seeds", "output_dir", "checkpoint_every", "jobs"},
                       "top level");
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            reject_unknown(d,
                           {"generator", "path", "n_traj", "steps", "dt", "omega0", "f0", "omega", "x_range",
                            "v_range", "spectrum", "split"},
                           "dataset");
            const std::string gen = d.value("generator", "pendulum");
            if (gen == "pendulum") c.dataset.source = DatasetSource::pendulum;
            else if (gen == "linear") c.dataset.source = DatasetSource::linear;
            else if (gen == "file") c.dataset.source = DatasetSource::file;
            else throw ParameterError("config: unknown dataset generator \"" + gen + "\"");
            read_opt(d, "path", c.dataset.path);
            read_opt(d, "n_traj", c.dataset.n_traj);
            read_opt(d, "steps", c.dataset.pendulum.steps);
            read_opt(d, "dt", c.dataset.pendulum.dt);
            read_opt(d, "omega0", c.dataset.pendulum.omega0);
            read_opt(d, "f0", c.dataset.pendulum.f0);
            read_opt(d, "omega", c.dataset.pendulum.omega);
            read_opt(d, "x_range", c.dataset.pendulum.x_range);
            read_opt(d, "v_range", c.dataset.pendulum.v_range);
            if (d.contains("spectrum")) {
                for (const auto& e : d.at("spectrum")) {
                    if (e.is_number()) c.dataset.spectrum.emplace_back(e.get<double>(), 0.0);
                    else if (e.is_array() && e.size() == 2) c.dataset.spectrum.emplace_back(e[0].get<double>(), e[1].get<double>());
                    else throw ParameterError("config: spectrum entries must be numbers or [re, im] pairs");
                }
            }
            if (d.contains("split")) {
                const auto s = d.at("split").get<std::vector<double>>();
                if (s.size() != 3) throw ParameterError("config: split needs three fractions");
                c.dataset.split = {s[0], s[1], s[2]};
            }
        }
        if (j.contains("model")) {
            const auto& m = j.at("model");
            reject_unknown(m, {"latent_dim", "hidden"}, "model");
            read_opt(m, "latent_dim", c.model.latent_dim);
            read_opt(m, "hidden", c.model.hidden);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            reject_unknown(t,
                           {"horizon", "epochs", "batch_size", "learning_rate", "beta1", "beta2", "adam_epsilon",
                            "weight_decay", "freeze_autoencoder"},
                           "train");
            read_opt(t, "horizon", c.train.horizon);
            read_opt(t, "epochs", c.train.epochs);
            read_opt(t, "batch_size", c.train.batch_size);
            read_opt(t, "learning_rate", c.train.adam.learning_rate);
            read_opt(t, "beta1", c.train.adam.beta1);
            read_opt(t, "beta2", c.train.adam.beta2);
            read_opt(t, "adam_epsilon", c.train.adam.epsilon);
            read_opt(t, "weight_decay", c.train.adam.weight_decay);
            read_opt(t, "freeze_autoencoder", c.train.freeze_autoencoder);
        }
        if (j.contains("scheme")) c.scheme = parse_scheme(j.at("scheme").get<std::string>());
        read_opt(j, "gaussian_sigma", c.gaussian_sigma);
        if (j.contains("eigeninit")) {
            const auto& e = j.at("eigeninit");
            reject_unknown(e, {"theta", "slab"}, "eigeninit");
            if (!e.contains("theta")) throw ParameterError("config: eigeninit.theta is required");
            SpikeSlabSpec spec;
            spec.theta = e.at("theta").get<double>();
            if (e.contains("slab")) {
                const auto ab = e.at("slab").get<std::vector<double>>();
                if (ab.size() != 2) throw ParameterError("config: eigeninit.slab needs [a, b]");
                spec.slab_low = ab[0];
                spec.slab_high = ab[1];
            }
            c.eigeninit = spec;
        }
        if (j.contains("eigenloss")) {
            const auto& e = j.at("eigenloss");
            reject_unknown(e, {"weight"}, "eigenloss");
            if (!e.contains("weight")) throw ParameterError("config: eigenloss.weight is required");
            c.eigenloss_weight = e.at("weight").get<double>();
        }
        if (j.contains("eval")) {
            reject_unknown(j.at("eval"), {"max_horizon"}, "eval");
            read_opt(j.at("eval"), "max_horizon", c.max_horizon);
        }
        if (j.contains("convergence")) {
            reject_unknown(j.at("convergence"), {"tau", "warmup"}, "convergence");
            read_opt(j.at("convergence"), "tau", c.convergence_tau);
            read_opt(j.at("convergence"), "warmup", c.convergence_warmup);
        }
        read_opt(j, "seeds", c.seeds);
        read_opt(j, "output_dir", c.output_dir);
        read_opt(j, "checkpoint_every", c.checkpoint_every);
        read_opt(j, "jobs", c.jobs);
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError("config " + path + ": " + e.what());
    }
    return parse_config(j);
}

// Canonical JSON form of a config; parse_config(to_json(c)) reproduces c.
inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json d;
    switch (c.dataset.source) {
    case DatasetSource::pendulum:
        d = {{"generator", "pendulum"}, {"omega0", c.dataset.pendulum.omega0}, {"f0", c.dataset.pendulum.f0},
             {"omega", c.dataset.pendulum.omega}, {"x_range", c.dataset.pendulum.x_range},
             {"v_range", c.dataset.pendulum.v_range}};
        break;
    case DatasetSource::linear: {
        nlohmann::json spec = nlohmann::json::array();
        for (const auto& l : c.dataset.spectrum) spec.push_back({l.real(), l.imag()});
        d = {{"generator", "linear"}, {"spectrum", spec}};
        break;
    }
    case DatasetSource::file: d = {{"generator", "file"}, {"path", c.dataset.path}}; break;
    }
    if (c.dataset.source != DatasetSource::file) {
        d["n_traj"] = c.dataset.n_traj;
        d["steps"] = c.dataset.pendulum.steps;
        d["dt"] = c.dataset.pendulum.dt;
    }
    d["split"] = {c.dataset.split.train, c.dataset.split.val, c.dataset.split.test};
    nlohmann::json j = {
        {"dataset", d},
        {"model", {{"latent_dim", c.model.latent_dim}, {"hidden", c.model.hidden}}},
        {"train",
         {{"horizon", c.train.horizon},
          {"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"learning_rate", c.train.adam.learning_rate},
          {"beta1", c.train.adam.beta1},
          {"beta2", c.train.adam.beta2},
          {"adam_epsilon", c.train.adam.epsilon},
          {"weight_decay", c.train.adam.weight_decay},
          {"freeze_autoencoder", c.train.freeze_autoencoder}}},
        {"scheme", scheme_name(c.scheme)},
        {"gaussian_sigma", c.gaussian_sigma},
        {"eval", {{"max_horizon", c.max_horizon}}},
        {"convergence", {{"tau", c.convergence_tau}, {"warmup", c.convergence_warmup}}},
        {"seeds", c.seeds},
        {"output_dir", c.output_dir},
        {"checkpoint_every", c.checkpoint_every},
        {"jobs", c.jobs},
    };
    if (c.eigeninit) j["eigeninit"] = {{"theta", c.eigeninit->theta}, {"slab", {c.eigeninit->slab_low, c.eigeninit->slab_high}}};
    if (c.eigenloss_weight) j["eigenloss"] = {{"weight", *c.eigenloss_weight}};
    return j;
}

// ---------------------------------------------------------------------------
// Seed streams and dataset construction

enum class Stream : std::uint64_t { dataset = 1, network = 2, koopman = 3, shuffle = 4, report = 5 };

inline Rng make_rng(std::uint64_t seed, Stream stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), 0x4b414531u};
    return Rng(seq);
}

inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream) { return make_rng(seed, stream)(); }

// Raw (unsplit) dataset for a seed; file datasets are returned as stored.
inline Dataset generate_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    if (spec.source == DatasetSource::file) return read_dataset(spec.path);
    Rng rng = make_rng(seed, Stream::dataset);
    if (spec.source == DatasetSource::pendulum) return simulate_pendulum(spec.pendulum, spec.n_traj, rng);
    auto lin = gen_linear_dataset(spec.spectrum, static_cast<Eigen::Index>(spec.spectrum.size()), spec.n_traj,
                                  spec.pendulum.steps, rng);
    return std::move(lin.dataset);
}

// Split and standardise unless the dataset already carries statistics.
inline Dataset prepare_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    Dataset d = generate_dataset(spec, seed);
    if (d.stats) return d;
    return standardize_split(std::move(d), spec.split);
}

inline KoopmanInit koopman_init_for(const ExperimentConfig& c) {
    switch (c.scheme) {
    case Scheme::xavier: return XavierKoopmanInit{};
    case Scheme::eigeninit:
    case Scheme::both: return EigenKoopmanInit{*c.eigeninit};
    default: return GaussianKoopmanInit{c.gaussian_sigma};
    }
}

inline TrainConfig train_config_for(const ExperimentConfig& c, std::uint64_t seed) {
    TrainConfig t = c.train;
    t.seed = derive_seed(seed, Stream::shuffle);
    t.koopman_init = koopman_init_for(c);
    t.eigenloss_weight = c.eigenloss_weight.value_or(0.0);
    return t;
}

inline KaeModel model_for(const ExperimentConfig& c, Eigen::Index state_dim, std::uint64_t seed) {
    Rng net = make_rng(seed, Stream::network);
    Rng koop = make_rng(seed, Stream::koopman);
    return build_model(state_dim, c.model, koopman_init_for(c), net, koop);
}

// ---------------------------------------------------------------------------
// CSV helpers

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string losses_csv(const MetricsLog& log) {
    std::string out = "epoch,train_loss,val_loss,eigenloss_term\n";
    for (std::size_t e = 0; e < log.epochs(); ++e) {
        out += std::to_string(e + 1) + "," + format_double(log.train_loss[e]) + "," + format_double(log.val_loss[e]) +
               "," + format_double(log.eigenloss_term[e]) + "\n";
    }
    return out;
}

inline std::string heatmap_csv(const MetricsLog& log) {
    std::string out = "epoch";
    const auto n = log.moduli.empty() ? 0 : log.moduli.front().size();
    for (Eigen::Index j = 0; j < n; ++j) out += ",lambda_" + std::to_string(j + 1);
    out += "\n";
    for (std::size_t e = 0; e < log.moduli.size(); ++e) {
        out += std::to_string(e);
        for (Eigen::Index j = 0; j < n; ++j) out += "," + format_double(log.moduli[e][j]);
        out += "\n";
    }
    return out;
}

inline std::string horizons_csv(const HorizonErrors& h) {
    std::string out = "horizon,mse\n";
    for (std::size_t l = 0; l < h.per_horizon.size(); ++l) {
        out += std::to_string(l + 1) + "," + format_double(h.per_horizon[l]) + "\n";
    }
    return out;
}

inline std::string timing_csv(const MetricsLog& log) {
    std::string out = "epoch,wall_ms\n";
    for (std::size_t e = 0; e < log.wall_ms.size(); ++e) {
        out += std::to_string(e + 1) + "," + format_double(log.wall_ms[e]) + "\n";
    }
    return out;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    binary::write_file(p.string(), text);
}

// ---------------------------------------------------------------------------
// Experiment runs

struct SeedResult {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    MetricsLog log;
};

struct SeedSummary {
    std::string run;
    double cumulative_error = 0.0;
    double convergence_epoch = 0.0; // censored at the epoch count when never converged
    bool converged = false;
    double final_train_loss = 0.0;
    double final_val_loss = 0.0;
    double final_eigenloss = 0.0; // unweighted sum (|lambda| - 1)^2 of the final U
    std::vector<double> horizons;
};

struct ExperimentResult {
    std::vector<SeedResult> seeds;
    std::vector<SeedSummary> summaries; // successful seeds only
    SeedSummary mean;
    SeedSummary stddev;
    std::string config_hash;
};

inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline SeedSummary summarize(const MetricsLog& log, std::uint64_t seed) {
    SeedSummary s;
    s.run = "seed_" + std::to_string(seed);
    s.cumulative_error = log.test.cumulative;
    s.converged = log.convergence_epoch.has_value();
    s.convergence_epoch = static_cast<double>(log.convergence_epoch.value_or(log.epochs()));
    s.final_train_loss = log.train_loss.empty() ? std::nan("") : log.train_loss.back();
    s.final_val_loss = log.val_loss.empty() ? std::nan("") : log.val_loss.back();
    s.final_eigenloss = eigenloss_from_moduli(log.moduli.back());
    s.horizons = log.test.per_horizon;
    return s;
}

// Column-wise mean and sample standard deviation (0 for a single run).
inline std::pair<SeedSummary, SeedSummary> aggregate(const std::vector<SeedSummary>& runs) {
    SeedSummary mean, sd;
    mean.run = "mean";
    sd.run = "std";
    if (runs.empty()) return {mean, sd};
    const std::size_t h = runs.front().horizons.size();
    auto fields = [h](const SeedSummary& s) {
        std::vector<double> v{s.cumulative_error, s.convergence_epoch, s.final_train_loss, s.final_val_loss,
                              s.final_eigenloss};
        v.insert(v.end(), s.horizons.begin(), s.horizons.begin() + static_cast<std::ptrdiff_t>(h));
        return v;
    };
    const std::size_t k = 5 + h;
    std::vector<double> m(k, 0.0), var(k, 0.0);
    for (const auto& r : runs) {
        const auto f = fields(r);
        for (std::size_t i = 0; i < k; ++i) m[i] += f[i];
    }
    for (auto& v : m) v /= static_cast<double>(runs.size());
    if (runs.size() > 1) {
        for (const auto& r : runs) {
            const auto f = fields(r);
            for (std::size_t i = 0; i < k; ++i) var[i] += (f[i] - m[i]) * (f[i] - m[i]);
        }
        for (auto& v : var) v = std::sqrt(v / static_cast<double>(runs.size() - 1));
    }
    auto fill = [h](SeedSummary& s, const std::vector<double>& v) {
        s.cumulative_error = v[0];
        s.convergence_epoch = v[1];
        s.final_train_loss = v[2];
        s.final_val_loss = v[3];
        s.final_eigenloss = v[4];
        s.horizons.assign(v.begin() + 5, v.begin() + 5 + static_cast<std::ptrdiff_t>(h));
    };
    fill(mean, m);
    fill(sd, var);
    return {mean, sd};
}

inline std::string aggregate_csv(const std::vector<SeedSummary>& runs, const SeedSummary& mean,
                                 const SeedSummary& sd) {
    std::string out = "run,cumulative_error,convergence_epoch,final_train_loss,final_val_loss,final_eigenloss";
    const std::size_t h = mean.horizons.size();
    for (std::size_t l = 0; l < h; ++l) out += ",h" + std::to_string(l + 1);
    out += "\n";
    auto row = [&](const SeedSummary& s, bool per_seed) {
        std::string r = s.run + "," + format_double(s.cumulative_error) + ",";
        if (!per_seed || s.converged) r += format_double(s.convergence_epoch);
        r += "," + format_double(s.final_train_loss) + "," + format_double(s.final_val_loss) + "," +
             format_double(s.final_eigenloss);
        for (std::size_t l = 0; l < h; ++l) r += "," + format_double(s.horizons[l]);
        return r + "\n";
    };
    for (const auto& r : runs) out += row(r, true);
    out += row(mean, false);
    out += row(sd, false);
    return out;
}

// Full pipeline for one seed; writes the per-seed files into out_dir.
inline SeedResult run_seed(const ExperimentConfig& c, std::uint64_t seed, const std::filesystem::path& out_dir) {
    SeedResult res;
    res.seed = seed;
    try {
        const Dataset d = prepare_dataset(c.dataset, seed);
        KaeModel model = model_for(c, d.state_dim(), seed);
        const TrainConfig tc = train_config_for(c, seed);
        EpochCallback on_epoch;
        if (c.checkpoint_every > 0) {
            on_epoch = [&](std::size_t epoch, const KaeModel& m) {
                if (epoch % c.checkpoint_every != 0 && epoch != tc.epochs) return;
                const auto name = "model_" + std::to_string(seed) + "_e" + std::to_string(epoch) + ".kae1";
                binary::write_file((out_dir / name).string(), encode_checkpoint(m.parameters()));
            };
        }
        res.log = train(model, d, tc, on_epoch);
        if (res.log.epochs() >= c.convergence_warmup + 2) {
            res.log.convergence_epoch = convergence_epoch(res.log.val_loss, c.convergence_tau, c.convergence_warmup);
        }
        res.log.test = evaluate_horizons(model, d, c.max_horizon);
        const auto tag = std::to_string(seed);
        write_text(out_dir / ("losses_" + tag + ".csv"), losses_csv(res.log));
        write_text(out_dir / ("eig_heatmap_" + tag + ".csv"), heatmap_csv(res.log));
        write_text(out_dir / ("horizons_" + tag + ".csv"), horizons_csv(res.log.test));
        write_text(out_dir / ("timing_" + tag + ".csv"), timing_csv(res.log));
        binary::write_file((out_dir / ("model_" + tag + ".kae1")).string(), encode_checkpoint(std::as_const(model).parameters()));
        res.ok = true;
    } catch (const std::exception& e) {
        res.ok = false;
        res.error = e.what();
    }
    return res;
}

// Runs every seed (up to c.jobs concurrently), then writes aggregate.csv and
// manifest.json. Throws if every seed failed.
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
    c.validate();
    const std::filesystem::path out_dir(c.output_dir);
    std::filesystem::create_directories(out_dir);
    ExperimentResult result;
    result.config_hash = fnv1a_hex(to_json(c).dump());
    result.seeds.resize(c.seeds.size());
    for (std::size_t b = 0; b < c.seeds.size(); b += c.jobs) {
        const std::size_t e = std::min(c.seeds.size(), b + c.jobs);
        std::vector<std::future<SeedResult>> pending;
        for (std::size_t i = b; i < e; ++i) {
            pending.push_back(std::async(std::launch::async, [&, i] { return run_seed(c, c.seeds[i], out_dir); }));
        }
        for (std::size_t i = b; i < e; ++i) result.seeds[i] = pending[i - b].get();
    }
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& s : result.seeds) {
        nlohmann::json entry = {{"seed", s.seed}, {"status", s.ok ? "ok" : "failed"}};
        if (!s.ok) entry["error"] = s.error;
        seeds.push_back(entry);
        if (s.ok) result.summaries.push_back(summarize(s.log, s.seed));
    }
    std::tie(result.mean, result.stddev) = aggregate(result.summaries);
    write_text(out_dir / "aggregate.csv", aggregate_csv(result.summaries, result.mean, result.stddev));
    const nlohmann::json manifest = {
        {"config_hash", result.config_hash},
        {"config", to_json(c)},
        {"versions", {{"kae", library_version}, {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                                              std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                                              std::to_string(EIGEN_MINOR_VERSION)},
                      {"compiler", __VERSION__}}},
        {"seeds", seeds},
    };
    write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
    if (result.summaries.empty()) {
        throw Error("run_experiment: all " + std::to_string(c.seeds.size()) + " seeds failed; first error: " +
                    result.seeds.front().error);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Initialisation spectrum report

struct SpectrumScheme {
    std::string name;
    KoopmanInit init;
};

struct SpectrumHistogram {
    std::string scheme;
    std::vector<std::size_t> counts; // bins of width bin_width over [0, range)
    std::size_t overflow = 0;        // moduli >= range
    double mean_modulus = 0.0;
    std::size_t total = 0;
};

struct InitSpectrumReport {
    double bin_width = 0.05;
    double range = 2.0;
    std::vector<SpectrumHistogram> schemes;
};

// Element-wise schemes draw `depth` layers n -> width -> ... -> width -> n and
// record the eigenvalue moduli of their product (an n x n operator). Gaussian
// layers use the scheme's sigma (default 1/sqrt(n)) and Xavier layers their own
// fan-in/fan-out. Eigeninit draws a single operator whose moduli are set directly.
inline RealMatrix draw_spectrum_operator(Eigen::Index n, std::size_t depth, Eigen::Index width,
                                         const KoopmanInit& init, Rng& rng) {
    if (std::holds_alternative<EigenKoopmanInit>(init)) return init_koopman(n, init, rng);
    if (width <= 0) width = n;
    WeightInit layer_init = WeightInit::xavier();
    if (const auto* g = std::get_if<GaussianKoopmanInit>(&init)) {
        layer_init = WeightInit::gaussian(g->sigma > 0.0 ? g->sigma : 1.0 / std::sqrt(static_cast<double>(n)));
    }
    RealMatrix op;
    for (std::size_t l = 0; l < depth; ++l) {
        const Eigen::Index in = l == 0 ? n : width;
        const Eigen::Index out = l + 1 == depth ? n : width;
        RealMatrix w = init_weights(out, in, layer_init, rng);
        op = l == 0 ? std::move(w) : RealMatrix(w * op);
    }
    return op;
}

inline InitSpectrumReport init_spectrum_report(Eigen::Index n, std::size_t depth, Eigen::Index width,
                                               const std::vector<SpectrumScheme>& schemes, std::size_t samples,
                                               Rng& rng) {
    if (samples < 1) throw ParameterError("init_spectrum_report: samples must be >= 1");
    if (n < 1 || depth < 1) throw ParameterError("init_spectrum_report: n and depth must be >= 1");
    InitSpectrumReport rep;
    const auto bins = static_cast<std::size_t>(std::llround(rep.range / rep.bin_width));
    for (const auto& scheme : schemes) {
        SpectrumHistogram h;
        h.scheme = scheme.name;
        h.counts.assign(bins, 0);
        double sum = 0.0;
        for (std::size_t s = 0; s < samples; ++s) {
            const RealMatrix op = draw_spectrum_operator(n, depth, width, scheme.init, rng);
            const RealVector mod = eig_decompose(op).moduli();
            for (Eigen::Index j = 0; j < mod.size(); ++j) {
                sum += mod[j];
                ++h.total;
                // values within 1e-9 below an edge land in the upper bin
                const auto bin = static_cast<std::size_t>(std::floor(mod[j] / rep.bin_width + 1e-9));
                if (bin >= bins) ++h.overflow;
                else ++h.counts[bin];
            }
        }
        h.mean_modulus = sum / static_cast<double>(h.total);
        rep.schemes.push_back(std::move(h));
    }
    return rep;
}

inline std::string init_spectrum_csv(const InitSpectrumReport& rep) {
    std::string out = "scheme,bin_low,bin_high,count\n";
    for (const auto& h : rep.schemes) {
        for (std::size_t b = 0; b < h.counts.size(); ++b) {
            out += h.scheme + "," + format_double(static_cast<double>(b) * rep.bin_width) + "," +
                   format_double(static_cast<double>(b + 1) * rep.bin_width) + "," + std::to_string(h.counts[b]) +
                   "\n";
        }
        out += h.scheme + "," + format_double(rep.range) + ",inf," + std::to_string(h.overflow) + "\n";
    }
    return out;
}

inline std::string init_spectrum_summary_csv(const InitSpectrumReport& rep) {
    std::string out = "scheme,moduli,mean_modulus\n";
    for (const auto& h : rep.schemes) {
        out += h.scheme + "," + std::to_string(h.total) + "," + format_double(h.mean_modulus) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Theta estimation from a dataset

struct ThetaEstimate {
    double theta = 0.0;
    DmdResult dmd;
};

// Snapshot pairs (x_t, x_{t+1}) from every trajectory, rank-n exact DMD.
inline ThetaEstimate estimate_theta_for(const Dataset& d, Eigen::Index latent_dim,
                                        double tol = Tolerances::unit_modulus_tol) {
    Eigen::Index pairs = 0;
    for (const auto& t : d.trajectories) pairs += t.length() - 1;
    if (pairs < 1) throw ParameterError("estimate_theta: dataset has no snapshot pairs");
    RealMatrix before(d.state_dim(), pairs), after(d.state_dim(), pairs);
    Eigen::Index col = 0;
    for (const auto& t : d.trajectories) {
        const auto m = t.length() - 1;
        before.middleCols(col, m) = t.states.leftCols(m);
        after.middleCols(col, m) = t.states.rightCols(m);
        col += m;
    }
    ThetaEstimate est;
    est.dmd = exact_dmd(before, after, latent_dim);
    est.theta = estimate_theta(est.dmd.eigenvalues, tol);
    return est;
}

} // namespace kae
