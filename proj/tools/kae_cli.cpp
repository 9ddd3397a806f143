// Command-line front end for dataset generation, training runs, evaluation,
// theta estimation and initialisation spectrum reports.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kae/kae.hpp"

namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

kae::ExperimentConfig load_with_overrides(const GlobalOptions& g) {
    if (g.config.empty()) throw kae::ParameterError("--config is required for this subcommand");
    auto cfg = kae::load_config(g.config);
    if (g.seed) cfg.seeds = {*g.seed};
    if (!g.out.empty()) cfg.output_dir = g.out;
    cfg.validate();
    return cfg;
}

int cmd_gen_data(const GlobalOptions& g, bool raw) {
    const auto cfg = load_with_overrides(g);
    if (g.out.empty()) throw kae::ParameterError("--out <file.kds> is required for gen-data");
    const auto seed = cfg.seeds.front();
    const auto d = raw ? kae::generate_dataset(cfg.dataset, seed) : kae::prepare_dataset(cfg.dataset, seed);
    kae::write_dataset(g.out, d);
    std::cout << "wrote " << d.trajectories.size() << " trajectories (state dim " << d.state_dim() << ") to "
              << g.out << "\n";
    return 0;
}

int cmd_train(const GlobalOptions& g) {
    const auto cfg = load_with_overrides(g);
    const auto res = kae::run_experiment(cfg);
    std::cout << "scheme " << kae::scheme_name(cfg.scheme) << ", config " << res.config_hash << "\n";
    for (const auto& s : res.seeds) {
        if (!s.ok) {
            std::cout << "  seed " << s.seed << ": FAILED: " << s.error << "\n";
            continue;
        }
        std::cout << "  seed " << s.seed << ": final val " << s.log.val_loss.back() << ", cumulative test error "
                  << s.log.test.cumulative << ", convergence epoch ";
        if (s.log.convergence_epoch) std::cout << *s.log.convergence_epoch << "\n";
        else std::cout << "none\n";
    }
    std::cout << "mean cumulative test error " << res.mean.cumulative_error << ", mean convergence epoch "
              << res.mean.convergence_epoch << "\noutputs in " << cfg.output_dir << "\n";
    bool all_ok = true;
    for (const auto& s : res.seeds) all_ok = all_ok && s.ok;
    return all_ok ? 0 : 3;
}

int cmd_eval(const GlobalOptions& g, const std::string& checkpoint, const std::string& dataset_path,
             std::optional<long> max_horizon) {
    const auto cfg = load_with_overrides(g);
    const auto d = dataset_path.empty() ? kae::prepare_dataset(cfg.dataset, cfg.seeds.front())
                                        : kae::read_dataset(dataset_path);
    auto model = kae::model_for(cfg, d.state_dim(), cfg.seeds.front());
    kae::load_checkpoint(kae::decode_checkpoint(kae::binary::read_file(checkpoint)), model.parameters());
    const auto h = kae::evaluate_horizons(model, d, max_horizon.value_or(cfg.max_horizon));
    const auto csv = kae::horizons_csv(h);
    if (!g.out.empty()) kae::write_text(g.out, csv);
    else std::cout << csv;
    std::cout << "cumulative test error " << kae::format_double(h.cumulative) << "\n";
    return 0;
}

int cmd_estimate_theta(const std::string& dataset_path, long latent, double tol) {
    const auto d = kae::read_dataset(dataset_path);
    const auto est = kae::estimate_theta_for(d, latent, tol);
    std::cout << "theta " << kae::format_double(est.theta) << "\nmoduli";
    for (Eigen::Index j = 0; j < est.dmd.eigenvalues.size(); ++j) {
        std::cout << " " << std::abs(est.dmd.eigenvalues[j]);
    }
    std::cout << "\n";
    return 0;
}

int cmd_init_spectrum(const GlobalOptions& g, long n, std::size_t depth, long width, std::size_t samples, double theta,
                      double sigma) {
    kae::Rng rng = kae::make_rng(g.seed.value_or(0), kae::Stream::report);
    kae::SpikeSlabSpec spec;
    spec.theta = theta;
    const std::vector<kae::SpectrumScheme> schemes = {
        {"eigeninit", kae::EigenKoopmanInit{spec}},
        {"gaussian", kae::GaussianKoopmanInit{sigma}},
        {"xavier", kae::XavierKoopmanInit{}},
    };
    const auto rep = kae::init_spectrum_report(n, depth, width, schemes, samples, rng);
    const fs::path dir = g.out.empty() ? fs::path(".") : fs::path(g.out);
    fs::create_directories(dir);
    kae::write_text(dir / "init_spectrum.csv", kae::init_spectrum_csv(rep));
    kae::write_text(dir / "init_spectrum_summary.csv", kae::init_spectrum_summary_csv(rep));
    std::cout << kae::init_spectrum_summary_csv(rep);
    return 0;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw kae::Error("cannot open " + p.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

int cmd_report(const std::vector<std::string>& dirs) {
    std::cout << std::left << std::setw(32) << "run" << std::setw(12) << "scheme" << std::setw(8) << "seeds"
              << std::setw(22) << "cumulative_error" << std::setw(18) << "convergence" << "final_eigenloss\n";
    for (const auto& dir : dirs) {
        const fs::path base(dir);
        std::ifstream mf(base / "manifest.json");
        if (!mf) throw kae::Error("no manifest.json in " + dir);
        const auto manifest = nlohmann::json::parse(mf);
        std::size_t ok = 0;
        for (const auto& s : manifest.at("seeds")) ok += s.at("status") == "ok";
        const auto rows = read_csv(base / "aggregate.csv");
        for (const auto& r : rows) {
            if (r.empty() || r[0] != "mean") continue;
            std::cout << std::left << std::setw(32) << base.filename().string() << std::setw(12)
                      << manifest.at("config").at("scheme").get<std::string>() << std::setw(8)
                      << (std::to_string(ok) + "/" + std::to_string(manifest.at("seeds").size())) << std::setw(22)
                      << r.at(1) << std::setw(18) << r.at(2) << r.at(5) << "\n";
        }
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Koopman autoencoder training with spectral initialisation and penalties"};
    app.require_subcommand(1);
    GlobalOptions g;
    std::uint64_t seed_value = 0;
    app.add_option("--config", g.config, "Experiment configuration (JSON)");
    auto* seed_opt = app.add_option("--seed", seed_value, "Run a single seed instead of the configured list");
    app.add_option("--out", g.out, "Output path (file or directory, depending on the subcommand)");

    bool raw = false;
    auto* gen = app.add_subcommand("gen-data", "Generate a dataset and write it as KDS1");
    gen->add_flag("--raw", raw, "Skip the train/val/test split and standardisation");
    gen->fallthrough();

    auto* train = app.add_subcommand("train", "Run the configured experiment for every seed");
    train->fallthrough();

    std::string checkpoint, dataset_path;
    std::optional<long> max_horizon;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    eval->add_option("--checkpoint", checkpoint, "KAE1 checkpoint file")->required();
    eval->add_option("--dataset", dataset_path, "KDS1 dataset (defaults to regenerating from the config)");
    eval->add_option("--max-horizon", max_horizon, "Largest prediction horizon");
    eval->fallthrough();

    long latent = 0;
    double tol = kae::Tolerances::unit_modulus_tol;
    auto* theta = app.add_subcommand("estimate-theta", "Estimate eigeninit theta from a dataset with DMD");
    theta->add_option("--dataset", dataset_path, "KDS1 dataset")->required();
    theta->add_option("--latent", latent, "Koopman latent dimension (DMD rank)")->required();
    theta->add_option("--tol", tol, "Unit-modulus tolerance");
    theta->fallthrough();

    long n = 4;
    long width = 0;
    std::size_t depth = 6, samples = 10000;
    double spec_theta = 0.0, sigma = 0.0;
    auto* spectrum = app.add_subcommand("init-spectrum", "Histogram eigenvalue moduli of initialisation schemes");
    spectrum->add_option("--n", n, "Operator size");
    spectrum->add_option("--depth", depth, "Factors multiplied for element-wise schemes");
    spectrum->add_option("--width", width, "Hidden width of element-wise products (default n)");
    spectrum->add_option("--samples", samples, "Operators drawn per scheme");
    spectrum->add_option("--theta", spec_theta, "Eigeninit slab probability");
    spectrum->add_option("--sigma", sigma, "Gaussian std (default 1/sqrt(n))");
    spectrum->fallthrough();

    std::vector<std::string> report_dirs;
    auto* report = app.add_subcommand("report", "Summarise one or more experiment output directories");
    report->add_option("dirs", report_dirs, "Experiment output directories")->required();
    report->fallthrough();

    CLI11_PARSE(app, argc, argv);
    if (seed_opt->count() > 0) g.seed = seed_value;

    try {
        if (*gen) return cmd_gen_data(g, raw);
        if (*train) return cmd_train(g);
        if (*eval) return cmd_eval(g, checkpoint, dataset_path, max_horizon);
        if (*theta) return cmd_estimate_theta(dataset_path, latent, tol);
        if (*spectrum) return cmd_init_spectrum(g, n, depth, width, samples, spec_theta, sigma);
        if (*report) return cmd_report(report_dirs);
    } catch (const kae::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
