#pragma once

// Synthetic trajectories (driven pendulum, spectrum-controlled linear maps),
// trajectory-level splitting with training-set standardisation, window
// enumeration and the KDS1 dataset file format.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "kae/binary_io.hpp"
#include "kae/errors.hpp"
#include "kae/nn.hpp"
#include "kae/spectral.hpp"
#include "kae/tolerances.hpp"

namespace kae {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2, unassigned = 3 };

inline const char* split_name(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
    }
    return "?";
}

struct Trajectory {
    RealMatrix states; // state_dim x length, column t is the state at step t
    double dt = 1.0;

    Eigen::Index length() const { return states.cols(); }
};

struct Standardization {
    RealVector mean;
    RealVector std; // population std over training states; <= threshold means constant

    bool is_constant(Eigen::Index f) const { return !(std[f] > Tolerances::constant_feature_std); }
    double scale(Eigen::Index f) const { return is_constant(f) ? 1.0 : std[f]; }
};

struct Dataset {
    double dt = 1.0;
    std::vector<Trajectory> trajectories;
    std::vector<Split> splits; // one per trajectory
    std::optional<Standardization> stats;
    nlohmann::json metadata = nlohmann::json::object();

    Eigen::Index state_dim() const { return trajectories.empty() ? 0 : trajectories.front().states.rows(); }

    std::vector<std::size_t> indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < splits.size(); ++i) {
            if (splits[i] == s) out.push_back(i);
        }
        return out;
    }
};

inline void validate_dataset(const Dataset& d) {
    if (d.splits.size() != d.trajectories.size()) throw ParameterError("dataset: split count mismatch");
    if (!(d.dt > 0.0)) throw ParameterError("dataset: dt must be positive");
    for (const auto& t : d.trajectories) {
        if (t.states.rows() != d.state_dim()) throw DimensionError("dataset: inconsistent state dimension");
        if (t.length() < 2) throw ParameterError("dataset: trajectory with fewer than 2 states");
        if (!t.states.allFinite()) throw ParameterError("dataset: non-finite state");
    }
}

// ---------------------------------------------------------------------------
// Driven pendulum: x'' + omega0^2 x = f0 sin(omega t)

struct PendulumParams {
    double omega0 = 3.13;
    double f0 = 1.0;
    double omega = 1.0;
    double dt = 0.02;
    std::size_t steps = 600;
    double x_range = std::numbers::pi; // x0 ~ U(-x_range, x_range)
    double v_range = 1.0;              // v0 ~ U(-v_range, v_range)

    void validate() const {
        if (!(dt > 0.0)) throw ParameterError("pendulum: dt must be positive");
        if (steps < 2) throw ParameterError("pendulum: need at least 2 steps");
        if (!(x_range >= 0.0) || !(v_range >= 0.0)) throw ParameterError("pendulum: negative range");
    }
};

// Classic RK4 on (x, v); returns 2 x steps with column k at t = k dt.
inline RealMatrix simulate_trajectory(const PendulumParams& p, double x0, double v0) {
    p.validate();
    RealMatrix out(2, static_cast<Eigen::Index>(p.steps));
    const double w2 = p.omega0 * p.omega0;
    auto accel = [&](double t, double x) { return -w2 * x + p.f0 * std::sin(p.omega * t); };
    double x = x0, v = v0;
    out(0, 0) = x;
    out(1, 0) = v;
    for (std::size_t k = 1; k < p.steps; ++k) {
        const double t = static_cast<double>(k - 1) * p.dt;
        const double h = p.dt;
        const double k1x = v;
        const double k1v = accel(t, x);
        const double k2x = v + 0.5 * h * k1v;
        const double k2v = accel(t + 0.5 * h, x + 0.5 * h * k1x);
        const double k3x = v + 0.5 * h * k2v;
        const double k3v = accel(t + 0.5 * h, x + 0.5 * h * k2x);
        const double k4x = v + h * k3v;
        const double k4v = accel(t + h, x + h * k3x);
        x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        out(0, static_cast<Eigen::Index>(k)) = x;
        out(1, static_cast<Eigen::Index>(k)) = v;
    }
    return out;
}

inline Dataset simulate_pendulum(const PendulumParams& p, std::size_t n_traj, Rng& rng) {
    p.validate();
    if (n_traj < 1) throw ParameterError("pendulum: need at least one trajectory");
    std::uniform_real_distribution<double> xdist(-p.x_range, p.x_range);
    std::uniform_real_distribution<double> vdist(-p.v_range, p.v_range);
    Dataset d;
    d.dt = p.dt;
    for (std::size_t i = 0; i < n_traj; ++i) {
        const double x0 = xdist(rng);
        const double v0 = vdist(rng);
        d.trajectories.push_back({simulate_trajectory(p, x0, v0), p.dt});
    }
    d.splits.assign(n_traj, Split::unassigned);
    d.metadata = {{"generator", "pendulum"}, {"omega0", p.omega0}, {"f0", p.f0},       {"omega", p.omega},
                  {"dt", p.dt},              {"steps", p.steps},   {"n_traj", n_traj}};
    return d;
}

// ---------------------------------------------------------------------------
// Linear systems with a prescribed spectrum

struct LinearDataset {
    Dataset dataset;
    RealMatrix generator;
};

inline RealMatrix random_orthogonal(Eigen::Index dim, Rng& rng) {
    const RealMatrix g = init_weights(dim, dim, WeightInit::gaussian(1.0), rng);
    Eigen::HouseholderQR<RealMatrix> qr(g);
    RealMatrix q = qr.householderQ();
    const RealMatrix r = qr.matrixQR();
    for (Eigen::Index j = 0; j < dim; ++j) {
        if (r(j, j) < 0.0) q.col(j) *= -1.0;
    }
    return q;
}

// Real matrix with the given conjugate-closed spectrum: 2x2 rotation-scaling
// blocks for pairs and scalars for real values, in a random orthogonal basis.
inline RealMatrix matrix_with_spectrum(const std::vector<Complex>& spectrum, Rng& rng) {
    const auto dim = static_cast<Eigen::Index>(spectrum.size());
    if (dim < 1) throw ParameterError("linear system: empty spectrum");
    RealMatrix block = RealMatrix::Zero(dim, dim);
    std::vector<bool> used(spectrum.size(), false);
    Eigen::Index pos = 0;
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
        if (used[i]) continue;
        const Complex l = spectrum[i];
        const double tol = Tolerances::pairing_tolerance * std::max(1.0, std::abs(l));
        used[i] = true;
        if (std::abs(l.imag()) <= tol) {
            block(pos, pos) = l.real();
            ++pos;
            continue;
        }
        std::size_t k = i + 1;
        while (k < spectrum.size() && (used[k] || std::abs(spectrum[k] - std::conj(l)) > tol)) ++k;
        if (k == spectrum.size()) {
            throw ParameterError("linear system: spectrum is not closed under conjugation");
        }
        used[k] = true;
        const double a = l.real(), b = std::abs(l.imag());
        block(pos, pos) = a;
        block(pos, pos + 1) = -b;
        block(pos + 1, pos) = b;
        block(pos + 1, pos + 1) = a;
        pos += 2;
    }
    const RealMatrix q = random_orthogonal(dim, rng);
    return q * block * q.transpose();
}

inline LinearDataset gen_linear_dataset(const std::vector<Complex>& spectrum, Eigen::Index dim, std::size_t n_traj,
                                        std::size_t steps, Rng& rng) {
    if (static_cast<Eigen::Index>(spectrum.size()) != dim) {
        throw ParameterError("linear system: spectrum length must equal the state dimension");
    }
    if (steps < 2 || n_traj < 1) throw ParameterError("linear system: need >= 1 trajectory of >= 2 steps");
    LinearDataset out;
    out.generator = matrix_with_spectrum(spectrum, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset& d = out.dataset;
    d.dt = 1.0;
    for (std::size_t i = 0; i < n_traj; ++i) {
        RealVector x(dim);
        for (Eigen::Index j = 0; j < dim; ++j) x[j] = normal(rng);
        x /= x.norm();
        RealMatrix states(dim, static_cast<Eigen::Index>(steps));
        states.col(0) = x;
        for (std::size_t k = 1; k < steps; ++k) {
            states.col(static_cast<Eigen::Index>(k)) = out.generator * states.col(static_cast<Eigen::Index>(k - 1));
        }
        d.trajectories.push_back({std::move(states), 1.0});
    }
    d.splits.assign(n_traj, Split::unassigned);
    nlohmann::json spec = nlohmann::json::array();
    for (const auto& l : spectrum) spec.push_back({l.real(), l.imag()});
    d.metadata = {{"generator", "linear"}, {"spectrum", spec}, {"dim", dim}, {"steps", steps}, {"n_traj", n_traj}};
    return out;
}

// ---------------------------------------------------------------------------
// Splitting and standardisation

struct SplitFractions {
    double train = 0.7;
    double val = 0.15;
    double test = 0.15;
};

// Assigns the first trajectories to train, then val, then test, and
// standardises every split with statistics from the training split.
inline Dataset standardize_split(Dataset d, const SplitFractions& f) {
    if (!(f.train > 0.0 && f.val > 0.0 && f.test > 0.0) || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
        throw ParameterError("standardize_split: fractions must be positive and sum to 1");
    }
    if (d.stats) throw StateError("standardize_split: dataset is already standardised");
    const std::size_t total = d.trajectories.size();
    const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(total)));
    const auto n_val = static_cast<std::size_t>(std::llround(f.val * static_cast<double>(total)));
    if (n_train < 1 || n_val < 1 || n_train + n_val >= total) {
        throw ParameterError("standardize_split: " + std::to_string(total) +
                             " trajectories are too few for a non-empty train/val/test split");
    }
    d.splits.assign(total, Split::test);
    for (std::size_t i = 0; i < n_train; ++i) d.splits[i] = Split::train;
    for (std::size_t i = n_train; i < n_train + n_val; ++i) d.splits[i] = Split::val;

    const Eigen::Index dim = d.state_dim();
    RealVector sum = RealVector::Zero(dim);
    double count = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) {
        sum += d.trajectories[i].states.rowwise().sum();
        count += static_cast<double>(d.trajectories[i].length());
    }
    Standardization st;
    st.mean = sum / count;
    RealVector sq = RealVector::Zero(dim);
    for (std::size_t i = 0; i < n_train; ++i) {
        sq += (d.trajectories[i].states.colwise() - st.mean).rowwise().squaredNorm();
    }
    st.std = (sq / count).cwiseSqrt();
    for (auto& t : d.trajectories) {
        for (Eigen::Index fidx = 0; fidx < dim; ++fidx) {
            t.states.row(fidx) = (t.states.row(fidx).array() - st.mean[fidx]) / st.scale(fidx);
        }
    }
    d.stats = std::move(st);
    return d;
}

inline Dataset inverse_standardize(Dataset d) {
    if (!d.stats) return d;
    for (auto& t : d.trajectories) {
        for (Eigen::Index fidx = 0; fidx < d.state_dim(); ++fidx) {
            t.states.row(fidx) = t.states.row(fidx).array() * d.stats->scale(fidx) + d.stats->mean[fidx];
        }
    }
    d.stats.reset();
    return d;
}

// ---------------------------------------------------------------------------
// Windows

struct WindowRef {
    std::size_t trajectory = 0;
    Eigen::Index start = 0;
};

// All stride-1 windows of the given length inside trajectories of one split.
inline std::vector<WindowRef> enumerate_windows(const Dataset& d, Split s, Eigen::Index length) {
    if (length < 1) throw ParameterError("enumerate_windows: length must be positive");
    std::vector<WindowRef> out;
    for (std::size_t i : d.indices(s)) {
        const auto len = d.trajectories[i].length();
        for (Eigen::Index k = 0; k + length <= len; ++k) out.push_back({i, k});
    }
    return out;
}

// Batch tensor: element l is the state_dim x batch matrix of states at offset l.
using WindowBatch = std::vector<RealMatrix>;

inline WindowBatch gather_windows(const Dataset& d, const std::vector<WindowRef>& refs, std::size_t begin,
                                  std::size_t end, Eigen::Index length) {
    const Eigen::Index dim = d.state_dim();
    const auto batch = static_cast<Eigen::Index>(end - begin);
    WindowBatch out(static_cast<std::size_t>(length), RealMatrix(dim, batch));
    for (std::size_t b = begin; b < end; ++b) {
        const auto& ref = refs[b];
        const auto& states = d.trajectories[ref.trajectory].states;
        for (Eigen::Index l = 0; l < length; ++l) {
            out[static_cast<std::size_t>(l)].col(static_cast<Eigen::Index>(b - begin)) = states.col(ref.start + l);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// KDS1 file format (all values little-endian):
//   "KDS1" | u32 version | u64 n_traj | u64 state_dim | f64 dt
//   per trajectory: u64 length | u8 split tag | length*state_dim f64, state by state
//   footer: u8 has_stats | [state_dim f64 mean | state_dim f64 std] | u32 n | n bytes metadata JSON

inline constexpr std::string_view dataset_magic = "KDS1";
inline constexpr std::uint32_t dataset_version = 1;

inline std::string encode_dataset(const Dataset& d) {
    validate_dataset(d);
    binary::Writer w;
    w.bytes(dataset_magic);
    w.u32(dataset_version);
    w.u64(d.trajectories.size());
    w.u64(static_cast<std::uint64_t>(d.state_dim()));
    w.f64(d.dt);
    for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
        const auto& s = d.trajectories[i].states;
        w.u64(static_cast<std::uint64_t>(s.cols()));
        w.u8(static_cast<std::uint8_t>(d.splits[i]));
        for (Eigen::Index t = 0; t < s.cols(); ++t) {
            for (Eigen::Index f = 0; f < s.rows(); ++f) w.f64(s(f, t));
        }
    }
    w.u8(d.stats ? 1 : 0);
    if (d.stats) {
        for (Eigen::Index f = 0; f < d.state_dim(); ++f) w.f64(d.stats->mean[f]);
        for (Eigen::Index f = 0; f < d.state_dim(); ++f) w.f64(d.stats->std[f]);
    }
    const std::string meta = d.metadata.dump();
    w.u32(static_cast<std::uint32_t>(meta.size()));
    w.bytes(meta);
    return w.data();
}

inline Dataset decode_dataset(std::string_view data) {
    binary::Reader r(data);
    if (data.size() < dataset_magic.size() || data.substr(0, dataset_magic.size()) != dataset_magic) {
        throw FormatError("dataset: expected magic \"KDS1\"", 0);
    }
    r.bytes(dataset_magic.size(), "magic");
    const auto version = r.u32("version");
    if (version != dataset_version) r.fail("dataset: unsupported version " + std::to_string(version));
    const auto n_traj = r.u64("trajectory count");
    const auto dim = r.u64("state dimension");
    Dataset d;
    d.dt = r.f64("dt");
    if (dim == 0) r.fail("dataset: zero state dimension");
    for (std::uint64_t i = 0; i < n_traj; ++i) {
        const auto len = r.u64("trajectory length");
        if (len > r.remaining() / 8 / dim) r.fail("dataset: trajectory longer than remaining data");
        const auto tag = r.u8("split tag");
        if (tag > static_cast<std::uint8_t>(Split::unassigned)) r.fail("dataset: bad split tag");
        RealMatrix states(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(len));
        for (Eigen::Index t = 0; t < states.cols(); ++t) {
            for (Eigen::Index f = 0; f < states.rows(); ++f) states(f, t) = r.f64("states");
        }
        d.trajectories.push_back({std::move(states), d.dt});
        d.splits.push_back(static_cast<Split>(tag));
    }
    const auto has_stats = r.u8("statistics flag");
    if (has_stats > 1) r.fail("dataset: bad statistics flag");
    if (has_stats) {
        Standardization st;
        st.mean.resize(static_cast<Eigen::Index>(dim));
        st.std.resize(static_cast<Eigen::Index>(dim));
        for (auto& v : st.mean) v = r.f64("feature mean");
        for (auto& v : st.std) v = r.f64("feature std");
        d.stats = std::move(st);
    }
    const auto meta_len = r.u32("metadata length");
    const auto meta_offset = r.offset();
    const auto meta = r.bytes(meta_len, "metadata");
    try {
        d.metadata = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset: malformed metadata: ") + e.what(), meta_offset);
    }
    if (!r.at_end()) r.fail("dataset: trailing bytes after footer");
    try {
        validate_dataset(d);
    } catch (const Error& e) {
        throw FormatError(std::string("dataset: invalid content: ") + e.what(), r.offset());
    }
    return d;
}

inline void write_dataset(const std::string& path, const Dataset& d) { binary::write_file(path, encode_dataset(d)); }

inline Dataset read_dataset(const std::string& path) { return decode_dataset(binary::read_file(path)); }

} // namespace kae
