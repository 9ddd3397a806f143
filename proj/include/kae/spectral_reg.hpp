#pragma once

// Spectral regularisation of a Koopman matrix.
//
// eigeninit: decompose a random real matrix, resample every eigenvalue modulus
// from a spike-and-slab distribution theta * U(a, b) + (1 - theta) * delta(1)
// while keeping its phase, and rebuild a real matrix. Conjugate partners share
// one draw so the rebuilt matrix stays real.
//
// eigenloss: sum_j (|lambda_j| - 1)^2 with its gradient through the simple
// eigenvalue adjoint d lambda_j = u_j^H dU v_j / (u_j^H v_j).

#include <cmath>
#include <complex>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "kae/errors.hpp"
#include "kae/nn.hpp"
#include "kae/spectral.hpp"
#include "kae/tolerances.hpp"

namespace kae {

struct SpikeSlabSpec {
    double theta = 0.0; // slab probability
    double slab_low = 0.0;
    double slab_high = 1.0;

    void validate() const {
        if (!(theta >= 0.0 && theta <= 1.0)) {
            throw ParameterError("spike-and-slab: theta must lie in [0, 1]");
        }
        if (!(slab_low >= 0.0 && slab_low < slab_high && slab_high <= 1.0)) {
            throw ParameterError("spike-and-slab: slab interval must satisfy 0 <= a < b <= 1");
        }
    }
};

struct EigenlossConfig {
    double weight = 0.0;
    double modulus_floor = Tolerances::modulus_floor;

    void validate() const {
        if (!(weight >= 0.0) || !std::isfinite(weight)) throw ParameterError("eigenloss: weight must be >= 0");
        if (!(modulus_floor > 0.0)) throw ParameterError("eigenloss: modulus floor must be > 0");
    }
};

// One modulus per eigenvalue index. Conjugate pairs are drawn first, in sorted
// order, then real eigenvalues; partners receive the identical value.
inline RealVector sample_moduli(const std::vector<PairSlot>& pairing, const SpikeSlabSpec& spec, Rng& rng) {
    spec.validate();
    const std::size_t n = pairing.size();
    for (std::size_t j = 0; j < n; ++j) {
        const auto& s = pairing[j];
        if (s.partner >= n || (s.real && s.partner != j) ||
            (!s.real && (s.partner == j || pairing[s.partner].partner != j || pairing[s.partner].real))) {
            throw PairingError("sample_moduli: inconsistent pairing at index " + std::to_string(j));
        }
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto draw = [&] {
        const double coin = unit(rng);
        if (coin < spec.theta) return spec.slab_low + (spec.slab_high - spec.slab_low) * unit(rng);
        return 1.0;
    };
    RealVector out(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
        if (!pairing[j].real && pairing[j].partner > j) {
            const double r = draw();
            out[static_cast<Eigen::Index>(j)] = r;
            out[static_cast<Eigen::Index>(pairing[j].partner)] = r;
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        if (pairing[j].real) out[static_cast<Eigen::Index>(j)] = draw();
    }
    return out;
}

// Eigenvalues of dec with moduli replaced and phases kept. Real eigenvalues
// keep their sign; conjugate partners are written as exact conjugates.
inline ComplexVector with_moduli(const SpectralDecomposition& dec, const RealVector& moduli) {
    if (static_cast<std::size_t>(moduli.size()) != dec.size()) {
        throw DimensionError("with_moduli: modulus count does not match eigenvalue count");
    }
    ComplexVector out(moduli.size());
    for (std::size_t j = 0; j < dec.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const Complex lambda = dec.eigenvalues[jj];
        const auto& slot = dec.pairing[j];
        if (slot.real) {
            out[jj] = Complex(std::signbit(lambda.real()) ? -moduli[jj] : moduli[jj], 0.0);
        } else if (slot.partner > j) {
            out[jj] = std::polar(moduli[jj], std::arg(lambda));
            out[static_cast<Eigen::Index>(slot.partner)] = std::conj(out[jj]);
        }
    }
    return out;
}

struct EigeninitResult {
    RealMatrix matrix;
    RealVector moduli;   // drawn moduli, aligned with source.eigenvalues
    double imag_residual = 0.0;
    SpectralDecomposition source;
};

// Rebuilds a real matrix from dec with the given moduli.
inline EigeninitResult apply_moduli(SpectralDecomposition dec, const RealVector& moduli) {
    const auto recon = reconstruct_real(dec, with_moduli(dec, moduli));
    const double scale = std::max(recon.matrix.norm(), std::numeric_limits<double>::min());
    if (recon.imag_residual > Tolerances::max_imag_residual * std::max(scale, 1.0)) {
        throw IllConditionedError("eigeninit: reconstructed matrix has imaginary residual " +
                                  std::to_string(recon.imag_residual));
    }
    return {recon.matrix, moduli, recon.imag_residual, std::move(dec)};
}

inline EigeninitResult eigeninit_detailed(const RealMatrix& u0, const SpikeSlabSpec& spec, Rng& rng) {
    spec.validate();
    auto dec = eig_decompose(u0);
    const RealVector moduli = sample_moduli(dec.pairing, spec, rng);
    return apply_moduli(std::move(dec), moduli);
}

inline RealMatrix eigeninit(const RealMatrix& u0, const SpikeSlabSpec& spec, Rng& rng) {
    return eigeninit_detailed(u0, spec, rng).matrix;
}

// Draws U0 with N(0, 1/n) entries and applies eigeninit, redrawing U0 on
// decomposition or conditioning failures up to the retry budget.
inline RealMatrix eigeninit_random(Eigen::Index n, const SpikeSlabSpec& spec, Rng& rng) {
    spec.validate();
    const auto sigma = 1.0 / std::sqrt(static_cast<double>(n));
    std::string last_error;
    for (int attempt = 0; attempt < Tolerances::eigeninit_retries; ++attempt) {
        const RealMatrix u0 = init_weights(n, n, WeightInit::gaussian(sigma), rng);
        try {
            return eigeninit(u0, spec, rng);
        } catch (const ConvergenceError& e) {
            last_error = e.what();
        } catch (const IllConditionedError& e) {
            last_error = e.what();
        }
    }
    throw IllConditionedError("eigeninit: no usable draw after " + std::to_string(Tolerances::eigeninit_retries) +
                              " attempts; last error: " + last_error);
}

inline double eigenloss_from_moduli(const RealVector& moduli) {
    return (moduli.array() - 1.0).square().sum();
}

// Unweighted penalty sum_j (|lambda_j| - 1)^2.
inline double eigenloss_value(const RealMatrix& u) {
    return eigenloss_from_moduli(eig_decompose(u).moduli());
}

struct EigenlossGradient {
    double value = 0.0;
    RealMatrix grad;
    double imag_residual = 0.0; // max |Im| of the complex gradient before discarding
    bool degenerate = false;    // two eigenvalues closer than Tolerances::degenerate_gap
};

inline EigenlossGradient eigenloss_gradient(const SpectralDecomposition& dec,
                                            double modulus_floor = Tolerances::modulus_floor) {
    const auto n = static_cast<Eigen::Index>(dec.size());
    EigenlossGradient out;
    ComplexMatrix g = ComplexMatrix::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const Complex lambda = dec.eigenvalues[j];
        const double mod = std::abs(lambda);
        out.value += (mod - 1.0) * (mod - 1.0);
        for (Eigen::Index k = j + 1; k < n; ++k) {
            if (std::abs(lambda - dec.eigenvalues[k]) < Tolerances::degenerate_gap) out.degenerate = true;
        }
        if (mod == 1.0) continue;
        const double factor = 2.0 * (mod - 1.0) / std::max(mod, modulus_floor);
        const auto u = dec.left_vectors.col(j);
        const auto v = dec.right_vectors.col(j);
        const Complex denom = u.dot(v); // u^H v
        g += (factor * std::conj(lambda) / denom) * (u.conjugate() * v.transpose());
    }
    out.grad = g.real();
    out.imag_residual = g.imag().cwiseAbs().maxCoeff();
    return out;
}

// d/dU sum_j (|lambda_j| - 1)^2 for real U.
inline EigenlossGradient eigenloss_grad(const RealMatrix& u, double modulus_floor = Tolerances::modulus_floor) {
    return eigenloss_gradient(eig_decompose(u), modulus_floor);
}

} // namespace kae
