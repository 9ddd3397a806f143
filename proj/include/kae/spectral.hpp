#pragma once

// Dense spectral toolkit for the small real square matrices used as Koopman
// operators: eigendecomposition with left/right eigenvectors, reconstruction
// from modified eigenvalues, spectral radius and truncated SVD.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "kae/errors.hpp"
#include "kae/tolerances.hpp"

namespace kae {

using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;
using Complex = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;

inline void require_finite(const RealMatrix& m, const char* what) {
    if (!m.allFinite()) {
        throw ParameterError(std::string(what) + ": matrix contains non-finite entries");
    }
}

inline void require_square(const RealMatrix& m, const char* what) {
    if (m.rows() != m.cols() || m.rows() < 1) {
        throw DimensionError(std::string(what) + ": expected a non-empty square matrix, got " +
                             std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
}

// Each eigenvalue index is either real or one half of a conjugate pair.
struct PairSlot {
    bool real = true;
    std::size_t partner = 0; // == own index for real eigenvalues
};

struct SpectralDecomposition {
    ComplexVector eigenvalues;   // sorted by descending modulus
    ComplexMatrix right_vectors; // column j: unit-norm v_j with U v_j = lambda_j v_j
    ComplexMatrix left_vectors;  // column j: u_j with u_j^H U = lambda_j u_j^H, u_j^H v_j = 1
    std::vector<PairSlot> pairing;

    std::size_t size() const { return static_cast<std::size_t>(eigenvalues.size()); }

    RealVector moduli() const { return eigenvalues.cwiseAbs(); }
};

namespace detail {

// descending modulus, then descending real part, then descending imaginary part
inline bool spectral_order(const Complex& a, const Complex& b) {
    const double ma = std::abs(a), mb = std::abs(b);
    if (ma != mb) return ma > mb;
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() > b.imag();
}

inline std::vector<PairSlot> match_conjugates(const ComplexVector& ev) {
    const auto n = static_cast<std::size_t>(ev.size());
    std::vector<PairSlot> pairing(n);
    std::vector<bool> taken(n, false);
    for (std::size_t j = 0; j < n; ++j) {
        if (taken[j]) continue;
        if (ev[j].imag() == 0.0) {
            pairing[j] = {true, j};
            taken[j] = true;
            continue;
        }
        std::size_t k = j + 1;
        while (k < n && (taken[k] || ev[k] != std::conj(ev[j]))) ++k;
        if (k == n) {
            throw ConvergenceError("eig_decompose: unpaired complex eigenvalue at index " +
                                   std::to_string(j));
        }
        pairing[j] = {false, k};
        pairing[k] = {false, j};
        taken[j] = taken[k] = true;
    }
    return pairing;
}

} // namespace detail

inline SpectralDecomposition eig_decompose(const RealMatrix& u) {
    require_square(u, "eig_decompose");
    require_finite(u, "eig_decompose");
    const Eigen::Index n = u.rows();

    Eigen::EigenSolver<RealMatrix> solver;
    solver.setMaxIterations(Tolerances::qr_iterations_per_row * static_cast<int>(n));
    solver.compute(u, true);
    if (solver.info() != Eigen::Success) {
        throw ConvergenceError("eig_decompose: QR iteration did not converge within " +
                               std::to_string(Tolerances::qr_iterations_per_row * n) +
                               " iterations");
    }
    const ComplexVector raw_values = solver.eigenvalues();
    const ComplexMatrix raw_vectors = solver.eigenvectors();

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return detail::spectral_order(raw_values[a], raw_values[b]);
    });

    SpectralDecomposition dec;
    dec.eigenvalues.resize(n);
    dec.right_vectors.resize(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        dec.eigenvalues[j] = raw_values[order[static_cast<std::size_t>(j)]];
        const auto col = raw_vectors.col(order[static_cast<std::size_t>(j)]);
        dec.right_vectors.col(j) = col / col.norm();
    }
    dec.pairing = detail::match_conjugates(dec.eigenvalues);
    for (std::size_t j = 0; j < dec.size(); ++j) {
        const auto& slot = dec.pairing[j];
        const auto jj = static_cast<Eigen::Index>(j);
        if (slot.real) {
            dec.right_vectors.col(jj) = dec.right_vectors.col(jj).real().cast<Complex>();
        } else if (slot.partner > j) {
            dec.right_vectors.col(static_cast<Eigen::Index>(slot.partner)) =
                dec.right_vectors.col(jj).conjugate();
        }
    }

    // rows of V^-1 are the left eigenvectors scaled so that u_j^H v_j = 1
    const ComplexMatrix inv = dec.right_vectors.partialPivLu().inverse();
    dec.left_vectors = inv.adjoint();
    return dec;
}

inline double spectral_radius(const RealMatrix& u) {
    return eig_decompose(u).moduli().maxCoeff();
}

inline double condition_number(const ComplexMatrix& v) {
    Eigen::JacobiSVD<ComplexMatrix> svd(v);
    const auto& s = svd.singularValues();
    const double smin = s[s.size() - 1];
    if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
    return s[0] / smin;
}

struct Reconstruction {
    RealMatrix matrix;
    double imag_residual = 0.0; // max |Im| of the complex product before truncation
};

// real(V diag(values) V^-1) for eigenvalues that respect dec.pairing
inline Reconstruction reconstruct_real(const SpectralDecomposition& dec, const ComplexVector& values) {
    const auto n = static_cast<Eigen::Index>(dec.size());
    if (values.size() != n) {
        throw DimensionError("reconstruct_real: expected " + std::to_string(n) + " eigenvalues, got " +
                             std::to_string(values.size()));
    }
    for (std::size_t j = 0; j < dec.size(); ++j) {
        const auto& slot = dec.pairing[j];
        const Complex v = values[static_cast<Eigen::Index>(j)];
        const double scale = std::max(1.0, std::abs(v));
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
            throw ParameterError("reconstruct_real: non-finite eigenvalue at index " + std::to_string(j));
        }
        if (slot.real) {
            if (std::abs(v.imag()) > Tolerances::pairing_tolerance * scale) {
                throw PairingError("reconstruct_real: real eigenvalue slot " + std::to_string(j) +
                                   " received a complex value");
            }
        } else {
            const Complex partner = values[static_cast<Eigen::Index>(slot.partner)];
            if (std::abs(partner - std::conj(v)) > Tolerances::pairing_tolerance * scale) {
                throw PairingError("reconstruct_real: slots " + std::to_string(j) + " and " +
                                   std::to_string(slot.partner) + " are not conjugate");
            }
        }
    }
    const double cond = condition_number(dec.right_vectors);
    if (!(cond <= Tolerances::max_condition)) {
        throw IllConditionedError("reconstruct_real: eigenvector matrix condition estimate " +
                                  std::to_string(cond) + " exceeds limit");
    }
    const ComplexMatrix scaled = dec.right_vectors * values.asDiagonal();
    // X V = V diag(values)  =>  X = (V^T \ (V diag)^T)^T
    const ComplexMatrix product =
        dec.right_vectors.transpose().partialPivLu().solve(scaled.transpose()).transpose();
    Reconstruction out;
    out.matrix = product.real();
    out.imag_residual = product.imag().cwiseAbs().maxCoeff();
    return out;
}

struct Svd {
    RealMatrix left;   // rows x r
    RealVector values; // r, descending, non-negative
    RealMatrix right;  // cols x r
};

inline Svd svd(const RealMatrix& x, Eigen::Index rank) {
    require_finite(x, "svd");
    const Eigen::Index full = std::min(x.rows(), x.cols());
    if (rank < 1 || rank > full) {
        throw DimensionError("svd: rank " + std::to_string(rank) + " outside [1, " + std::to_string(full) +
                             "]");
    }
    Eigen::JacobiSVD<RealMatrix> solver(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return {solver.matrixU().leftCols(rank), solver.singularValues().head(rank),
            solver.matrixV().leftCols(rank)};
}

} // namespace kae
