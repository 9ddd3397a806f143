#pragma once

// Exact dynamic mode decomposition and the spike-and-slab theta estimate.

#include <cmath>
#include <string>
#include <vector>

#include "kae/errors.hpp"
#include "kae/spectral.hpp"
#include "kae/tolerances.hpp"

namespace kae {

struct DmdResult {
    RealMatrix reduced_operator; // r x r
    ComplexVector eigenvalues;   // sorted as by eig_decompose
    RealVector singular_values;  // the r values used
    Eigen::Index rank = 0;
};

// Rank-r exact DMD from paired snapshot matrices: columns of `after` are one
// step ahead of the matching columns of `before`.
inline DmdResult exact_dmd(const RealMatrix& before, const RealMatrix& after, Eigen::Index rank) {
    if (before.rows() != after.rows() || before.cols() != after.cols()) {
        throw DimensionError("exact_dmd: snapshot matrices differ in shape");
    }
    if (before.cols() < 1) throw ParameterError("exact_dmd: need at least two snapshots");
    const auto limit = std::min(before.rows(), before.cols());
    if (rank < 1 || rank > limit) {
        throw DimensionError("exact_dmd: rank " + std::to_string(rank) + " outside [1, " + std::to_string(limit) +
                             "]");
    }
    const auto s = svd(before, rank);
    const double cutoff = Tolerances::dmd_rank_cutoff * s.values[0];
    if (!(s.values[0] > 0.0) || s.values[rank - 1] < cutoff) {
        throw RankDeficiencyError("exact_dmd: singular value " + std::to_string(s.values[rank - 1]) +
                                  " at rank " + std::to_string(rank) + " is negligible; try a smaller rank");
    }
    DmdResult out;
    out.rank = rank;
    out.singular_values = s.values;
    out.reduced_operator = s.left.transpose() * after * s.right * s.values.cwiseInverse().asDiagonal();
    out.eigenvalues = eig_decompose(out.reduced_operator).eigenvalues;
    return out;
}

// Snapshots x_1..x_m as the columns of one matrix.
inline DmdResult exact_dmd(const RealMatrix& snapshots, Eigen::Index rank) {
    if (snapshots.cols() < 2) throw ParameterError("exact_dmd: need at least two snapshots");
    const auto m = snapshots.cols();
    return exact_dmd(snapshots.leftCols(m - 1), snapshots.rightCols(m - 1), rank);
}

// Slab probability implied by a spectrum: the fraction of eigenvalues whose
// modulus is NOT within tol of 1 (unit-modulus eigenvalues come from the spike).
inline double estimate_theta(const ComplexVector& eigenvalues, double tol = Tolerances::unit_modulus_tol) {
    if (eigenvalues.size() == 0) throw ParameterError("estimate_theta: empty eigenvalue list");
    if (!(tol > 0.0)) throw ParameterError("estimate_theta: tolerance must be positive");
    Eigen::Index unit = 0;
    for (Eigen::Index j = 0; j < eigenvalues.size(); ++j) {
        if (std::abs(std::abs(eigenvalues[j]) - 1.0) < tol) ++unit;
    }
    return 1.0 - static_cast<double>(unit) / static_cast<double>(eigenvalues.size());
}

} // namespace kae
