#pragma once

namespace kae {

// Numerical thresholds shared across modules. Tests refer to these by name.
struct Tolerances {
    // eigensolver iteration budget per matrix row
    static constexpr int qr_iterations_per_row = 100;
    // V with a 2-norm condition number above this is rejected by reconstruct_real
    static constexpr double max_condition = 1e12;
    // relative imaginary residual permitted when reconstructing a real matrix
    static constexpr double max_imag_residual = 1e-8;
    // relative mismatch tolerated between conjugate partners before a pairing error
    static constexpr double pairing_tolerance = 1e-12;
    // eigenvalues closer than this trigger the degeneracy warning in eigenloss_grad
    static constexpr double degenerate_gap = 1e-10;
    // floor on |lambda| in the eigenloss gradient denominator
    static constexpr double modulus_floor = 1e-12;
    // DMD rejects singular values below this fraction of the largest
    static constexpr double dmd_rank_cutoff = 1e-12;
    // |(|lambda| - 1)| below this counts as unit modulus for theta estimation
    static constexpr double unit_modulus_tol = 1e-3;
    // features with training std at or below this are left unscaled
    static constexpr double constant_feature_std = 1e-12;
    // training aborts once the loss exceeds this multiple of the first batch loss
    static constexpr double divergence_factor = 1e6;
    // fresh U0 draws attempted by eigeninit before giving up
    static constexpr int eigeninit_retries = 10;
};

} // namespace kae
