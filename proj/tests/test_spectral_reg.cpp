#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "kae/spectral_reg.hpp"
#include "oracles.hpp"

using namespace kae;

namespace {

std::vector<PairSlot> all_real(std::size_t n) {
    std::vector<PairSlot> p(n);
    for (std::size_t j = 0; j < n; ++j) p[j] = {true, j};
    return p;
}

} // namespace

TEST(SpikeSlab, ThetaZeroGivesUnitModuli) {
    Rng rng(1);
    const RealVector m = sample_moduli(all_real(64), {0.0, 0.0, 1.0}, rng);
    EXPECT_TRUE((m.array() == 1.0).all());
}

TEST(SpikeSlab, ThetaOneStaysInsideSlab) {
    Rng rng(2);
    const RealVector m = sample_moduli(all_real(2000), {1.0, 0.2, 0.6}, rng);
    EXPECT_TRUE((m.array() >= 0.2).all());
    EXPECT_TRUE((m.array() < 0.6).all());
}

TEST(SpikeSlab, SpikeFractionMatchesTheta) {
    Rng rng(3);
    const RealVector m = sample_moduli(all_real(10000), {0.5, 0.0, 1.0}, rng);
    const double ones = (m.array() == 1.0).cast<double>().mean();
    EXPECT_NEAR(ones, 0.5, 0.02);
}

TEST(SpikeSlab, PartnersShareModulus) {
    Rng rng(4);
    std::vector<PairSlot> p = {{false, 1}, {false, 0}, {true, 2}, {false, 4}, {false, 3}};
    for (int k = 0; k < 50; ++k) {
        const RealVector m = sample_moduli(p, {0.7, 0.0, 1.0}, rng);
        EXPECT_EQ(m[0], m[1]);
        EXPECT_EQ(m[3], m[4]);
    }
}

TEST(SpikeSlab, InvalidParameters) {
    Rng rng(5);
    EXPECT_THROW(sample_moduli(all_real(2), {1.5, 0.0, 1.0}, rng), ParameterError);
    EXPECT_THROW(sample_moduli(all_real(2), {0.5, 0.8, 0.3}, rng), ParameterError);
    EXPECT_THROW(sample_moduli(all_real(2), {0.5, 0.0, 1.5}, rng), ParameterError);
    EXPECT_THROW(sample_moduli({{false, 0}}, {0.5, 0.0, 1.0}, rng), PairingError);
}

TEST(Eigeninit, DiagonalKeepsSigns) {
    Rng rng(6);
    RealMatrix u0 = Eigen::Vector2d(3.0, -2.0).asDiagonal();
    const RealMatrix u = eigeninit(u0, {0.0, 0.0, 1.0}, rng);
    EXPECT_NEAR((u - RealMatrix(Eigen::Vector2d(1.0, -1.0).asDiagonal())).norm(), 0.0, 1e-12);
}

TEST(Eigeninit, UnitSpectrumIsFixedPoint) {
    Rng rng(7);
    const double c = std::cos(0.3), s = std::sin(0.3);
    RealMatrix r(2, 2);
    r << c, -s, s, c;
    EXPECT_NEAR((eigeninit(r, {0.0, 0.0, 1.0}, rng) - r).norm(), 0.0, 1e-12);
}

TEST(Eigeninit, KeepsPhasesAndSetsModuli) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const RealMatrix u0 = oracle::gaussian_matrix(8, 8, 1.0 / std::sqrt(8.0), rng);
        const auto src = eig_decompose(u0);
        if (oracle::min_gap(src.eigenvalues) < 1e-3) continue;
        const auto res = eigeninit_detailed(u0, {0.5, 0.0, 1.0}, rng);
        EXPECT_LE(res.imag_residual, 1e-8);
        const auto out = eig_decompose(res.matrix);
        // each requested eigenvalue r_j * exp(i arg lambda_j) must appear in the result
        std::vector<std::complex<double>> want;
        for (std::size_t j = 0; j < src.size(); ++j) {
            const auto l = src.eigenvalues[static_cast<Eigen::Index>(j)];
            want.push_back(std::polar(res.moduli[static_cast<Eigen::Index>(j)], std::arg(l)));
        }
        EXPECT_LT(oracle::max_matched_distance(want, oracle::to_vector(out.eigenvalues)), 1e-8) << "seed " << seed;
    }
}

TEST(Eigeninit, DeterministicUnderSeed) {
    Rng a(42), b(42);
    EXPECT_EQ(eigeninit_random(6, {0.3, 0.0, 1.0}, a), eigeninit_random(6, {0.3, 0.0, 1.0}, b));
}

TEST(Eigeninit, RandomThetaZeroHasUnitSpectrum) {
    Rng rng(8);
    for (int k = 0; k < 10; ++k) {
        const RealMatrix u = eigeninit_random(8, {0.0, 0.0, 1.0}, rng);
        const RealVector m = eig_decompose(u).moduli();
        EXPECT_LT((m.array() - 1.0).abs().maxCoeff(), 1e-8);
    }
}

TEST(Eigenloss, Examples) {
    EXPECT_EQ(eigenloss_value(RealMatrix::Identity(4, 4)), 0.0);
    EXPECT_NEAR(eigenloss_value(RealMatrix::Zero(3, 3)), 3.0, 1e-15);
    EXPECT_NEAR(eigenloss_value(Eigen::Vector2d(2.0, 0.5).asDiagonal()), 1.25, 1e-14);
    const double c = std::cos(1.1), s = std::sin(1.1);
    RealMatrix r(2, 2);
    r << c, -s, s, c;
    EXPECT_NEAR(eigenloss_value(r), 0.0, 1e-14);
}

TEST(EigenlossGrad, DiagonalExample) {
    const auto g = eigenloss_grad(Eigen::Vector2d(2.0, 0.5).asDiagonal());
    EXPECT_NEAR((g.grad - RealMatrix(Eigen::Vector2d(2.0, -1.0).asDiagonal())).norm(), 0.0, 1e-12);
    EXPECT_NEAR(g.value, 1.25, 1e-14);
    EXPECT_FALSE(g.degenerate);
}

TEST(EigenlossGrad, UnitModuliGiveZeroGradient) {
    const double c = std::cos(0.7), s = std::sin(0.7);
    RealMatrix r(2, 2);
    r << c, -s, s, c;
    EXPECT_LT(eigenloss_grad(r).grad.norm(), 1e-12);
}

TEST(EigenlossGrad, FlagsDegenerateSpectrum) {
    EXPECT_TRUE(eigenloss_grad(RealMatrix::Identity(2, 2) * 0.5).degenerate);
}

TEST(EigenlossGrad, MatchesFiniteDifferences) {
    int checked = 0;
    for (std::uint64_t seed = 0; checked < 20 && seed < 100; ++seed) {
        Rng rng(seed);
        const RealMatrix u = oracle::gaussian_matrix(5, 5, 1.0 / std::sqrt(5.0), rng);
        const auto dec = eig_decompose(u);
        if (oracle::min_gap(dec.eigenvalues) < 1e-2 || dec.moduli().minCoeff() < 1e-2) continue;
        ++checked;
        const auto g = eigenloss_gradient(dec);
        EXPECT_LT(g.imag_residual, 1e-10);
        const RealMatrix numeric =
            oracle::central_difference([](const RealMatrix& m) { return eigenloss_value(m); }, u, 1e-6);
        EXPECT_LT(oracle::relative_error(g.grad, numeric), 1e-5) << "seed " << seed;
    }
    EXPECT_EQ(checked, 20);
}

TEST(EigenlossGrad, SmallStepDescends) {
    int checked = 0;
    for (std::uint64_t seed = 100; checked < 20 && seed < 200; ++seed) {
        Rng rng(seed);
        const RealMatrix u = oracle::gaussian_matrix(6, 6, 1.0 / std::sqrt(6.0), rng);
        const auto dec = eig_decompose(u);
        if (oracle::min_gap(dec.eigenvalues) < 1e-3) continue;
        ++checked;
        const auto g = eigenloss_gradient(dec);
        EXPECT_LT(eigenloss_value(u - 1e-3 * g.grad), g.value) << "seed " << seed;
    }
    EXPECT_EQ(checked, 20);
}
