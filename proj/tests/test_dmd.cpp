#include <cmath>

#include <gtest/gtest.h>

#include "kae/data.hpp"
#include "kae/dmd.hpp"
#include "oracles.hpp"

using namespace kae;

namespace {

RealMatrix iterate(const RealMatrix& a, const RealVector& x0, Eigen::Index m) {
    RealMatrix s(a.rows(), m);
    s.col(0) = x0;
    for (Eigen::Index k = 1; k < m; ++k) s.col(k) = a * s.col(k - 1);
    return s;
}

} // namespace

TEST(Dmd, ScalarDecay) {
    RealMatrix s(1, 6);
    s << 1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125;
    const auto r = exact_dmd(s, 1);
    EXPECT_NEAR(r.eigenvalues[0].real(), 0.5, 1e-14);
    EXPECT_EQ(r.eigenvalues[0].imag(), 0.0);
}

TEST(Dmd, RotationHasUnitModuli) {
    const double a = 0.3;
    RealMatrix rot(2, 2);
    rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    const auto r = exact_dmd(iterate(rot, Eigen::Vector2d(1.0, 0.0), 50), 2);
    for (Eigen::Index j = 0; j < 2; ++j) EXPECT_NEAR(std::abs(r.eigenvalues[j]), 1.0, 1e-10);
    EXPECT_NEAR(std::abs(std::arg(r.eigenvalues[0])), a, 1e-10);
    EXPECT_NEAR(estimate_theta(r.eigenvalues), 0.0, 0.0);
}

TEST(Dmd, DiagonalSystem) {
    RealMatrix a = Eigen::Vector2d(1.0, 0.8).asDiagonal();
    const auto r = exact_dmd(iterate(a, Eigen::Vector2d(1.0, 1.0), 20), 2);
    EXPECT_NEAR(r.eigenvalues[0].real(), 1.0, 1e-12);
    EXPECT_NEAR(r.eigenvalues[1].real(), 0.8, 1e-12);
    EXPECT_NEAR(estimate_theta(r.eigenvalues), 0.5, 0.0);
}

TEST(Dmd, RecoversPrescribedSpectrum) {
    Rng rng(3);
    const std::vector<Complex> spec = {std::polar(1.0, 0.2), std::polar(1.0, -0.2), {0.7, 0.0}, {0.4, 0.0}};
    const auto ld = gen_linear_dataset(spec, 4, 1, 200, rng);
    const auto r = exact_dmd(ld.dataset.trajectories[0].states, 4);
    EXPECT_LT(oracle::max_matched_distance(spec, oracle::to_vector(r.eigenvalues)), 1e-8);
    EXPECT_NEAR(estimate_theta(r.eigenvalues), 0.5, 0.0);
}

TEST(Dmd, InvariantUnderOrthogonalChangeOfBasis) {
    Rng rng(4);
    const RealMatrix a = oracle::gaussian_matrix(4, 4, 0.4, rng);
    const RealMatrix q = random_orthogonal(4, rng);
    const RealVector x0 = oracle::gaussian_matrix(4, 1, 1.0, rng);
    const RealMatrix s = iterate(a, x0, 30);
    const auto r1 = exact_dmd(s, 4);
    const auto r2 = exact_dmd(q * s, 4);
    EXPECT_LT(oracle::max_matched_distance(oracle::to_vector(r1.eigenvalues), oracle::to_vector(r2.eigenvalues)),
              1e-9);
}

TEST(Dmd, RankDeficientSnapshots) {
    RealMatrix s = RealMatrix::Zero(3, 10);
    s.row(0).setLinSpaced(10, 1.0, 2.0);
    EXPECT_THROW(exact_dmd(s, 2), RankDeficiencyError);
    EXPECT_NO_THROW(exact_dmd(s, 1));
    EXPECT_THROW(exact_dmd(s, 4), DimensionError);
    EXPECT_THROW(exact_dmd(RealMatrix::Ones(3, 1), 1), ParameterError);
}

TEST(EstimateTheta, Examples) {
    ComplexVector e(4);
    e << Complex(1.0, 0.0), Complex(0.0, 1.0), Complex(0.5, 0.0), Complex(0.9995, 0.0);
    EXPECT_DOUBLE_EQ(estimate_theta(e), 0.25);
    ComplexVector z(2);
    z << Complex(0.2, 0.0), Complex(-0.1, 0.0);
    EXPECT_DOUBLE_EQ(estimate_theta(z), 1.0);
    EXPECT_THROW(estimate_theta(ComplexVector()), ParameterError);
}
