#include <cmath>
#include <random>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <gtest/gtest.h>

#include "kae/nn.hpp"
#include "oracles.hpp"

using namespace kae;

TEST(InitWeights, HeVarianceMatchesDefinition) {
    Rng rng(1);
    const RealMatrix w = init_weights(500, 200, WeightInit::he(), rng); // 1e5 samples, fan_in 200
    const double mean = w.mean();
    const double var = (w.array() - mean).square().sum() / static_cast<double>(w.size());
    EXPECT_NEAR(var, 0.01, 0.05 * 0.01);
}

TEST(InitWeights, XavierBoundsAndMoments) {
    Rng rng(2);
    const RealMatrix small = init_weights(3, 3, WeightInit::xavier(), rng);
    EXPECT_LE(small.cwiseAbs().maxCoeff(), 1.0);
    const RealMatrix w = init_weights(400, 250, WeightInit::xavier(), rng);
    const double bound = std::sqrt(6.0 / 650.0);
    EXPECT_LE(w.cwiseAbs().maxCoeff(), bound);
    const double var = w.array().square().mean();
    EXPECT_NEAR(var, bound * bound / 3.0, 0.05 * bound * bound / 3.0);
}

TEST(InitWeights, GaussianSigmaZeroAndErrors) {
    Rng rng(3);
    EXPECT_EQ(init_weights(4, 5, WeightInit::gaussian(0.0), rng).norm(), 0.0);
    EXPECT_THROW(init_weights(4, 5, WeightInit::gaussian(-1.0), rng), ParameterError);
    EXPECT_THROW(init_weights(0, 5, WeightInit::he(), rng), DimensionError);
    Rng a(9), b(9);
    EXPECT_EQ(init_weights(6, 6, WeightInit::gaussian(0.3), a), init_weights(6, 6, WeightInit::gaussian(0.3), b));
}

TEST(Mlp, SingleLinearLayer) {
    Rng rng(4);
    Mlp net({3, 2}, WeightInit::he(), rng);
    net.bias(0).value << 0.5, -1.0;
    RealMatrix x(3, 1);
    x << 1.0, 2.0, 3.0;
    const RealMatrix y = net.forward(x);
    EXPECT_NEAR((y - (net.weight(0).value * x + net.bias(0).value)).norm(), 0.0, 1e-15);
}

TEST(Mlp, ReluZeroesNegativeInputs) {
    Rng rng(5);
    Mlp net({2, 2, 1}, WeightInit::he(), rng);
    net.weight(0).value = RealMatrix::Identity(2, 2);
    net.weight(1).value = RealMatrix::Ones(1, 2);
    RealMatrix x(2, 1);
    x << -1.0, -3.0;
    EXPECT_EQ(net.forward(x)(0, 0), 0.0);
}

TEST(Mlp, TwoLayerMatchesHandComputation) {
    Rng rng(6);
    Mlp net({3, 2, 1}, WeightInit::he(), rng);
    net.weight(0).value << 1.0, -2.0, 0.5, 0.25, 1.0, -1.0;
    net.bias(0).value << 0.1, -0.2;
    net.weight(1).value << 2.0, -3.0;
    net.bias(1).value << 0.7;
    RealMatrix x(3, 1);
    x << 1.0, 0.5, 2.0;
    // hidden pre-activations: 1 - 1 + 1 + 0.1 = 1.1 ; 0.25 + 0.5 - 2 - 0.2 = -1.45 -> relu 0
    const double expected = 2.0 * 1.1 - 3.0 * 0.0 + 0.7;
    EXPECT_NEAR(net.forward(x)(0, 0), expected, 1e-12);
}

TEST(Mlp, WidthMismatchAndCacheErrors) {
    Rng rng(7);
    Mlp net({3, 4, 2}, WeightInit::he(), rng);
    Mlp other({3, 4, 2}, WeightInit::he(), rng);
    EXPECT_THROW(net.forward(RealMatrix::Zero(2, 1)), DimensionError);
    MlpCache empty;
    EXPECT_THROW(net.backward(empty, RealMatrix::Zero(2, 1)), StateError);
    MlpCache cache;
    other.forward(RealMatrix::Ones(3, 1), &cache);
    EXPECT_THROW(net.backward(cache, RealMatrix::Zero(2, 1)), StateError);
}

TEST(MlpBackward, LinearLayerSumLoss) {
    Rng rng(8);
    Mlp net({3, 2}, WeightInit::he(), rng);
    RealMatrix x(3, 1);
    x << 1.0, -2.0, 4.0;
    MlpCache cache;
    net.forward(x, &cache);
    net.backward(cache, RealMatrix::Ones(2, 1));
    EXPECT_NEAR((net.weight(0).grad - RealMatrix::Ones(2, 1) * x.transpose()).norm(), 0.0, 1e-15);
    EXPECT_NEAR((net.bias(0).grad - RealMatrix::Ones(2, 1)).norm(), 0.0, 1e-15);
}

TEST(MlpBackward, ReluBlocksNegativeUnit) {
    Rng rng(9);
    Mlp net({1, 1, 1}, WeightInit::he(), rng);
    net.weight(0).value << 1.0;
    net.weight(1).value << 3.0;
    MlpCache cache;
    net.forward(RealMatrix::Constant(1, 1, -2.0), &cache);
    const RealMatrix gx = net.backward(cache, RealMatrix::Ones(1, 1));
    EXPECT_EQ(gx(0, 0), 0.0);
    EXPECT_EQ(net.weight(0).grad(0, 0), 0.0);
}

TEST(MlpBackward, AccumulatesUntilZeroed) {
    Rng rng(10);
    Mlp net({2, 3, 1}, WeightInit::he(), rng);
    const RealMatrix x = RealMatrix::Ones(2, 4);
    MlpCache cache;
    net.forward(x, &cache);
    net.backward(cache, RealMatrix::Ones(1, 4));
    const RealMatrix once = net.weight(0).grad;
    net.backward(cache, RealMatrix::Ones(1, 4));
    EXPECT_NEAR((net.weight(0).grad - 2.0 * once).norm(), 0.0, 1e-14);
    net.zero_grad();
    EXPECT_EQ(net.weight(0).grad.norm(), 0.0);
}

// Finite-difference check over every parameter of a 2-hidden-layer network
// with loss = mse(net(x), target).
TEST(MlpBackward, MatchesFiniteDifferencesAcrossSeeds) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Mlp net({3, 5, 4, 2}, WeightInit::he(), rng);
        for (auto* p : net.parameters()) {
            if (p->name.find("bias") != std::string::npos) {
                p->value = oracle::gaussian_matrix(p->value.rows(), 1, 0.3, rng);
            }
        }
        const RealMatrix x = oracle::gaussian_matrix(3, 6, 1.0, rng);
        const RealMatrix target = oracle::gaussian_matrix(2, 6, 1.0, rng);
        MlpCache cache;
        const RealMatrix y = net.forward(x, &cache);
        net.zero_grad();
        net.backward(cache, mse(y, target).grad);
        for (auto* p : net.parameters()) {
            const RealMatrix analytic = p->grad;
            const RealMatrix numeric = oracle::central_difference(
                [&](const RealMatrix& v) {
                    const RealMatrix saved = p->value;
                    p->value = v;
                    const double loss = mse(net.forward(x), target).value;
                    p->value = saved;
                    return loss;
                },
                p->value, 1e-5);
            EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-5) << "seed " << seed << " " << p->name;
        }
    }
}

TEST(Mse, Examples) {
    EXPECT_EQ(mse(RealMatrix::Ones(2, 3), RealMatrix::Ones(2, 3)).value, 0.0);
    EXPECT_EQ(mse(RealMatrix::Ones(2, 1), RealMatrix::Zero(2, 1)).value, 1.0);
    EXPECT_THROW(mse(RealMatrix::Ones(2, 1), RealMatrix::Zero(1, 2)), DimensionError);
    const auto l = mse(RealMatrix::Constant(2, 2, 3.0), RealMatrix::Constant(2, 2, 1.0));
    EXPECT_NEAR((l.grad - RealMatrix::Constant(2, 2, 1.0)).norm(), 0.0, 1e-15); // 2 * 2 / 4
}

TEST(Mse, MatchesExtendedPrecisionSum) {
    using boost::multiprecision::cpp_bin_float_50;
    std::mt19937_64 rng(12);
    const RealMatrix a = oracle::gaussian_matrix(7, 13, 3.0, rng);
    const RealMatrix b = oracle::gaussian_matrix(7, 13, 3.0, rng);
    cpp_bin_float_50 sum = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const cpp_bin_float_50 d = cpp_bin_float_50(a.data()[i]) - cpp_bin_float_50(b.data()[i]);
        sum += d * d;
    }
    const double expected = static_cast<double>(sum / a.size());
    EXPECT_NEAR(mse(a, b).value, expected, 1e-12);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    Parameter p("w", RealMatrix::Constant(2, 2, 0.5));
    Adam opt({}, {&p});
    opt.step();
    opt.step();
    EXPECT_EQ(p.value, RealMatrix::Constant(2, 2, 0.5));
}

TEST(Adam, FirstStepIsBiasCorrected) {
    Parameter p("w", RealMatrix::Zero(1, 1));
    p.grad(0, 0) = 1.0;
    AdamConfig cfg;
    cfg.learning_rate = 0.1;
    Adam opt(cfg, {&p});
    opt.step();
    // m^ = 1, v^ = 1 => update = -lr / (1 + eps)
    EXPECT_NEAR(p.value(0, 0), -0.1 / (1.0 + 1e-8), 1e-17);
    EXPECT_NEAR(p.value(0, 0), -0.0999999990, 1e-12);
    EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, DescendsQuadratic) {
    Parameter p("theta", RealMatrix::Ones(1, 1));
    AdamConfig cfg;
    cfg.learning_rate = 0.1;
    Adam opt(cfg, {&p});
    double prev = 0.5 * p.value(0, 0) * p.value(0, 0);
    for (int i = 0; i < 2; ++i) {
        p.grad = p.value; // d/dtheta of theta^2 / 2
        opt.step();
        const double loss = 0.5 * p.value(0, 0) * p.value(0, 0);
        EXPECT_LT(loss, prev);
        prev = loss;
    }
}

TEST(Adam, DecoupledWeightDecay) {
    Parameter p("w", RealMatrix::Constant(1, 1, 2.0));
    AdamConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.5;
    Adam opt(cfg, {&p});
    opt.step(); // zero gradient: only the decay acts
    EXPECT_NEAR(p.value(0, 0), 2.0 * (1.0 - 0.05), 1e-15);
    EXPECT_THROW(Adam({.learning_rate = -1.0}, {&p}), ParameterError);
}

TEST(Adam, DeterministicUnderSeed) {
    auto run = [] {
        Rng rng(77);
        Mlp net({2, 8, 1}, WeightInit::he(), rng);
        Adam opt({}, net.parameters());
        const RealMatrix x = oracle::gaussian_matrix(2, 16, 1.0, rng);
        const RealMatrix t = oracle::gaussian_matrix(1, 16, 1.0, rng);
        for (int k = 0; k < 25; ++k) {
            MlpCache cache;
            const RealMatrix y = net.forward(x, &cache);
            net.zero_grad();
            net.backward(cache, mse(y, t).grad);
            opt.step();
        }
        return net.weight(0).value;
    };
    EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundtripIsBitExact) {
    Rng rng(13);
    Mlp net({3, 4, 2}, WeightInit::he(), rng, "enc");
    const auto bytes = encode_checkpoint(std::as_const(net).parameters());
    EXPECT_EQ(bytes.substr(0, 4), "KAE1");
    Rng rng2(99);
    Mlp copy({3, 4, 2}, WeightInit::he(), rng2, "enc");
    load_checkpoint(decode_checkpoint(bytes), copy.parameters());
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        EXPECT_EQ(copy.weight(l).value, net.weight(l).value);
        EXPECT_EQ(copy.bias(l).value, net.bias(l).value);
    }
}

TEST(Checkpoint, DocumentedLayout) {
    Parameter p("ab", RealMatrix(1, 2));
    p.value << 1.0, -2.0;
    const auto bytes = encode_checkpoint({&p});
    ASSERT_EQ(bytes.size(), 4u + 4u + 2u + 8u + 8u + 16u);
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2u); // name length, little-endian u32
    EXPECT_EQ(bytes.substr(8, 2), "ab");
    EXPECT_EQ(static_cast<unsigned char>(bytes[10]), 1u);  // rows
    EXPECT_EQ(static_cast<unsigned char>(bytes[18]), 2u);  // cols
    EXPECT_EQ(static_cast<unsigned char>(bytes[33]), 0x3fu); // 1.0 = 0x3ff0000000000000
    EXPECT_EQ(static_cast<unsigned char>(bytes[41]), 0xc0u); // -2.0 = 0xc000000000000000
}

TEST(Checkpoint, MalformedInputs) {
    EXPECT_THROW(decode_checkpoint("KAE2"), FormatError);
    Parameter p("w", RealMatrix::Ones(2, 2));
    const auto bytes = encode_checkpoint({&p});
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
    Parameter wrong("w", RealMatrix::Ones(3, 2));
    EXPECT_THROW(load_checkpoint(decode_checkpoint(bytes), {&wrong}), DimensionError);
    Parameter missing("v", RealMatrix::Ones(2, 2));
    EXPECT_THROW(load_checkpoint(decode_checkpoint(bytes), {&missing}), StateError);
}
