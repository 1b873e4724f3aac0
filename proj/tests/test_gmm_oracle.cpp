#include <gtest/gtest.h>

#include <cmath>

#include "cdnm/gmm_oracle.hpp"

using namespace cdnm;

namespace {

PixelHistory<double> bimodal_history(double w_low, double lo, double hi, double sd, int frames,
                                     std::uint64_t seed) {
    SplitMix64 rng(seed);
    PixelHistory<double> h;
    h.frames = frames;
    h.channels = 1;
    for (int t = 0; t < frames; ++t) {
        const double center = rng.next_double() < w_low ? lo : hi;
        double v = center + sd * rng.next_normal();
        h.values.push_back(std::clamp(v, 0.0, 1.0));
    }
    return h;
}

}  // namespace

TEST(EmFit, PointMass) {
    PixelHistory<double> h;
    h.frames = 96;
    h.channels = 1;
    h.values.assign(96, 0.37);
    auto fit = em_fit(h, 3, {16, 32});
    EXPECT_TRUE(fit.converged);
    auto pick = select_background(fit.params);
    EXPECT_NEAR(pick.mu_star[0], 0.37, 1e-9);
    // Every plausible component sits at the sample; the winner's variance
    // clamps to the lower bound.
    EXPECT_NEAR(fit.params.sigma[static_cast<std::size_t>(pick.winner)], 16.0 / 255, 1e-12);
    EXPECT_NEAR(fit.nll, nll_loss(fit.params, h), 1e-9);
}

TEST(EmFit, BimodalSeventyThirty) {
    // 70% around 0.2, 30% around 0.8, noise sd 0.02. Permissive variance
    // bounds keep the fit undistorted.
    auto h = bimodal_history(0.7, 0.2, 0.8, 0.02, 512, 42);
    auto fit = em_fit(h, 2, {0.01, 128.0}, 500, 1e-10);
    int low = fit.params.mu[0] < fit.params.mu[1] ? 0 : 1;
    int high = 1 - low;
    EXPECT_NEAR(fit.params.mu[static_cast<std::size_t>(low)], 0.2, 0.02);
    EXPECT_NEAR(fit.params.mu[static_cast<std::size_t>(high)], 0.8, 0.02);
    EXPECT_NEAR(fit.params.pi[static_cast<std::size_t>(low)], 0.7, 0.05);
    EXPECT_NEAR(fit.params.pi[static_cast<std::size_t>(high)], 0.3, 0.05);
}

TEST(EmFit, ShuffleInvariant) {
    auto h = bimodal_history(0.6, 0.3, 0.75, 0.02, 96, 77);
    auto fit1 = em_fit(h, 3, {16, 32});
    SplitMix64 rng(5);
    // Permute samples; EM is order-free including its quantile init.
    std::vector<int> idx(96);
    for (int i = 0; i < 96; ++i) idx[static_cast<std::size_t>(i)] = i;
    shuffle(idx, rng);
    PixelHistory<double> h2;
    h2.frames = 96;
    h2.channels = 1;
    for (int i : idx) h2.values.push_back(h.values[static_cast<std::size_t>(i)]);
    auto fit2 = em_fit(h2, 3, {16, 32});
    EXPECT_NEAR(fit1.nll, fit2.nll, 1e-9);
    for (int k = 0; k < 3; ++k) {
        EXPECT_NEAR(fit1.params.mu[static_cast<std::size_t>(k)],
                    fit2.params.mu[static_cast<std::size_t>(k)], 1e-9);
        EXPECT_NEAR(fit1.params.pi[static_cast<std::size_t>(k)],
                    fit2.params.pi[static_cast<std::size_t>(k)], 1e-9);
    }
}

TEST(EmFit, NllNeverIncreases) {
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        auto h = bimodal_history(0.65, 0.25, 0.8, 0.03, 96, seed);
        auto fit = em_fit(h, 3, {16, 32}, 200, 1e-9);
        for (std::size_t i = 1; i < fit.nll_trajectory.size(); ++i)
            EXPECT_LE(fit.nll_trajectory[i], fit.nll_trajectory[i - 1] + 1e-8)
                << "seed " << seed << " iteration " << i;
    }
}

TEST(EmFit, OutputSatisfiesParamInvariants) {
    for (std::uint64_t seed = 10; seed < 30; ++seed) {
        auto h = bimodal_history(0.7, 0.2, 0.85, 0.025, 96, seed);
        auto fit = em_fit(h, 3, {16, 32});
        EXPECT_EQ(params_invariant_violation(fit.params, 16, 32), "");
    }
}

TEST(EmFit, RejectsTooFewSamples) {
    PixelHistory<double> h;
    h.frames = 2;
    h.channels = 1;
    h.values = {0.1, 0.9};
    EXPECT_THROW(em_fit(h, 3, {16, 32}), UsageError);
}

TEST(OracleBackground, ConstantHistory) {
    PixelHistory<double> h;
    h.frames = 50;
    h.channels = 1;
    h.values.assign(50, 0.37);
    auto bg = oracle_background(h, 32);
    // 0.37 falls in bin 11 of 32; the center contains the value.
    EXPECT_NEAR(bg[0], (11 + 0.5) / 32, 1e-12);
    EXPECT_LT(std::abs(bg[0] - 0.37), 0.5 / 32 + 1e-12);
}

TEST(OracleBackground, BimodalPicksDominantMode) {
    auto h = bimodal_history(0.7, 0.2, 0.8, 0.02, 500, 21);
    auto bg = oracle_background(h, 32);
    EXPECT_NEAR(bg[0], 0.2, 0.05);
}

TEST(OracleBackground, UniformTieGoesToLowestBin) {
    PixelHistory<double> h;
    h.frames = 4;
    h.channels = 1;
    h.values = {0.875, 0.625, 0.125, 0.375};  // one hit per bin of 4
    auto bg = oracle_background(h, 4);
    EXPECT_NEAR(bg[0], 0.125, 1e-12);  // center of bin 0
}

TEST(OracleBackground, PermutationInvariant) {
    auto h = bimodal_history(0.7, 0.3, 0.7, 0.05, 96, 31);
    auto bg1 = oracle_background(h, 32);
    SplitMix64 rng(17);
    shuffle(h.values, rng);
    auto bg2 = oracle_background(h, 32);
    EXPECT_EQ(bg1, bg2);
}

TEST(OracleBackground, JointBinsForColor) {
    PixelHistory<double> h;
    h.frames = 10;
    h.channels = 3;
    for (int t = 0; t < 10; ++t) {
        h.values.push_back(0.1);
        h.values.push_back(0.5);
        h.values.push_back(0.9);
    }
    auto bg = oracle_background(h, 8);
    EXPECT_NEAR(bg[0], (0 + 0.5) / 8, 1e-12);
    EXPECT_NEAR(bg[1], (4 + 0.5) / 8, 1e-12);
    EXPECT_NEAR(bg[2], (7 + 0.5) / 8, 1e-12);
}

TEST(CompareFits, IdenticalAndPermuted) {
    auto h = bimodal_history(0.7, 0.25, 0.75, 0.02, 96, 91);
    auto fit = em_fit(h, 3, {16, 32});
    auto cmp = compare_fits(fit.params, fit.params, h);
    EXPECT_DOUBLE_EQ(cmp.nll_a, cmp.nll_b);
    EXPECT_DOUBLE_EQ(cmp.bg_distance, 0.0);

    // Permuting the component labels changes nothing observable.
    MixtureParams<double> perm;
    perm.components = 3;
    perm.channels = 1;
    for (int k : {2, 0, 1}) {
        perm.pi.push_back(fit.params.pi[static_cast<std::size_t>(k)]);
        perm.sigma.push_back(fit.params.sigma[static_cast<std::size_t>(k)]);
        perm.mu.push_back(fit.params.mu[static_cast<std::size_t>(k)]);
    }
    auto cmp2 = compare_fits(fit.params, perm, h);
    EXPECT_NEAR(cmp2.nll_a, cmp2.nll_b, 1e-9);
    EXPECT_NEAR(cmp2.bg_distance, 0.0, 1e-12);
}

TEST(CompareFits, RejectsMismatchedShape) {
    MixtureParams<double> a;
    a.components = 2;
    a.channels = 1;
    a.pi = {0.5, 0.5};
    a.sigma = {0.1, 0.1};
    a.mu = {0.2, 0.8};
    MixtureParams<double> b = a;
    b.components = 3;
    b.pi = {0.3, 0.3, 0.4};
    b.sigma = {0.1, 0.1, 0.1};
    b.mu = {0.2, 0.5, 0.8};
    PixelHistory<double> h;
    h.frames = 4;
    h.channels = 1;
    h.values = {0.1, 0.2, 0.3, 0.4};
    EXPECT_THROW(compare_fits(a, b, h), UsageError);
}
