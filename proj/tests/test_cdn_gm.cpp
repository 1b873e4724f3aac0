#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cdnm/cdn_gm.hpp"
#include "cdnm/common.hpp"

using namespace cdnm;

namespace {

CdnGmConfig gray_config() {
    CdnGmConfig cfg;
    cfg.channels = 1;
    return cfg;
}

PixelHistory<double> history_from(std::vector<double> values, int channels = 1) {
    PixelHistory<double> h;
    h.channels = channels;
    h.frames = static_cast<int>(values.size()) / channels;
    h.values = std::move(values);
    return h;
}

}  // namespace

TEST(CdnConfig, Validation) {
    CdnGmConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.mixture_components, 3);
    EXPECT_DOUBLE_EQ(cfg.sigma_min_gray, 16.0);
    EXPECT_DOUBLE_EQ(cfg.sigma_max_gray, 32.0);
    EXPECT_DOUBLE_EQ(cfg.learning_rate, 5e-3);

    cfg.mixture_components = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = CdnGmConfig{};
    cfg.sigma_min_gray = 40;  // above max
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = CdnGmConfig{};
    cfg.sigma_max_gray = 300;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = CdnGmConfig{};
    cfg.channels = 2;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Constrain, AllZeroHeadDefaults) {
    CdnGmConfig cfg;  // c=3, K=3, bounds [16,32]
    std::vector<float> raw(static_cast<std::size_t>(cfg.head_size()), 0.0f);
    auto p = constrain(raw, cfg);
    for (float v : p.pi) EXPECT_NEAR(v, 1.0f / 3, 1e-6);
    for (float v : p.sigma) EXPECT_NEAR(v, 24.0 / 255.0, 1e-6);  // 0.094118
    for (float v : p.mu) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(Constrain, Saturation) {
    CdnGmConfig cfg;
    std::vector<float> raw(static_cast<std::size_t>(cfg.head_size()), 0.0f);
    RawHeadView<const float> view(raw.data(), cfg.mixture_components, cfg.channels);
    // sigma block saturated high
    for (int k = 0; k < cfg.mixture_components; ++k)
        raw[static_cast<std::size_t>(cfg.mixture_components * cfg.channels + k)] = 10.0f;
    // mu block saturated low
    for (int i = 0; i < cfg.mixture_components * cfg.channels; ++i)
        raw[static_cast<std::size_t>(i)] = -10.0f;
    auto p = constrain(raw, cfg);
    for (float v : p.sigma) EXPECT_FLOAT_EQ(v, 32.0f / 255.0f);
    for (float v : p.mu) EXPECT_FLOAT_EQ(v, 0.0f);
    (void)view;
}

TEST(Constrain, InvariantsHoldForRandomHeads) {
    CdnGmConfig cfg;
    SplitMix64 rng(404);
    for (int trial = 0; trial < 10000; ++trial) {
        std::vector<float> raw(static_cast<std::size_t>(cfg.head_size()));
        for (auto& v : raw) v = static_cast<float>(rng.next_range(-60, 60));
        auto p = constrain(raw, cfg);
        const std::string bad =
            params_invariant_violation(p, cfg.sigma_min_gray, cfg.sigma_max_gray);
        ASSERT_EQ(bad, "") << "trial " << trial;
    }
}

TEST(GmmPdf, NormalizerCancels) {
    MixtureParams<double> p;
    p.components = 1;
    p.channels = 1;
    p.pi = {1.0};
    p.sigma = {1.0 / kTwoPi};
    p.mu = {0.4};
    EXPECT_NEAR(gmm_pdf(std::vector<double>{0.4}, p), 1.0, 1e-12);
}

TEST(GmmPdf, PeakValueGeneral) {
    MixtureParams<double> p;
    p.components = 1;
    p.channels = 3;
    p.pi = {1.0};
    p.sigma = {0.08};
    p.mu = {0.2, 0.5, 0.9};
    const double want = std::pow(kTwoPi * 0.08, -1.5);
    EXPECT_NEAR(gmm_pdf(std::vector<double>{0.2, 0.5, 0.9}, p), want, 1e-12 * want);
}

TEST(GmmPdf, MixtureCollapse) {
    MixtureParams<double> one;
    one.components = 1;
    one.channels = 1;
    one.pi = {1.0};
    one.sigma = {0.1};
    one.mu = {0.3};
    MixtureParams<double> two;
    two.components = 2;
    two.channels = 1;
    two.pi = {0.5, 0.5};
    two.sigma = {0.1, 0.1};
    two.mu = {0.3, 0.3};
    for (double x : {0.0, 0.3, 0.77})
        EXPECT_NEAR(gmm_pdf(std::vector<double>{x}, two), gmm_pdf(std::vector<double>{x}, one),
                    1e-14);
}

TEST(NllLoss, ZeroWhenDensityIsOne) {
    MixtureParams<double> p;
    p.components = 1;
    p.channels = 1;
    p.pi = {1.0};
    p.sigma = {1.0 / kTwoPi};
    p.mu = {0.6};
    auto h = history_from({0.6, 0.6, 0.6, 0.6});
    EXPECT_NEAR(nll_loss(p, h), 0.0, 1e-12);
}

TEST(NllLoss, PermutationInvariant) {
    SplitMix64 rng(99);
    MixtureParams<double> p;
    p.components = 3;
    p.channels = 1;
    p.pi = {0.5, 0.3, 0.2};
    p.sigma = {0.07, 0.1, 0.12};
    p.mu = {0.2, 0.5, 0.8};
    std::vector<double> vals(96);
    for (auto& v : vals) v = rng.next_double();
    auto h1 = history_from(vals);
    shuffle(vals, rng);
    auto h2 = history_from(vals);
    EXPECT_DOUBLE_EQ(nll_loss(p, h1), nll_loss(p, h2));
}

TEST(NllLoss, FloatMatches64BitReference) {
    SplitMix64 rng(31337);
    for (int trial = 0; trial < 50; ++trial) {
        CdnGmConfig cfg = gray_config();
        std::vector<float> raw(static_cast<std::size_t>(cfg.head_size()));
        for (auto& v : raw) v = static_cast<float>(rng.next_range(-3, 3));
        auto pf = constrain(raw, cfg);
        MixtureParams<double> pd;
        pd.components = pf.components;
        pd.channels = pf.channels;
        pd.pi.assign(pf.pi.begin(), pf.pi.end());
        pd.sigma.assign(pf.sigma.begin(), pf.sigma.end());
        pd.mu.assign(pf.mu.begin(), pf.mu.end());

        PixelHistory<float> hf;
        hf.frames = 96;
        hf.channels = 1;
        PixelHistory<double> hd;
        hd.frames = 96;
        hd.channels = 1;
        for (int t = 0; t < 96; ++t) {
            const double x = rng.next_double();
            hf.values.push_back(static_cast<float>(x));
            hd.values.push_back(static_cast<float>(x));  // same rounded sample
        }
        const double lf = nll_loss(pf, hf);
        const double ld = nll_loss(pd, hd);
        EXPECT_NEAR(lf, ld, std::abs(ld) * 1e-4 + 1e-6);
    }
}

TEST(Responsibilities, SymmetryAndSingleComponent) {
    MixtureParams<double> p;
    p.components = 2;
    p.channels = 1;
    p.pi = {0.5, 0.5};
    p.sigma = {0.08, 0.08};
    p.mu = {0.4, 0.4};
    auto r = responsibilities(p, std::vector<double>{0.9});
    EXPECT_NEAR(r[0], 0.5, 1e-12);
    EXPECT_NEAR(r[1], 0.5, 1e-12);

    MixtureParams<double> one;
    one.components = 1;
    one.channels = 1;
    one.pi = {1.0};
    one.sigma = {0.1};
    one.mu = {0.5};
    auto r1 = responsibilities(one, std::vector<double>{0.1});
    EXPECT_DOUBLE_EQ(r1[0], 1.0);
}

TEST(Responsibilities, FarComponentLosesPosterior) {
    MixtureParams<double> p;
    p.components = 2;
    p.channels = 1;
    p.pi = {0.5, 0.5};
    p.sigma = {16.0 / 255, 16.0 / 255};
    p.mu = {0.1, 0.9};
    const std::vector<double> x = {0.1};
    auto r = responsibilities(p, x);
    // Direct density evaluation as the reference.
    const double n1 = std::exp(log_component_density(x.data(), p, 0));
    const double n2 = std::exp(log_component_density(x.data(), p, 1));
    EXPECT_NEAR(r[0], 0.5 * n1 / (0.5 * n1 + 0.5 * n2), 1e-12);
    EXPECT_GT(r[0], 0.95);
    EXPECT_NEAR(r[0] + r[1], 1.0, 1e-12);
}

TEST(HeadGradients, MixingBlockEqualsPiMinusPosterior) {
    // Single-sample history: the mixing gradient is exactly pi - Pi.
    CdnGmConfig cfg = gray_config();
    SplitMix64 rng(555);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> raw(static_cast<std::size_t>(cfg.head_size()));
        for (auto& v : raw) v = rng.next_range(-2, 2);
        auto p = constrain(raw, cfg);
        auto h = history_from({rng.next_double()});
        auto g = head_gradients(p, h, cfg);
        auto post = responsibilities(p, h.sample(0));
        const int K = cfg.mixture_components, c = cfg.channels;
        for (int k = 0; k < K; ++k) {
            const double want = p.pi[static_cast<std::size_t>(k)] - post[static_cast<std::size_t>(k)];
            EXPECT_NEAR(g[static_cast<std::size_t>(K * c + K + k)], want, 1e-12);
        }
    }
}

TEST(HeadGradients, SaturatedCoordinatesAreFlat) {
    CdnGmConfig cfg = gray_config();
    std::vector<double> raw(static_cast<std::size_t>(cfg.head_size()), 0.0);
    const int K = cfg.mixture_components;
    raw[static_cast<std::size_t>(K + 0)] = 10.0;   // sigma_0 saturated high
    raw[static_cast<std::size_t>(0)] = -10.0;      // mu_0 saturated low
    auto p = constrain(raw, cfg);
    auto h = history_from({0.3, 0.6, 0.9});
    auto g = head_gradients(p, h, cfg);
    EXPECT_DOUBLE_EQ(g[static_cast<std::size_t>(K + 0)], 0.0);  // sigma_0 gradient
    EXPECT_DOUBLE_EQ(g[0], 0.0);                                // mu_0 gradient
    EXPECT_NE(g[static_cast<std::size_t>(K + 1)], 0.0);         // live sigma still moves
}

TEST(HeadGradients, MatchesFiniteDifferencesOfLoss) {
    // Central differences over the raw head itself, h = 1e-5, 64-bit.
    CdnGmConfig cfg;
    cfg.channels = 3;
    SplitMix64 rng(777);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> raw(static_cast<std::size_t>(cfg.head_size()));
        for (auto& v : raw) v = rng.next_range(-2.0, 2.0);
        PixelHistory<double> h;
        h.frames = 24;
        h.channels = 3;
        for (int i = 0; i < 24 * 3; ++i) h.values.push_back(rng.next_double());

        auto params = constrain(raw, cfg);
        auto analytic = head_gradients(params, h, cfg);
        const double step = 1e-5;
        for (int i = 0; i < cfg.head_size(); ++i) {
            const double keep = raw[static_cast<std::size_t>(i)];
            raw[static_cast<std::size_t>(i)] = keep + step;
            const double lp = nll_loss(constrain(raw, cfg), h);
            raw[static_cast<std::size_t>(i)] = keep - step;
            const double lm = nll_loss(constrain(raw, cfg), h);
            raw[static_cast<std::size_t>(i)] = keep;
            const double fd = (lp - lm) / (2 * step);
            const double an = analytic[static_cast<std::size_t>(i)];
            EXPECT_NEAR(an, fd, std::max(1e-4, std::abs(fd)) * 1e-4)
                << "trial " << trial << " coord " << i;
        }
    }
}

TEST(SelectBackground, RatioArithmetic) {
    MixtureParams<double> p;
    p.components = 3;
    p.channels = 1;
    p.pi = {0.7, 0.2, 0.1};
    p.sigma = {0.07, 0.10, 0.12};
    p.mu = {0.25, 0.5, 0.75};
    auto pick = select_background(p);
    EXPECT_EQ(pick.winner, 0);  // ratios 10, 2, 0.833
    EXPECT_DOUBLE_EQ(pick.mu_star[0], 0.25);
}

TEST(SelectBackground, SingleComponentAndTies) {
    MixtureParams<double> one;
    one.components = 1;
    one.channels = 1;
    one.pi = {1.0};
    one.sigma = {0.1};
    one.mu = {0.42};
    EXPECT_EQ(select_background(one).winner, 0);

    MixtureParams<double> tie;
    tie.components = 3;
    tie.channels = 1;
    tie.pi = {0.4, 0.4, 0.2};
    tie.sigma = {0.08, 0.08, 0.08};
    tie.mu = {0.1, 0.9, 0.5};
    EXPECT_EQ(select_background(tie).winner, 0);  // exact tie -> lowest index
}

TEST(SelectBackground, InvariantUnderCommonRescaling) {
    SplitMix64 rng(808);
    for (int trial = 0; trial < 200; ++trial) {
        MixtureParams<double> p;
        p.components = 3;
        p.channels = 1;
        double sum = 0;
        for (int k = 0; k < 3; ++k) {
            p.pi.push_back(rng.next_range(0.05, 1.0));
            sum += p.pi.back();
            p.sigma.push_back(rng.next_range(16.0 / 255, 32.0 / 255));
            p.mu.push_back(rng.next_double());
        }
        for (auto& v : p.pi) v /= sum;
        const int w1 = select_background(p).winner;
        // Scale every sigma by a common factor: all ratios rescale together.
        MixtureParams<double> q = p;
        for (auto& v : q.sigma) v *= 1.7;
        EXPECT_EQ(select_background(q).winner, w1);
    }
}

TEST(BuildCdn, HeadSizesAndBudget) {
    CdnGmConfig rgb;
    auto net3 = build_cdn_gm<float>(rgb, 5);
    EXPECT_EQ(net3.output_shape(), (Shape{15}));  // (3+2)*3
    EXPECT_LE(param_count(net3), 5000);

    CdnGmConfig gray = gray_config();
    auto net1 = build_cdn_gm<float>(gray, 5);
    EXPECT_EQ(net1.output_shape(), (Shape{9}));  // (1+2)*3

    CdnGmConfig bad = gray_config();
    bad.history_len = 90;  // not divisible by the stride plan
    EXPECT_THROW(build_cdn_gm<float>(bad, 5), ConfigError);
}

TEST(TrainCdn, ZeroEpochsLeaveWeightsUntouched) {
    CdnGmConfig cfg = gray_config();
    auto net = build_cdn_gm<float>(cfg, 5);
    auto before = net.weights;
    Tensor<float> histories = Tensor<float>::zeros({4, cfg.history_len, 1});
    auto rep = train_cdn_gm(net, histories, 0, cfg, 1);
    EXPECT_FALSE(rep.aborted);
    EXPECT_EQ(rep.epochs_run, 0);
    for (std::size_t g = 0; g < before.groups.size(); ++g)
        for (std::size_t t = 0; t < before.groups[g].tensors.size(); ++t)
            EXPECT_EQ(net.weights.groups[g].tensors[t].data, before.groups[g].tensors[t].data);
}

TEST(TrainCdn, RecoversConstantHistories) {
    // All histories constant at v: the selected background converges to v.
    CdnGmConfig cfg = gray_config();
    const float v = 0.62f;
    Tensor<float> histories = Tensor<float>::full({32, cfg.history_len, 1}, v);
    auto net = build_cdn_gm<float>(cfg, 7);
    auto rep = train_cdn_gm(net, histories, 300, cfg, 11);
    ASSERT_FALSE(rep.aborted);
    auto params = cdn_infer(net, histories, cfg);
    auto pick = select_background(params[0]);
    EXPECT_NEAR(pick.mu_star[0], v, 4.0 / 255.0);
}
