#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "cdnm/activations.hpp"
#include "cdnm/adam.hpp"
#include "cdnm/medal_net.hpp"
#include "cdnm/network.hpp"
#include "cdnm/tensor.hpp"

using namespace cdnm;

TEST(Tensor, ShapeDataAgreement) {
    Tensor<float> t = Tensor<float>::zeros({2, 3, 4});
    EXPECT_EQ(t.numel(), 24);
    EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), ConfigError);
    EXPECT_THROW(Tensor<float>({0, 2}, std::vector<float>(0)), ConfigError);
    EXPECT_THROW(Tensor<float>({1, 1, 1, 1, 1}, std::vector<float>(1)), ConfigError);
}

TEST(Activations, HardSigmoid) {
    EXPECT_FLOAT_EQ(hard_sigmoid(0.0f), 0.5f);
    EXPECT_FLOAT_EQ(hard_sigmoid(2.5f), 1.0f);
    EXPECT_FLOAT_EQ(hard_sigmoid(-2.5f), 0.0f);
    EXPECT_FLOAT_EQ(hard_sigmoid(10.0f), 1.0f);
    EXPECT_FLOAT_EQ(hard_sigmoid(-10.0f), 0.0f);
    EXPECT_FLOAT_EQ(hard_sigmoid(1.0f), 0.7f);

    EXPECT_FLOAT_EQ(hard_sigmoid_grad(0.0f), 0.2f);
    EXPECT_FLOAT_EQ(hard_sigmoid_grad(2.4999f), 0.2f);
    EXPECT_FLOAT_EQ(hard_sigmoid_grad(2.5f), 0.0f);
    EXPECT_FLOAT_EQ(hard_sigmoid_grad(-2.5f), 0.0f);
    EXPECT_FLOAT_EQ(hard_sigmoid_grad(7.0f), 0.0f);
}

TEST(Activations, SoftmaxBasics) {
    double in3[3] = {0, 0, 0}, out3[3];
    softmax(in3, out3, 3);
    for (double v : out3) EXPECT_NEAR(v, 1.0 / 3, 1e-12);

    double in2[2] = {std::log(2.0), 0.0}, out2[2];
    softmax(in2, out2, 2);
    EXPECT_NEAR(out2[0], 2.0 / 3, 1e-12);
    EXPECT_NEAR(out2[1], 1.0 / 3, 1e-12);
}

TEST(Activations, SoftmaxOverflowSafety) {
    float in[2] = {1000.0f, 0.0f}, out[2];
    softmax(in, out, 2);
    EXPECT_TRUE(std::isfinite(out[0]));
    EXPECT_NEAR(out[0], 1.0f, 1e-6);
    EXPECT_NEAR(out[1], 0.0f, 1e-6);
    EXPECT_NEAR(out[0] + out[1], 1.0f, 1e-5);
}

TEST(Activations, SoftmaxSumsToOneAndPositive) {
    SplitMix64 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        double in[5], out[5];
        for (double& v : in) v = rng.next_range(-50, 50);
        softmax(in, out, 5);
        double sum = 0;
        for (double v : out) {
            EXPECT_GT(v, 0.0);
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-5);
    }
}

TEST(Forward, IdentityDense) {
    // Identity weight matrix, zero bias: output equals input.
    auto net = make_network<float>({3}, {dense_layer("d", 3, 3)}, 1);
    auto& W = net.weights.groups[0].tensors[0];
    std::fill(W.data.begin(), W.data.end(), 0.0f);
    for (int i = 0; i < 3; ++i) W.data[static_cast<std::size_t>(i * 3 + i)] = 1.0f;
    net.touch();
    Tensor<float> x({1, 3}, {0.5f, -2.0f, 3.25f});
    Tensor<float> y = forward_output(net, x);
    EXPECT_EQ(y.data, x.data);
}

TEST(Forward, MaxPoolTiny) {
    auto net = make_network<float>({2, 2, 1}, {maxpool_layer("p")}, 1);
    Tensor<float> x({1, 2, 2, 1}, {1, 2, 3, 4});
    Tensor<float> y = forward_output(net, x);
    ASSERT_EQ(y.shape, (Shape{1, 1, 1, 1}));
    EXPECT_FLOAT_EQ(y.data[0], 4.0f);
}

TEST(Forward, UpsampleNearestTiny) {
    auto net = make_network<float>({1, 1, 1}, {upsample_layer("u")}, 1);
    Tensor<float> x({1, 1, 1, 1}, {4});
    Tensor<float> y = forward_output(net, x);
    ASSERT_EQ(y.shape, (Shape{1, 2, 2, 1}));
    for (float v : y.data) EXPECT_FLOAT_EQ(v, 4.0f);
}

TEST(Forward, ShapeMismatchNamesLayer) {
    auto net = make_network<float>({4}, {dense_layer("first_dense", 4, 2)}, 1);
    Tensor<float> bad({1, 3}, {1, 2, 3});
    try {
        forward(net, bad);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("input shape"), std::string::npos);
    }
    // A broken chain names the offending layer.
    try {
        make_network<float>({4}, {dense_layer("a", 4, 2), dense_layer("second", 3, 1)}, 1);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("second"), std::string::npos);
    }
}

TEST(Forward, NoSilentBroadcast) {
    auto net = make_network<float>({2, 2, 1}, {maxpool_layer("p")}, 1);
    EXPECT_THROW(forward(net, Tensor<float>({1, 2, 2}, {1, 2, 3, 4})), ConfigError);
    EXPECT_THROW(make_network<float>({3, 3, 1}, {maxpool_layer("p")}, 1), ConfigError);
}

TEST(Forward, SoftmaxOnlyFinalLayer) {
    LayerSpec d1 = dense_layer("d1", 2, 2, Activation::Softmax);
    LayerSpec d2 = dense_layer("d2", 2, 2);
    EXPECT_THROW(make_network<float>({2}, {d1, d2}, 1), ConfigError);
    EXPECT_NO_THROW(make_network<float>({2}, {d2, d1}, 1));
}

TEST(Forward, SoftmaxSliceActivation) {
    LayerSpec out = dense_layer("out", 4, 4, Activation::Softmax);
    out.softmax_begin = 2;
    out.softmax_len = 2;
    auto net = make_network<float>({4}, {out}, 3);
    auto& W = net.weights.groups[0].tensors[0];
    std::fill(W.data.begin(), W.data.end(), 0.0f);
    for (int i = 0; i < 4; ++i) W.data[static_cast<std::size_t>(i * 4 + i)] = 1.0f;
    net.touch();
    Tensor<float> x({1, 4}, {0.3f, -1.0f, 2.0f, 2.0f});
    Tensor<float> y = forward_output(net, x);
    EXPECT_FLOAT_EQ(y.data[0], 0.3f);  // outside the slice: pass-through
    EXPECT_FLOAT_EQ(y.data[1], -1.0f);
    EXPECT_NEAR(y.data[2], 0.5f, 1e-6);
    EXPECT_NEAR(y.data[3], 0.5f, 1e-6);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
    auto net = make_network<float>(
        {4}, {dense_layer("d1", 4, 3, Activation::ReLU), dense_layer("d2", 3, 2)}, 9);
    Tensor<float> x({2, 4}, {1, 2, 3, 4, -1, 0.5f, 2, -3});
    auto cache = forward(net, x);
    WeightsBundle<float> grads;
    Tensor<float> dx = backward(net, cache, Tensor<float>::zeros(cache.output().shape), grads);
    for (const auto& g : grads.groups)
        for (const auto& t : g.tensors)
            for (float v : t.data) EXPECT_FLOAT_EQ(v, 0.0f);
    for (float v : dx.data) EXPECT_FLOAT_EQ(v, 0.0f);
}

TEST(Backward, DenseLinearMapDerivative) {
    // Scalar loss = the single output; dW equals the input.
    auto net = make_network<float>({3}, {dense_layer("d", 3, 1)}, 4);
    Tensor<float> x({1, 3}, {2.0f, -1.5f, 0.25f});
    auto cache = forward(net, x);
    WeightsBundle<float> grads;
    backward(net, cache, Tensor<float>::full(cache.output().shape, 1.0f), grads);
    const auto& dW = grads.groups[0].tensors[0];
    EXPECT_FLOAT_EQ(dW.data[0], 2.0f);
    EXPECT_FLOAT_EQ(dW.data[1], -1.5f);
    EXPECT_FLOAT_EQ(dW.data[2], 0.25f);
    EXPECT_FLOAT_EQ(grads.groups[0].tensors[1].data[0], 1.0f);  // bias
}

TEST(Backward, StaleCacheRejected) {
    auto net = make_network<float>({2}, {dense_layer("d", 2, 2)}, 5);
    Tensor<float> x({1, 2}, {1, 2});
    auto cache = forward(net, x);
    net.weights.groups[0].tensors[1].data[0] = 1.0f;
    net.touch();
    WeightsBundle<float> grads;
    EXPECT_THROW(backward(net, cache, Tensor<float>::zeros({1, 2}), grads), UsageError);
}

TEST(Backward, WrongGradientShapeRejected) {
    auto net = make_network<float>({2}, {dense_layer("d", 2, 3)}, 5);
    auto cache = forward(net, Tensor<float>({1, 2}, {1, 2}));
    WeightsBundle<float> grads;
    EXPECT_THROW(backward(net, cache, Tensor<float>::zeros({1, 2}), grads), UsageError);
}

TEST(ParamCount, Examples) {
    auto dense = make_network<float>({4}, {dense_layer("d", 4, 2)}, 1);
    EXPECT_EQ(param_count(dense), 10);

    // Depthwise 3x3 on 6 channels + pointwise 6->8 with biases.
    auto ds = make_network<float>(
        {8, 8, 6}, {dwconv2d_layer("dw", 3, 3, 6), conv2d_layer("pw", 1, 1, 6, 8)}, 1);
    EXPECT_EQ(param_count(ds), 54 + 6 + 48 + 8);

    MedalConfig mc;
    mc.height = 64;
    mc.width = 64;
    mc.channels = 3;
    auto medal = build_medal_net<float>(mc, 1);
    EXPECT_LE(param_count(medal), 3000);
}

TEST(Adam, ZeroGradientsLeaveWeightsUntouched) {
    auto net = make_network<float>({3}, {dense_layer("d", 3, 2)}, 11);
    auto before = net.weights;
    AdamState<float> st = AdamState<float>::for_weights(net.weights);
    adam_step(net, net.weights.zeros_like(), st, 5e-3);
    EXPECT_EQ(st.timestep, 1);
    for (std::size_t g = 0; g < before.groups.size(); ++g)
        for (std::size_t t = 0; t < before.groups[g].tensors.size(); ++t) {
            EXPECT_EQ(net.weights.groups[g].tensors[t].data, before.groups[g].tensors[t].data);
            for (float v : st.m.groups[g].tensors[t].data) EXPECT_FLOAT_EQ(v, 0.0f);
            for (float v : st.v.groups[g].tensors[t].data) EXPECT_FLOAT_EQ(v, 0.0f);
        }
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
    // Bias-corrected first step is lr * g / (|g| + eps) regardless of |g|.
    for (double g : {1e-4, 0.5, 30.0, -7.0}) {
        auto net = make_network<float>({1}, {dense_layer("d", 1, 1)}, 11);
        AdamState<float> st = AdamState<float>::for_weights(net.weights);
        auto grads = net.weights.zeros_like();
        grads.groups[0].tensors[0].data[0] = static_cast<float>(g);
        const float before = net.weights.groups[0].tensors[0].data[0];
        adam_step(net, grads, st, 5e-3);
        const float delta = net.weights.groups[0].tensors[0].data[0] - before;
        EXPECT_NEAR(std::abs(delta), 5e-3, 5e-3 * 1e-3) << "g=" << g;
        EXPECT_EQ(delta > 0, g < 0);
    }
}

TEST(Adam, DeterministicAcrossRuns) {
    auto run = [&]() {
        auto net = make_network<float>({2}, {dense_layer("d", 2, 2)}, 21);
        AdamState<float> st = AdamState<float>::for_weights(net.weights);
        auto grads = net.weights.zeros_like();
        for (auto& v : grads.groups[0].tensors[0].data) v = 0.25f;
        adam_step(net, grads, st, 1e-2);
        adam_step(net, grads, st, 1e-2);
        return net.weights.groups[0].tensors[0].data;
    };
    EXPECT_EQ(run(), run());
}

TEST(Adam, NonFiniteGradientNamesLayer) {
    auto net = make_network<float>({2}, {dense_layer("broken_layer", 2, 2)}, 3);
    AdamState<float> st = AdamState<float>::for_weights(net.weights);
    auto grads = net.weights.zeros_like();
    grads.groups[0].tensors[0].data[0] = std::numeric_limits<float>::quiet_NaN();
    try {
        adam_step(net, grads, st, 1e-2);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("broken_layer"), std::string::npos);
    }
}

TEST(Determinism, ForwardBitIdenticalAcrossRuns) {
    MedalConfig mc;
    mc.height = 16;
    mc.width = 16;
    mc.channels = 3;
    auto run = [&]() {
        auto net = build_medal_net<float>(mc, 99);
        SplitMix64 rng(5);
        Tensor<float> x = Tensor<float>::zeros({1, 16, 16, 6});
        for (auto& v : x.data) v = static_cast<float>(rng.next_double());
        return forward_output(net, x).data;
    };
    EXPECT_EQ(run(), run());
}
