#pragma once

#include <algorithm>
#include <cstdint>
#include <string>

#include "cdnm/activations.hpp"
#include "cdnm/common.hpp"
#include "cdnm/tensor.hpp"

namespace cdnm {

enum class LayerKind : std::uint8_t {
    Dense,
    Conv2D,
    DepthwiseConv2D,
    Conv1D,
    DepthwiseConv1D,
    MaxPool,
    UpsampleNearest,
    InstanceNorm,
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv2D: return "conv2d";
        case LayerKind::DepthwiseConv2D: return "dwconv2d";
        case LayerKind::Conv1D: return "conv1d";
        case LayerKind::DepthwiseConv1D: return "dwconv1d";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::UpsampleNearest: return "upsample";
        case LayerKind::InstanceNorm: return "instnorm";
    }
    return "?";
}

// One layer of a sequential network. Convolutions use "same" zero padding;
// spatial extents only change at strides, pools and upsamples.
struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    std::string name;
    Activation activation = Activation::Identity;

    int in_features = 0, out_features = 0;  // Dense
    int kernel_h = 1, kernel_w = 1;         // Conv* (1-D uses kernel_w)
    int in_channels = 0, out_channels = 0;  // Conv*, InstanceNorm uses in_channels
    int stride = 1;
    int factor = 2;             // MaxPool / UpsampleNearest
    double norm_epsilon = 1e-5; // InstanceNorm

    // Softmax applies to [softmax_begin, softmax_begin + softmax_len) of the
    // flattened per-sample feature vector; softmax_len == 0 means the whole
    // vector. Other coordinates pass through unchanged.
    int softmax_begin = 0, softmax_len = 0;
};

inline LayerSpec dense_layer(std::string name, int in, int out,
                             Activation act = Activation::Identity) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.name = std::move(name);
    s.in_features = in;
    s.out_features = out;
    s.activation = act;
    return s;
}

inline LayerSpec conv1d_layer(std::string name, int k, int cin, int cout, int stride = 1,
                              Activation act = Activation::Identity) {
    LayerSpec s;
    s.kind = LayerKind::Conv1D;
    s.name = std::move(name);
    s.kernel_w = k;
    s.in_channels = cin;
    s.out_channels = cout;
    s.stride = stride;
    s.activation = act;
    return s;
}

inline LayerSpec dwconv1d_layer(std::string name, int k, int channels, int stride = 1,
                                Activation act = Activation::Identity) {
    LayerSpec s;
    s.kind = LayerKind::DepthwiseConv1D;
    s.name = std::move(name);
    s.kernel_w = k;
    s.in_channels = channels;
    s.out_channels = channels;
    s.stride = stride;
    s.activation = act;
    return s;
}

inline LayerSpec conv2d_layer(std::string name, int kh, int kw, int cin, int cout,
                              Activation act = Activation::Identity) {
    LayerSpec s;
    s.kind = LayerKind::Conv2D;
    s.name = std::move(name);
    s.kernel_h = kh;
    s.kernel_w = kw;
    s.in_channels = cin;
    s.out_channels = cout;
    s.activation = act;
    return s;
}

inline LayerSpec dwconv2d_layer(std::string name, int kh, int kw, int channels,
                                Activation act = Activation::Identity) {
    LayerSpec s;
    s.kind = LayerKind::DepthwiseConv2D;
    s.name = std::move(name);
    s.kernel_h = kh;
    s.kernel_w = kw;
    s.in_channels = channels;
    s.out_channels = channels;
    s.activation = act;
    return s;
}

inline LayerSpec maxpool_layer(std::string name) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    s.name = std::move(name);
    return s;
}

inline LayerSpec upsample_layer(std::string name) {
    LayerSpec s;
    s.kind = LayerKind::UpsampleNearest;
    s.name = std::move(name);
    return s;
}

inline LayerSpec instnorm_layer(std::string name, int channels,
                                Activation act = Activation::Identity,
                                double eps = 1e-5) {
    LayerSpec s;
    s.kind = LayerKind::InstanceNorm;
    s.name = std::move(name);
    s.in_channels = channels;
    s.out_channels = channels;
    s.norm_epsilon = eps;
    s.activation = act;
    return s;
}

inline void validate_layer_spec(const LayerSpec& s) {
    auto fail = [&](const std::string& msg) { throw ConfigError("layer '" + s.name + "': " + msg); };
    switch (s.kind) {
        case LayerKind::Dense:
            if (s.in_features < 1 || s.out_features < 1) fail("dense feature counts must be >= 1");
            break;
        case LayerKind::Conv1D:
        case LayerKind::DepthwiseConv1D:
            if (s.kernel_w < 1) fail("kernel extent must be >= 1");
            if (s.in_channels < 1 || s.out_channels < 1) fail("channel counts must be >= 1");
            if (s.stride < 1) fail("stride must be >= 1");
            break;
        case LayerKind::Conv2D:
        case LayerKind::DepthwiseConv2D:
            if (s.kernel_h < 1 || s.kernel_w < 1) fail("kernel extents must be >= 1");
            if (s.in_channels < 1 || s.out_channels < 1) fail("channel counts must be >= 1");
            if (s.stride < 1) fail("stride must be >= 1");
            break;
        case LayerKind::MaxPool:
        case LayerKind::UpsampleNearest:
            if (s.factor != 2) fail("pool/upsample factor must be 2");
            break;
        case LayerKind::InstanceNorm:
            if (s.in_channels < 1) fail("channel count must be >= 1");
            if (s.norm_epsilon <= 0.0) fail("normalization epsilon must be positive");
            break;
    }
    if ((s.kind == LayerKind::DepthwiseConv1D || s.kind == LayerKind::DepthwiseConv2D ||
         s.kind == LayerKind::InstanceNorm) &&
        s.in_channels != s.out_channels)
        fail("channel count must be preserved");
}

// Output shape of one layer for an input shape without the batch dimension.
inline Shape layer_output_shape(const LayerSpec& s, const Shape& in) {
    auto fail = [&](const std::string& msg) { throw ConfigError("layer '" + s.name + "': " + msg); };
    switch (s.kind) {
        case LayerKind::Dense: {
            if (shape_numel(in) != s.in_features)
                fail("expects " + std::to_string(s.in_features) + " input features, got " +
                     shape_str(in));
            return {s.out_features};
        }
        case LayerKind::Conv1D:
        case LayerKind::DepthwiseConv1D: {
            if (in.size() != 2) fail("expects [length, channels] input, got " + shape_str(in));
            if (in[1] != s.in_channels)
                fail("expects " + std::to_string(s.in_channels) + " channels, got " + shape_str(in));
            int lo = (in[0] + s.stride - 1) / s.stride;
            return {lo, s.out_channels};
        }
        case LayerKind::Conv2D:
        case LayerKind::DepthwiseConv2D: {
            if (in.size() != 3) fail("expects [H, W, channels] input, got " + shape_str(in));
            if (in[2] != s.in_channels)
                fail("expects " + std::to_string(s.in_channels) + " channels, got " + shape_str(in));
            int ho = (in[0] + s.stride - 1) / s.stride;
            int wo = (in[1] + s.stride - 1) / s.stride;
            return {ho, wo, s.out_channels};
        }
        case LayerKind::MaxPool: {
            if (in.size() != 3) fail("expects [H, W, channels] input, got " + shape_str(in));
            if (in[0] % 2 != 0 || in[1] % 2 != 0)
                fail("pooling needs even extents, got " + shape_str(in));
            return {in[0] / 2, in[1] / 2, in[2]};
        }
        case LayerKind::UpsampleNearest: {
            if (in.size() != 3) fail("expects [H, W, channels] input, got " + shape_str(in));
            return {in[0] * 2, in[1] * 2, in[2]};
        }
        case LayerKind::InstanceNorm: {
            if (in.size() != 3) fail("expects [H, W, channels] input, got " + shape_str(in));
            if (in[2] != s.in_channels)
                fail("expects " + std::to_string(s.in_channels) + " channels, got " + shape_str(in));
            return in;
        }
    }
    fail("unknown layer kind");
    return {};
}

inline bool layer_has_weights(LayerKind k) {
    return k != LayerKind::MaxPool && k != LayerKind::UpsampleNearest;
}

// "same" padding bookkeeping: output extent ceil(L/stride), leading pad
// floor(total/2).
inline int same_pad_begin(int in_extent, int kernel, int stride) {
    int out = (in_extent + stride - 1) / stride;
    int total = std::max((out - 1) * stride + kernel - in_extent, 0);
    return total / 2;
}

}  // namespace cdnm
