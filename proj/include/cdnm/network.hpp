#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cdnm/activations.hpp"
#include "cdnm/common.hpp"
#include "cdnm/layers.hpp"
#include "cdnm/tensor.hpp"

namespace cdnm {

// Named parameter tensors of one learned layer: {kernel, bias} for dense and
// convolution layers, {scale, shift} for instance normalization.
template <typename S>
struct ParamGroup {
    std::string name;
    std::vector<Tensor<S>> tensors;
};

template <typename S>
struct WeightsBundle {
    std::vector<ParamGroup<S>> groups;

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& g : groups)
            for (const auto& t : g.tensors) n += t.numel();
        return n;
    }

    WeightsBundle zeros_like() const {
        WeightsBundle out;
        out.groups.reserve(groups.size());
        for (const auto& g : groups) {
            ParamGroup<S> zg;
            zg.name = g.name;
            for (const auto& t : g.tensors) zg.tensors.push_back(Tensor<S>::zeros(t.shape));
            out.groups.push_back(std::move(zg));
        }
        return out;
    }

    template <typename T>
    WeightsBundle<T> cast() const {
        WeightsBundle<T> out;
        out.groups.reserve(groups.size());
        for (const auto& g : groups) {
            ParamGroup<T> cg;
            cg.name = g.name;
            for (const auto& t : g.tensors) cg.tensors.push_back(t.template cast<T>());
            out.groups.push_back(std::move(cg));
        }
        return out;
    }
};

inline std::uint64_t next_network_revision() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
}

// Sequential network: ordered layer specs plus their trainable parameters.
// `revision` changes whenever the weights change, so a forward cache can be
// matched against the network state it was produced from.
template <typename S>
struct NetworkGraph {
    Shape input_shape;  // per-sample shape, no batch dimension
    std::vector<LayerSpec> layers;
    WeightsBundle<S> weights;
    std::vector<int> weight_group;  // per layer: index into weights.groups, -1 if none
    std::vector<Shape> layer_out_shapes;
    std::uint64_t revision = 0;

    const Shape& output_shape() const {
        if (layer_out_shapes.empty()) throw ConfigError("network has no layers");
        return layer_out_shapes.back();
    }

    void touch() { revision = next_network_revision(); }

    template <typename T>
    NetworkGraph<T> cast() const {
        NetworkGraph<T> out;
        out.input_shape = input_shape;
        out.layers = layers;
        out.weights = weights.template cast<T>();
        out.weight_group = weight_group;
        out.layer_out_shapes = layer_out_shapes;
        out.revision = next_network_revision();
        return out;
    }
};

namespace detail {

template <typename S>
Tensor<S> glorot_uniform(const Shape& shape, int fan_in, int fan_out, SplitMix64& rng) {
    Tensor<S> t = Tensor<S>::zeros(shape);
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.data) v = static_cast<S>(rng.next_range(-limit, limit));
    return t;
}

template <typename S>
ParamGroup<S> init_group(const LayerSpec& s, SplitMix64& rng) {
    ParamGroup<S> g;
    g.name = s.name;
    switch (s.kind) {
        case LayerKind::Dense:
            g.tensors.push_back(glorot_uniform<S>({s.in_features, s.out_features}, s.in_features,
                                                  s.out_features, rng));
            g.tensors.push_back(Tensor<S>::zeros({s.out_features}));
            break;
        case LayerKind::Conv1D:
            g.tensors.push_back(glorot_uniform<S>({s.kernel_w, s.in_channels, s.out_channels},
                                                  s.kernel_w * s.in_channels,
                                                  s.kernel_w * s.out_channels, rng));
            g.tensors.push_back(Tensor<S>::zeros({s.out_channels}));
            break;
        case LayerKind::DepthwiseConv1D:
            g.tensors.push_back(
                glorot_uniform<S>({s.kernel_w, s.in_channels}, s.kernel_w, s.kernel_w, rng));
            g.tensors.push_back(Tensor<S>::zeros({s.in_channels}));
            break;
        case LayerKind::Conv2D:
            g.tensors.push_back(glorot_uniform<S>(
                {s.kernel_h, s.kernel_w, s.in_channels, s.out_channels},
                s.kernel_h * s.kernel_w * s.in_channels, s.kernel_h * s.kernel_w * s.out_channels,
                rng));
            g.tensors.push_back(Tensor<S>::zeros({s.out_channels}));
            break;
        case LayerKind::DepthwiseConv2D:
            g.tensors.push_back(glorot_uniform<S>({s.kernel_h, s.kernel_w, s.in_channels},
                                                  s.kernel_h * s.kernel_w, s.kernel_h * s.kernel_w,
                                                  rng));
            g.tensors.push_back(Tensor<S>::zeros({s.in_channels}));
            break;
        case LayerKind::InstanceNorm:
            g.tensors.push_back(Tensor<S>::full({s.in_channels}, S(1)));  // scale
            g.tensors.push_back(Tensor<S>::zeros({s.in_channels}));       // shift
            break;
        default:
            break;
    }
    return g;
}

}  // namespace detail

// Builds a network with seeded Glorot-uniform kernels, zero biases and
// identity normalization. Validates the whole shape chain up front.
template <typename S>
NetworkGraph<S> make_network(Shape input_shape, std::vector<LayerSpec> layers,
                             std::uint64_t seed) {
    if (layers.empty()) throw ConfigError("network needs at least one layer");
    NetworkGraph<S> net;
    net.input_shape = std::move(input_shape);
    net.layers = std::move(layers);
    net.weight_group.assign(net.layers.size(), -1);

    Shape cur = net.input_shape;
    SplitMix64 rng(seed);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        LayerSpec& s = net.layers[i];
        if (s.name.empty()) s.name = "l" + std::to_string(i) + "_" + layer_kind_name(s.kind);
        validate_layer_spec(s);
        if (s.activation == Activation::Softmax && i + 1 != net.layers.size())
            throw ConfigError("layer '" + s.name + "': softmax is only valid on the final layer");
        cur = layer_output_shape(s, cur);
        net.layer_out_shapes.push_back(cur);
        if (layer_has_weights(s.kind)) {
            net.weight_group[i] = static_cast<int>(net.weights.groups.size());
            net.weights.groups.push_back(detail::init_group<S>(s, rng));
        }
    }
    if (!net.layers.empty() && net.layers.back().activation == Activation::Softmax) {
        const LayerSpec& last = net.layers.back();
        int feats = static_cast<int>(shape_numel(net.layer_out_shapes.back()));
        int begin = last.softmax_begin;
        int len = last.softmax_len == 0 ? feats : last.softmax_len;
        if (begin < 0 || len < 1 || begin + len > feats)
            throw ConfigError("layer '" + last.name + "': softmax slice out of range");
    }
    net.touch();
    return net;
}

// Exact count of trainable scalars.
template <typename S>
std::int64_t param_count(const NetworkGraph<S>& net) {
    return net.weights.param_count();
}

template <typename S>
struct LayerCacheEntry {
    Tensor<S> pre;   // pre-activation output
    Tensor<S> post;  // post-activation output
    std::vector<std::int32_t> argmax;  // maxpool: winning input offset per output
    std::vector<S> mean, inv_std;      // instance norm: per (sample, channel)
};

template <typename S>
struct ForwardCache {
    std::uint64_t revision = 0;
    Tensor<S> input;
    std::vector<LayerCacheEntry<S>> entries;

    const Tensor<S>& output() const { return entries.back().post; }
};

namespace detail {

template <typename S>
void apply_activation(const LayerSpec& spec, const Tensor<S>& pre, Tensor<S>& post, int batch) {
    post = pre;
    switch (spec.activation) {
        case Activation::Identity:
            return;
        case Activation::ReLU:
            for (auto& v : post.data) v = relu(v);
            return;
        case Activation::HardSigmoid:
            for (auto& v : post.data) v = hard_sigmoid(v);
            return;
        case Activation::Softmax: {
            int feats = static_cast<int>(pre.numel() / batch);
            int begin = spec.softmax_begin;
            int len = spec.softmax_len == 0 ? feats : spec.softmax_len;
            for (int n = 0; n < batch; ++n) {
                const S* src = pre.ptr() + static_cast<std::int64_t>(n) * feats + begin;
                S* dst = post.ptr() + static_cast<std::int64_t>(n) * feats + begin;
                softmax(src, dst, len);
            }
            return;
        }
    }
}

template <typename S>
void activation_backward(const LayerSpec& spec, const LayerCacheEntry<S>& e,
                         const Tensor<S>& d_post, Tensor<S>& d_pre, int batch) {
    switch (spec.activation) {
        case Activation::Identity:
            d_pre = d_post;
            return;
        case Activation::ReLU:
            d_pre = d_post;
            for (std::int64_t i = 0; i < d_pre.numel(); ++i)
                d_pre.data[static_cast<std::size_t>(i)] *=
                    relu_grad(e.pre.data[static_cast<std::size_t>(i)]);
            return;
        case Activation::HardSigmoid:
            d_pre = d_post;
            for (std::int64_t i = 0; i < d_pre.numel(); ++i)
                d_pre.data[static_cast<std::size_t>(i)] *=
                    hard_sigmoid_grad(e.pre.data[static_cast<std::size_t>(i)]);
            return;
        case Activation::Softmax: {
            d_pre = d_post;
            int feats = static_cast<int>(d_post.numel() / batch);
            int begin = spec.softmax_begin;
            int len = spec.softmax_len == 0 ? feats : spec.softmax_len;
            for (int n = 0; n < batch; ++n) {
                const S* p = e.post.ptr() + static_cast<std::int64_t>(n) * feats + begin;
                const S* dp = d_post.ptr() + static_cast<std::int64_t>(n) * feats + begin;
                S* dy = d_pre.ptr() + static_cast<std::int64_t>(n) * feats + begin;
                softmax_backward(p, dp, dy, len);
            }
            return;
        }
    }
}

}  // namespace detail

// Forward pass over a batched input [N, ...input_shape]. The cache holds every
// intermediate needed by backward().
template <typename S>
ForwardCache<S> forward(const NetworkGraph<S>& net, const Tensor<S>& input) {
    if (input.rank() < 1) throw ConfigError("forward: empty input");
    Shape per_sample(input.shape.begin() + 1, input.shape.end());
    if (per_sample != net.input_shape)
        throw ConfigError("forward: input shape " + shape_str(input.shape) +
                          " does not match network input " + shape_str(net.input_shape) +
                          " (leading batch dimension required)");
    const int batch = input.shape[0];

    ForwardCache<S> cache;
    cache.revision = net.revision;
    cache.input = input;
    cache.entries.resize(net.layers.size());

    const Tensor<S>* x = &cache.input;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& spec = net.layers[li];
        LayerCacheEntry<S>& e = cache.entries[li];
        Shape out_shape = net.layer_out_shapes[li];
        out_shape.insert(out_shape.begin(), batch);
        Tensor<S> pre = Tensor<S>::zeros(out_shape);

        const int gi = net.weight_group[li];
        const ParamGroup<S>* g = gi >= 0 ? &net.weights.groups[static_cast<std::size_t>(gi)] : nullptr;

        switch (spec.kind) {
            case LayerKind::Dense: {
                const int fin = spec.in_features, fout = spec.out_features;
                const Tensor<S>& W = g->tensors[0];
                const Tensor<S>& b = g->tensors[1];
                for (int n = 0; n < batch; ++n) {
                    const S* xi = x->ptr() + static_cast<std::int64_t>(n) * fin;
                    S* yo = pre.ptr() + static_cast<std::int64_t>(n) * fout;
                    for (int o = 0; o < fout; ++o) yo[o] = b.data[static_cast<std::size_t>(o)];
                    for (int f = 0; f < fin; ++f) {
                        const S xv = xi[f];
                        const S* wrow = W.ptr() + static_cast<std::int64_t>(f) * fout;
                        for (int o = 0; o < fout; ++o) yo[o] += xv * wrow[o];
                    }
                }
                break;
            }
            case LayerKind::Conv1D: {
                const int L = x->shape[1], ci = spec.in_channels, co = spec.out_channels;
                const int k = spec.kernel_w, s = spec.stride;
                const int lo = pre.shape[1];
                const int pb = same_pad_begin(L, k, s);
                const Tensor<S>& K = g->tensors[0];
                const Tensor<S>& b = g->tensors[1];
                for (int n = 0; n < batch; ++n) {
                    const S* xn = x->ptr() + static_cast<std::int64_t>(n) * L * ci;
                    S* yn = pre.ptr() + static_cast<std::int64_t>(n) * lo * co;
                    for (int p = 0; p < lo; ++p) {
                        S* yp = yn + static_cast<std::int64_t>(p) * co;
                        for (int o = 0; o < co; ++o) yp[o] = b.data[static_cast<std::size_t>(o)];
                        for (int t = 0; t < k; ++t) {
                            const int l = p * s + t - pb;
                            if (l < 0 || l >= L) continue;
                            const S* xl = xn + static_cast<std::int64_t>(l) * ci;
                            const S* kt = K.ptr() + static_cast<std::int64_t>(t) * ci * co;
                            for (int c = 0; c < ci; ++c) {
                                const S xv = xl[c];
                                const S* kc = kt + static_cast<std::int64_t>(c) * co;
                                for (int o = 0; o < co; ++o) yp[o] += xv * kc[o];
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::DepthwiseConv1D: {
                const int L = x->shape[1], ch = spec.in_channels;
                const int k = spec.kernel_w, s = spec.stride;
                const int lo = pre.shape[1];
                const int pb = same_pad_begin(L, k, s);
                const Tensor<S>& K = g->tensors[0];
                const Tensor<S>& b = g->tensors[1];
                for (int n = 0; n < batch; ++n) {
                    const S* xn = x->ptr() + static_cast<std::int64_t>(n) * L * ch;
                    S* yn = pre.ptr() + static_cast<std::int64_t>(n) * lo * ch;
                    for (int p = 0; p < lo; ++p) {
                        S* yp = yn + static_cast<std::int64_t>(p) * ch;
                        for (int c = 0; c < ch; ++c) yp[c] = b.data[static_cast<std::size_t>(c)];
                        for (int t = 0; t < k; ++t) {
                            const int l = p * s + t - pb;
                            if (l < 0 || l >= L) continue;
                            const S* xl = xn + static_cast<std::int64_t>(l) * ch;
                            const S* kt = K.ptr() + static_cast<std::int64_t>(t) * ch;
                            for (int c = 0; c < ch; ++c) yp[c] += xl[c] * kt[c];
                        }
                    }
                }
                break;
            }
            case LayerKind::Conv2D: {
                const int H = x->shape[1], W2 = x->shape[2];
                const int ci = spec.in_channels, co = spec.out_channels;
                const int kh = spec.kernel_h, kw = spec.kernel_w, s = spec.stride;
                const int ho = pre.shape[1], wo = pre.shape[2];
                const int pbh = same_pad_begin(H, kh, s), pbw = same_pad_begin(W2, kw, s);
                const Tensor<S>& K = g->tensors[0];
                const Tensor<S>& b = g->tensors[1];
                for (int n = 0; n < batch; ++n) {
                    const S* xn = x->ptr() + static_cast<std::int64_t>(n) * H * W2 * ci;
                    S* yn = pre.ptr() + static_cast<std::int64_t>(n) * ho * wo * co;
                    for (int y = 0; y < ho; ++y) {
                        for (int xo = 0; xo < wo; ++xo) {
                            S* yp = yn + (static_cast<std::int64_t>(y) * wo + xo) * co;
                            for (int o = 0; o < co; ++o) yp[o] = b.data[static_cast<std::size_t>(o)];
                            for (int dy = 0; dy < kh; ++dy) {
                                const int iy = y * s + dy - pbh;
                                if (iy < 0 || iy >= H) continue;
                                for (int dx = 0; dx < kw; ++dx) {
                                    const int ix = xo * s + dx - pbw;
                                    if (ix < 0 || ix >= W2) continue;
                                    const S* xp = xn + (static_cast<std::int64_t>(iy) * W2 + ix) * ci;
                                    const S* kp = K.ptr() +
                                                  ((static_cast<std::int64_t>(dy) * kw + dx) * ci) * co;
                                    for (int c = 0; c < ci; ++c) {
                                        const S xv = xp[c];
                                        const S* kc = kp + static_cast<std::int64_t>(c) * co;
                                        for (int o = 0; o < co; ++o) yp[o] += xv * kc[o];
                                    }
                                }
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::DepthwiseConv2D: {
                const int H = x->shape[1], W2 = x->shape[2], ch = spec.in_channels;
                const int kh = spec.kernel_h, kw = spec.kernel_w, s = spec.stride;
                const int ho = pre.shape[1], wo = pre.shape[2];
                const int pbh = same_pad_begin(H, kh, s), pbw = same_pad_begin(W2, kw, s);
                const Tensor<S>& K = g->tensors[0];
                const Tensor<S>& b = g->tensors[1];
                for (int n = 0; n < batch; ++n) {
                    const S* xn = x->ptr() + static_cast<std::int64_t>(n) * H * W2 * ch;
                    S* yn = pre.ptr() + static_cast<std::int64_t>(n) * ho * wo * ch;
                    for (int y = 0; y < ho; ++y) {
                        for (int xo = 0; xo < wo; ++xo) {
                            S* yp = yn + (static_cast<std::int64_t>(y) * wo + xo) * ch;
                            for (int c = 0; c < ch; ++c) yp[c] = b.data[static_cast<std::size_t>(c)];
                            for (int dy = 0; dy < kh; ++dy) {
                                const int iy = y * s + dy - pbh;
                                if (iy < 0 || iy >= H) continue;
                                for (int dx = 0; dx < kw; ++dx) {
                                    const int ix = xo * s + dx - pbw;
                                    if (ix < 0 || ix >= W2) continue;
                                    const S* xp = xn + (static_cast<std::int64_t>(iy) * W2 + ix) * ch;
                                    const S* kp = K.ptr() + (static_cast<std::int64_t>(dy) * kw + dx) * ch;
                                    for (int c = 0; c < ch; ++c) yp[c] += xp[c] * kp[c];
                                }
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::MaxPool: {
                const int H = x->shape[1], W2 = x->shape[2], ch = x->shape[3];
                const int ho = pre.shape[1], wo = pre.shape[2];
                e.argmax.assign(static_cast<std::size_t>(pre.numel()), 0);
                for (int n = 0; n < batch; ++n) {
                    const S* xn = x->ptr() + static_cast<std::int64_t>(n) * H * W2 * ch;
                    for (int y = 0; y < ho; ++y) {
                        for (int xo = 0; xo < wo; ++xo) {
                            for (int c = 0; c < ch; ++c) {
                                S best = xn[(static_cast<std::int64_t>(2 * y) * W2 + 2 * xo) * ch + c];
                                std::int32_t bi =
                                    static_cast<std::int32_t>((2 * y * W2 + 2 * xo) * ch + c);
                                for (int dy = 0; dy < 2; ++dy) {
                                    for (int dx = 0; dx < 2; ++dx) {
                                        std::int64_t off =
                                            (static_cast<std::int64_t>(2 * y + dy) * W2 + 2 * xo + dx) *
                                                ch + c;
                                        if (xn[off] > best) {
                                            best = xn[off];
                                            bi = static_cast<std::int32_t>(off);
                                        }
                                    }
                                }
                                std::int64_t oo =
                                    ((static_cast<std::int64_t>(n) * ho + y) * wo + xo) * ch + c;
                                pre.data[static_cast<std::size_t>(oo)] = best;
                                e.argmax[static_cast<std::size_t>(oo)] = bi;
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::UpsampleNearest: {
                const int H = x->shape[1], W2 = x->shape[2], ch = x->shape[3];
                const int ho = pre.shape[1], wo = pre.shape[2];
                for (int n = 0; n < batch; ++n) {
                    const S* xn = x->ptr() + static_cast<std::int64_t>(n) * H * W2 * ch;
                    S* yn = pre.ptr() + static_cast<std::int64_t>(n) * ho * wo * ch;
                    for (int y = 0; y < ho; ++y) {
                        const S* xr = xn + (static_cast<std::int64_t>(y / 2) * W2) * ch;
                        S* yr = yn + (static_cast<std::int64_t>(y) * wo) * ch;
                        for (int xo = 0; xo < wo; ++xo)
                            for (int c = 0; c < ch; ++c)
                                yr[static_cast<std::int64_t>(xo) * ch + c] =
                                    xr[static_cast<std::int64_t>(xo / 2) * ch + c];
                    }
                }
                break;
            }
            case LayerKind::InstanceNorm: {
                const int H = x->shape[1], W2 = x->shape[2], ch = spec.in_channels;
                const std::int64_t m = static_cast<std::int64_t>(H) * W2;
                const Tensor<S>& gamma = g->tensors[0];
                const Tensor<S>& beta = g->tensors[1];
                e.mean.assign(static_cast<std::size_t>(batch) * ch, S(0));
                e.inv_std.assign(static_cast<std::size_t>(batch) * ch, S(0));
                for (int n = 0; n < batch; ++n) {
                    const S* xn = x->ptr() + static_cast<std::int64_t>(n) * m * ch;
                    S* yn = pre.ptr() + static_cast<std::int64_t>(n) * m * ch;
                    for (int c = 0; c < ch; ++c) {
                        S sum = S(0);
                        for (std::int64_t i = 0; i < m; ++i) sum += xn[i * ch + c];
                        S mu = sum / static_cast<S>(m);
                        S var = S(0);
                        for (std::int64_t i = 0; i < m; ++i) {
                            S d = xn[i * ch + c] - mu;
                            var += d * d;
                        }
                        var /= static_cast<S>(m);
                        S inv = S(1) / std::sqrt(var + static_cast<S>(spec.norm_epsilon));
                        e.mean[static_cast<std::size_t>(n) * ch + c] = mu;
                        e.inv_std[static_cast<std::size_t>(n) * ch + c] = inv;
                        const S gc = gamma.data[static_cast<std::size_t>(c)];
                        const S bc = beta.data[static_cast<std::size_t>(c)];
                        for (std::int64_t i = 0; i < m; ++i)
                            yn[i * ch + c] = gc * (xn[i * ch + c] - mu) * inv + bc;
                    }
                }
                break;
            }
        }

        detail::apply_activation(spec, pre, e.post, batch);
        e.pre = std::move(pre);
        x = &e.post;
    }
    return cache;
}

// Backward pass. Returns the loss gradient w.r.t. the network input; fills
// `d_weights` (same structure as net.weights) with gradients accumulated over
// the batch in a fixed order.
template <typename S>
Tensor<S> backward(const NetworkGraph<S>& net, const ForwardCache<S>& cache,
                   const Tensor<S>& d_output, WeightsBundle<S>& d_weights) {
    if (cache.revision != net.revision)
        throw UsageError("backward: cache is stale (network weights changed since forward)");
    if (cache.entries.size() != net.layers.size())
        throw UsageError("backward: cache does not match this network");
    if (!cache.output().same_shape(d_output))
        throw UsageError("backward: d_output shape " + shape_str(d_output.shape) +
                         " does not match output " + shape_str(cache.output().shape));
    const int batch = cache.input.shape[0];
    d_weights = net.weights.zeros_like();

    Tensor<S> d_post = d_output;
    Tensor<S> d_pre;
    for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
        const LayerSpec& spec = net.layers[li];
        const LayerCacheEntry<S>& e = cache.entries[static_cast<std::size_t>(li)];
        const Tensor<S>& x =
            li == 0 ? cache.input : cache.entries[static_cast<std::size_t>(li) - 1].post;

        detail::activation_backward(spec, e, d_post, d_pre, batch);

        Tensor<S> d_in = Tensor<S>::zeros(x.shape);
        const int gi = net.weight_group[static_cast<std::size_t>(li)];
        ParamGroup<S>* dg = gi >= 0 ? &d_weights.groups[static_cast<std::size_t>(gi)] : nullptr;
        const ParamGroup<S>* g =
            gi >= 0 ? &net.weights.groups[static_cast<std::size_t>(gi)] : nullptr;

        switch (spec.kind) {
            case LayerKind::Dense: {
                const int fin = spec.in_features, fout = spec.out_features;
                const Tensor<S>& W = g->tensors[0];
                Tensor<S>& dW = dg->tensors[0];
                Tensor<S>& db = dg->tensors[1];
                for (int n = 0; n < batch; ++n) {
                    const S* xi = x.ptr() + static_cast<std::int64_t>(n) * fin;
                    const S* dy = d_pre.ptr() + static_cast<std::int64_t>(n) * fout;
                    S* dx = d_in.ptr() + static_cast<std::int64_t>(n) * fin;
                    for (int o = 0; o < fout; ++o) db.data[static_cast<std::size_t>(o)] += dy[o];
                    for (int f = 0; f < fin; ++f) {
                        const S* wrow = W.ptr() + static_cast<std::int64_t>(f) * fout;
                        S* dwrow = dW.ptr() + static_cast<std::int64_t>(f) * fout;
                        S acc = S(0);
                        const S xv = xi[f];
                        for (int o = 0; o < fout; ++o) {
                            acc += dy[o] * wrow[o];
                            dwrow[o] += xv * dy[o];
                        }
                        dx[f] = acc;
                    }
                }
                break;
            }
            case LayerKind::Conv1D: {
                const int L = x.shape[1], ci = spec.in_channels, co = spec.out_channels;
                const int k = spec.kernel_w, s = spec.stride;
                const int lo = e.pre.shape[1];
                const int pb = same_pad_begin(L, k, s);
                const Tensor<S>& K = g->tensors[0];
                Tensor<S>& dK = dg->tensors[0];
                Tensor<S>& db = dg->tensors[1];
                for (int n = 0; n < batch; ++n) {
                    const S* xn = x.ptr() + static_cast<std::int64_t>(n) * L * ci;
                    S* dxn = d_in.ptr() + static_cast<std::int64_t>(n) * L * ci;
                    const S* dyn = d_pre.ptr() + static_cast<std::int64_t>(n) * lo * co;
                    for (int p = 0; p < lo; ++p) {
                        const S* dyp = dyn + static_cast<std::int64_t>(p) * co;
                        for (int o = 0; o < co; ++o) db.data[static_cast<std::size_t>(o)] += dyp[o];
                        for (int t = 0; t < k; ++t) {
                            const int l = p * s + t - pb;
                            if (l < 0 || l >= L) continue;
                            const S* xl = xn + static_cast<std::int64_t>(l) * ci;
                            S* dxl = dxn + static_cast<std::int64_t>(l) * ci;
                            const S* kt = K.ptr() + static_cast<std::int64_t>(t) * ci * co;
                            S* dkt = dK.ptr() + static_cast<std::int64_t>(t) * ci * co;
                            for (int c = 0; c < ci; ++c) {
                                const S* kc = kt + static_cast<std::int64_t>(c) * co;
                                S* dkc = dkt + static_cast<std::int64_t>(c) * co;
                                S acc = S(0);
                                const S xv = xl[c];
                                for (int o = 0; o < co; ++o) {
                                    acc += dyp[o] * kc[o];
                                    dkc[o] += xv * dyp[o];
                                }
                                dxl[c] += acc;
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::DepthwiseConv1D: {
                const int L = x.shape[1], ch = spec.in_channels;
                const int k = spec.kernel_w, s = spec.stride;
                const int lo = e.pre.shape[1];
                const int pb = same_pad_begin(L, k, s);
                const Tensor<S>& K = g->tensors[0];
                Tensor<S>& dK = dg->tensors[0];
                Tensor<S>& db = dg->tensors[1];
                for (int n = 0; n < batch; ++n) {
                    const S* xn = x.ptr() + static_cast<std::int64_t>(n) * L * ch;
                    S* dxn = d_in.ptr() + static_cast<std::int64_t>(n) * L * ch;
                    const S* dyn = d_pre.ptr() + static_cast<std::int64_t>(n) * lo * ch;
                    for (int p = 0; p < lo; ++p) {
                        const S* dyp = dyn + static_cast<std::int64_t>(p) * ch;
                        for (int c = 0; c < ch; ++c) db.data[static_cast<std::size_t>(c)] += dyp[c];
                        for (int t = 0; t < k; ++t) {
                            const int l = p * s + t - pb;
                            if (l < 0 || l >= L) continue;
                            const S* xl = xn + static_cast<std::int64_t>(l) * ch;
                            S* dxl = dxn + static_cast<std::int64_t>(l) * ch;
                            const S* kt = K.ptr() + static_cast<std::int64_t>(t) * ch;
                            S* dkt = dK.ptr() + static_cast<std::int64_t>(t) * ch;
                            for (int c = 0; c < ch; ++c) {
                                dxl[c] += dyp[c] * kt[c];
                                dkt[c] += xl[c] * dyp[c];
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::Conv2D: {
                const int H = x.shape[1], W2 = x.shape[2];
                const int ci = spec.in_channels, co = spec.out_channels;
                const int kh = spec.kernel_h, kw = spec.kernel_w, s = spec.stride;
                const int ho = e.pre.shape[1], wo = e.pre.shape[2];
                const int pbh = same_pad_begin(H, kh, s), pbw = same_pad_begin(W2, kw, s);
                const Tensor<S>& K = g->tensors[0];
                Tensor<S>& dK = dg->tensors[0];
                Tensor<S>& db = dg->tensors[1];
                for (int n = 0; n < batch; ++n) {
                    const S* xn = x.ptr() + static_cast<std::int64_t>(n) * H * W2 * ci;
                    S* dxn = d_in.ptr() + static_cast<std::int64_t>(n) * H * W2 * ci;
                    const S* dyn = d_pre.ptr() + static_cast<std::int64_t>(n) * ho * wo * co;
                    for (int y = 0; y < ho; ++y) {
                        for (int xo = 0; xo < wo; ++xo) {
                            const S* dyp = dyn + (static_cast<std::int64_t>(y) * wo + xo) * co;
                            for (int o = 0; o < co; ++o) db.data[static_cast<std::size_t>(o)] += dyp[o];
                            for (int dy2 = 0; dy2 < kh; ++dy2) {
                                const int iy = y * s + dy2 - pbh;
                                if (iy < 0 || iy >= H) continue;
                                for (int dx2 = 0; dx2 < kw; ++dx2) {
                                    const int ix = xo * s + dx2 - pbw;
                                    if (ix < 0 || ix >= W2) continue;
                                    const S* xp = xn + (static_cast<std::int64_t>(iy) * W2 + ix) * ci;
                                    S* dxp = dxn + (static_cast<std::int64_t>(iy) * W2 + ix) * ci;
                                    const S* kp =
                                        K.ptr() + ((static_cast<std::int64_t>(dy2) * kw + dx2) * ci) * co;
                                    S* dkp =
                                        dK.ptr() + ((static_cast<std::int64_t>(dy2) * kw + dx2) * ci) * co;
                                    for (int c = 0; c < ci; ++c) {
                                        const S* kc = kp + static_cast<std::int64_t>(c) * co;
                                        S* dkc = dkp + static_cast<std::int64_t>(c) * co;
                                        S acc = S(0);
                                        const S xv = xp[c];
                                        for (int o = 0; o < co; ++o) {
                                            acc += dyp[o] * kc[o];
                                            dkc[o] += xv * dyp[o];
                                        }
                                        dxp[c] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::DepthwiseConv2D: {
                const int H = x.shape[1], W2 = x.shape[2], ch = spec.in_channels;
                const int kh = spec.kernel_h, kw = spec.kernel_w, s = spec.stride;
                const int ho = e.pre.shape[1], wo = e.pre.shape[2];
                const int pbh = same_pad_begin(H, kh, s), pbw = same_pad_begin(W2, kw, s);
                const Tensor<S>& K = g->tensors[0];
                Tensor<S>& dK = dg->tensors[0];
                Tensor<S>& db = dg->tensors[1];
                for (int n = 0; n < batch; ++n) {
                    const S* xn = x.ptr() + static_cast<std::int64_t>(n) * H * W2 * ch;
                    S* dxn = d_in.ptr() + static_cast<std::int64_t>(n) * H * W2 * ch;
                    const S* dyn = d_pre.ptr() + static_cast<std::int64_t>(n) * ho * wo * ch;
                    for (int y = 0; y < ho; ++y) {
                        for (int xo = 0; xo < wo; ++xo) {
                            const S* dyp = dyn + (static_cast<std::int64_t>(y) * wo + xo) * ch;
                            for (int c = 0; c < ch; ++c) db.data[static_cast<std::size_t>(c)] += dyp[c];
                            for (int dy2 = 0; dy2 < kh; ++dy2) {
                                const int iy = y * s + dy2 - pbh;
                                if (iy < 0 || iy >= H) continue;
                                for (int dx2 = 0; dx2 < kw; ++dx2) {
                                    const int ix = xo * s + dx2 - pbw;
                                    if (ix < 0 || ix >= W2) continue;
                                    const S* xp = xn + (static_cast<std::int64_t>(iy) * W2 + ix) * ch;
                                    S* dxp = dxn + (static_cast<std::int64_t>(iy) * W2 + ix) * ch;
                                    const S* kp = K.ptr() + (static_cast<std::int64_t>(dy2) * kw + dx2) * ch;
                                    S* dkp = dK.ptr() + (static_cast<std::int64_t>(dy2) * kw + dx2) * ch;
                                    for (int c = 0; c < ch; ++c) {
                                        dxp[c] += dyp[c] * kp[c];
                                        dkp[c] += xp[c] * dyp[c];
                                    }
                                }
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::MaxPool: {
                const int H = x.shape[1], W2 = x.shape[2], ch = x.shape[3];
                const std::int64_t plane = static_cast<std::int64_t>(H) * W2 * ch;
                const std::int64_t out_plane = e.pre.numel() / batch;
                for (int n = 0; n < batch; ++n) {
                    S* dxn = d_in.ptr() + static_cast<std::int64_t>(n) * plane;
                    const S* dyn = d_pre.ptr() + static_cast<std::int64_t>(n) * out_plane;
                    const std::int32_t* am = e.argmax.data() + static_cast<std::int64_t>(n) * out_plane;
                    for (std::int64_t i = 0; i < out_plane; ++i) dxn[am[i]] += dyn[i];
                }
                break;
            }
            case LayerKind::UpsampleNearest: {
                const int H = x.shape[1], W2 = x.shape[2], ch = x.shape[3];
                const int ho = e.pre.shape[1], wo = e.pre.shape[2];
                for (int n = 0; n < batch; ++n) {
                    S* dxn = d_in.ptr() + static_cast<std::int64_t>(n) * H * W2 * ch;
                    const S* dyn = d_pre.ptr() + static_cast<std::int64_t>(n) * ho * wo * ch;
                    for (int y = 0; y < ho; ++y)
                        for (int xo = 0; xo < wo; ++xo)
                            for (int c = 0; c < ch; ++c)
                                dxn[(static_cast<std::int64_t>(y / 2) * W2 + xo / 2) * ch + c] +=
                                    dyn[(static_cast<std::int64_t>(y) * wo + xo) * ch + c];
                }
                break;
            }
            case LayerKind::InstanceNorm: {
                const int H = x.shape[1], W2 = x.shape[2], ch = spec.in_channels;
                const std::int64_t m = static_cast<std::int64_t>(H) * W2;
                const Tensor<S>& gamma = g->tensors[0];
                Tensor<S>& dgamma = dg->tensors[0];
                Tensor<S>& dbeta = dg->tensors[1];
                for (int n = 0; n < batch; ++n) {
                    const S* xn = x.ptr() + static_cast<std::int64_t>(n) * m * ch;
                    S* dxn = d_in.ptr() + static_cast<std::int64_t>(n) * m * ch;
                    const S* dyn = d_pre.ptr() + static_cast<std::int64_t>(n) * m * ch;
                    for (int c = 0; c < ch; ++c) {
                        const S mu = e.mean[static_cast<std::size_t>(n) * ch + c];
                        const S inv = e.inv_std[static_cast<std::size_t>(n) * ch + c];
                        const S gc = gamma.data[static_cast<std::size_t>(c)];
                        S sum_dy = S(0), sum_dy_xhat = S(0);
                        for (std::int64_t i = 0; i < m; ++i) {
                            const S xhat = (xn[i * ch + c] - mu) * inv;
                            const S dy = dyn[i * ch + c];
                            sum_dy += dy;
                            sum_dy_xhat += dy * xhat;
                        }
                        dgamma.data[static_cast<std::size_t>(c)] += sum_dy_xhat;
                        dbeta.data[static_cast<std::size_t>(c)] += sum_dy;
                        const S inv_m = S(1) / static_cast<S>(m);
                        for (std::int64_t i = 0; i < m; ++i) {
                            const S xhat = (xn[i * ch + c] - mu) * inv;
                            const S dy = dyn[i * ch + c];
                            dxn[i * ch + c] =
                                gc * inv * (dy - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
                        }
                    }
                }
                break;
            }
        }
        d_post = std::move(d_in);
    }
    return d_post;
}

// Convenience single-output forward.
template <typename S>
Tensor<S> forward_output(const NetworkGraph<S>& net, const Tensor<S>& input) {
    return forward(net, input).output();
}

}  // namespace cdnm
