#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cdnm/adam.hpp"
#include "cdnm/cdn_gm.hpp"
#include "cdnm/common.hpp"
#include "cdnm/image.hpp"
#include "cdnm/network.hpp"
#include "cdnm/tensor.hpp"

namespace cdnm {

struct MedalConfig {
    int height = 0, width = 0;
    int channels = 3;
    double epsilon = 0.5;       // binarization threshold
    double clamp_delta = 1e-7;  // probability clamp inside the loss
    double learning_rate = 5e-3;
    int epochs = 1000;
    int batch_size = 8;

    void validate() const {
        if (height < 4 || width < 4 || height % 4 != 0 || width % 4 != 0)
            throw ConfigError("medal-net: H and W must be positive multiples of 4, got " +
                              std::to_string(height) + "x" + std::to_string(width));
        if (channels != 1 && channels != 3) throw ConfigError("medal-net: channels must be 1 or 3");
        if (!(epsilon > 0.0 && epsilon < 1.0))
            throw ConfigError("medal-net: epsilon must lie in (0,1)");
        if (!(clamp_delta > 0.0 && clamp_delta < 0.5))
            throw ConfigError("medal-net: clamp_delta must lie in (0,0.5)");
        if (learning_rate <= 0) throw ConfigError("medal-net: learning rate must be positive");
        if (epochs < 0 || batch_size < 1) throw ConfigError("medal-net: bad training settings");
    }
};

// Frame + estimated background + labels, all at the configured extents.
template <typename S>
struct MedalPair {
    Tensor<S> frame;       // [H,W,c] in [0,1]
    Tensor<S> background;  // [H,W,c] in [0,1]
    LabelMask labels;
};

// Encoder-decoder with depthwise-separable convolutions: two pooling stages
// down, two nearest upsampling stages back, instance normalization in the
// decoder only, hard-sigmoid probability output.
template <typename S>
NetworkGraph<S> build_medal_net(const MedalConfig& cfg, std::uint64_t seed,
                                bool depthwise_separable = true) {
    cfg.validate();
    const int c2 = 2 * cfg.channels;
    std::vector<LayerSpec> layers;
    auto block = [&](const std::string& name, int cin, int cout, Activation act) {
        if (depthwise_separable) {
            layers.push_back(dwconv2d_layer(name + "_dw", 3, 3, cin));
            layers.push_back(conv2d_layer(name + "_pw", 1, 1, cin, cout, act));
        } else {
            layers.push_back(conv2d_layer(name + "_conv", 3, 3, cin, cout, act));
        }
    };
    block("enc1", c2, 8, Activation::ReLU);
    layers.push_back(maxpool_layer("pool1"));
    block("enc2", 8, 12, Activation::ReLU);
    layers.push_back(maxpool_layer("pool2"));
    block("enc3", 12, 16, Activation::ReLU);
    layers.push_back(upsample_layer("up1"));
    block("dec1", 16, 12, Activation::Identity);
    layers.push_back(instnorm_layer("dec1_norm", 12, Activation::ReLU));
    layers.push_back(upsample_layer("up2"));
    block("dec2", 12, 8, Activation::Identity);
    layers.push_back(instnorm_layer("dec2_norm", 8, Activation::ReLU));
    layers.push_back(conv2d_layer("out_conv", 3, 3, 8, 1, Activation::HardSigmoid));
    return make_network<S>({cfg.height, cfg.width, c2}, std::move(layers), seed);
}

// Concatenates frame and background along the channel axis into [N,H,W,2c].
template <typename S>
Tensor<S> pack_frame_background(const std::vector<const Tensor<S>*>& frames,
                                const std::vector<const Tensor<S>*>& backgrounds,
                                const MedalConfig& cfg) {
    if (frames.empty() || frames.size() != backgrounds.size())
        throw UsageError("pack_frame_background: mismatched batch");
    const int H = cfg.height, W = cfg.width, c = cfg.channels;
    Tensor<S> out = Tensor<S>::zeros({static_cast<int>(frames.size()), H, W, 2 * c});
    for (std::size_t n = 0; n < frames.size(); ++n) {
        require_shape(*frames[n], {H, W, c}, "pack_frame_background: frame");
        require_shape(*backgrounds[n], {H, W, c}, "pack_frame_background: background");
        const S* f = frames[n]->ptr();
        const S* b = backgrounds[n]->ptr();
        S* o = out.ptr() + static_cast<std::int64_t>(n) * H * W * 2 * c;
        for (std::int64_t px = 0; px < static_cast<std::int64_t>(H) * W; ++px) {
            for (int ch = 0; ch < c; ++ch) {
                o[px * 2 * c + ch] = f[px * c + ch];
                o[px * 2 * c + c + ch] = b[px * c + ch];
            }
        }
    }
    return out;
}

// Per-pixel foreground confidence for one frame/background pair: [1,H,W,1].
template <typename S>
Tensor<S> medal_forward(const NetworkGraph<S>& net, const Tensor<S>& frame,
                        const Tensor<S>& background, const MedalConfig& cfg) {
    Tensor<S> input = pack_frame_background<S>({&frame}, {&background}, cfg);
    return forward_output(net, input);
}

// Thresholding: probability >= epsilon marks foreground.
template <typename S>
std::vector<BinaryMask> binarize(const Tensor<S>& prob, double epsilon) {
    if (prob.rank() != 4 || prob.shape[3] != 1)
        throw UsageError("binarize: expected probability map [N,H,W,1]");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw UsageError("binarize: epsilon must lie in (0,1)");
    const int n = prob.shape[0], H = prob.shape[1], W = prob.shape[2];
    std::vector<BinaryMask> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        BinaryMask m = BinaryMask::zeros(H, W);
        const S* p = prob.ptr() + static_cast<std::int64_t>(i) * H * W;
        for (std::int64_t px = 0; px < static_cast<std::int64_t>(H) * W; ++px)
            m.v[static_cast<std::size_t>(px)] =
                static_cast<double>(p[px]) >= epsilon ? 1 : 0;
        out[static_cast<std::size_t>(i)] = std::move(m);
    }
    return out;
}

// Cross-entropy over a batch of binary targets, normalized by batch size only
// (not by pixel count). Predictions are clamped to [delta, 1-delta] so the
// loss stays finite for any input.
template <typename S>
double bce_loss(const Tensor<S>& prob, const std::vector<BinaryMask>& targets,
                double clamp_delta) {
    if (prob.rank() != 4 || prob.shape[3] != 1)
        throw UsageError("bce_loss: expected probability map [N,H,W,1]");
    const int n = prob.shape[0], H = prob.shape[1], W = prob.shape[2];
    if (static_cast<int>(targets.size()) != n) throw UsageError("bce_loss: batch size mismatch");
    double total = 0;
    for (int i = 0; i < n; ++i) {
        if (targets[static_cast<std::size_t>(i)].h != H || targets[static_cast<std::size_t>(i)].w != W)
            throw UsageError("bce_loss: target extents mismatch");
        const S* p = prob.ptr() + static_cast<std::int64_t>(i) * H * W;
        const auto& t = targets[static_cast<std::size_t>(i)].v;
        for (std::int64_t px = 0; px < static_cast<std::int64_t>(H) * W; ++px) {
            const std::uint8_t y = t[static_cast<std::size_t>(px)];
            if (y > 1) throw UsageError("bce_loss: target mask is not binary");
            const double q =
                std::clamp(static_cast<double>(p[px]), clamp_delta, 1.0 - clamp_delta);
            total += y ? std::log(q) : std::log(1.0 - q);
        }
    }
    return -total / n;
}

// Cross-entropy against {BG, FG, IGNORE} labels; ignore pixels contribute
// zero loss. Fills d_prob (same shape as prob) with the loss gradient, zero
// on ignore pixels and wherever the clamp is active.
template <typename S>
double bce_loss_masked_grad(const Tensor<S>& prob, const std::vector<const LabelMask*>& labels,
                            double clamp_delta, Tensor<S>* d_prob) {
    const int n = prob.shape[0], H = prob.shape[1], W = prob.shape[2];
    if (static_cast<int>(labels.size()) != n)
        throw UsageError("bce_loss_masked: batch size mismatch");
    if (d_prob) *d_prob = Tensor<S>::zeros(prob.shape);
    double total = 0;
    const double inv_n = 1.0 / n;
    for (int i = 0; i < n; ++i) {
        const LabelMask& lm = *labels[static_cast<std::size_t>(i)];
        if (lm.h != H || lm.w != W) throw UsageError("bce_loss_masked: label extents mismatch");
        const S* p = prob.ptr() + static_cast<std::int64_t>(i) * H * W;
        S* dp = d_prob ? d_prob->ptr() + static_cast<std::int64_t>(i) * H * W : nullptr;
        for (std::int64_t px = 0; px < static_cast<std::int64_t>(H) * W; ++px) {
            const Label lab = static_cast<Label>(lm.v[static_cast<std::size_t>(px)]);
            if (lab == Label::Ignore) continue;
            const double raw = static_cast<double>(p[px]);
            const double q = std::clamp(raw, clamp_delta, 1.0 - clamp_delta);
            const bool clamped = raw < clamp_delta || raw > 1.0 - clamp_delta;
            if (lab == Label::Foreground) {
                total += std::log(q);
                if (dp && !clamped) dp[px] = static_cast<S>(-inv_n / q);
            } else {
                total += std::log(1.0 - q);
                if (dp && !clamped) dp[px] = static_cast<S>(inv_n / (1.0 - q));
            }
        }
    }
    return -total * inv_n;
}

// Supervised training on (frame, background, labels) pairs with shuffled
// mini-batches and Adam. Aborts to the pre-update weights on a non-finite
// loss.
template <typename S>
TrainReport train_medal(NetworkGraph<S>& net, const std::vector<MedalPair<S>>& pairs,
                        const MedalConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (pairs.empty()) throw UsageError("train_medal: no training pairs");
    const int n = static_cast<int>(pairs.size());

    TrainReport rep;
    AdamState<S> adam = AdamState<S>::for_weights(net.weights);
    SplitMix64 rng(seed);
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    WeightsBundle<S> checkpoint = net.weights;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle(order, rng);
        double epoch_loss_sum = 0.0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, n - start);
            std::vector<const Tensor<S>*> frames, backgrounds;
            std::vector<const LabelMask*> labels;
            for (int i = 0; i < bsz; ++i) {
                const MedalPair<S>& pr = pairs[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
                frames.push_back(&pr.frame);
                backgrounds.push_back(&pr.background);
                labels.push_back(&pr.labels);
            }
            Tensor<S> input = pack_frame_background(frames, backgrounds, cfg);
            ForwardCache<S> cache = forward(net, input);
            Tensor<S> d_prob;
            const double loss =
                bce_loss_masked_grad(cache.output(), labels, cfg.clamp_delta, &d_prob);
            if (!std::isfinite(loss)) {
                net.weights = checkpoint;
                net.touch();
                rep.aborted = true;
                rep.abort_reason = "non-finite loss at epoch " + std::to_string(epoch);
                rep.epochs_run = epoch;
                return rep;
            }
            WeightsBundle<S> grads;
            backward(net, cache, d_prob, grads);
            checkpoint = net.weights;
            try {
                adam_step(net, grads, adam, cfg.learning_rate);
            } catch (const NumericError& err) {
                net.weights = checkpoint;
                net.touch();
                rep.aborted = true;
                rep.abort_reason = err.what();
                rep.epochs_run = epoch;
                return rep;
            }
            epoch_loss_sum += loss * bsz;
        }
        rep.epoch_losses.push_back(epoch_loss_sum / n);
        rep.epochs_run = epoch + 1;
    }
    rep.final_mean_loss = rep.epoch_losses.empty() ? 0.0 : rep.epoch_losses.back();
    return rep;
}

}  // namespace cdnm
