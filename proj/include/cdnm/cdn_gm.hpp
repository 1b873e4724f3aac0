#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cdnm/activations.hpp"
#include "cdnm/adam.hpp"
#include "cdnm/common.hpp"
#include "cdnm/network.hpp"
#include "cdnm/tensor.hpp"

namespace cdnm {

inline constexpr double kDensityFloor = 1e-12;
inline constexpr double kTwoPi = 6.283185307179586476925286766559;

// The temporal front-end halves the history length four times (two depthwise
// and two regular strided convolutions), so T must be a multiple of 16.
inline constexpr int kCdnTemporalStride = 16;

struct CdnGmConfig {
    int mixture_components = 3;  // K
    int channels = 3;            // c: 1 (gray) or 3 (color)
    int history_len = 96;        // T
    double sigma_min_gray = 16.0;
    double sigma_max_gray = 32.0;
    double learning_rate = 5e-3;
    int batch_size = 256;

    int head_size() const { return (channels + 2) * mixture_components; }

    void validate() const {
        if (mixture_components < 1) throw ConfigError("cdn-gm: K must be >= 1");
        if (channels != 1 && channels != 3) throw ConfigError("cdn-gm: channels must be 1 or 3");
        if (history_len < 1) throw ConfigError("cdn-gm: history length must be >= 1");
        if (!(0.0 < sigma_min_gray && sigma_min_gray < sigma_max_gray && sigma_max_gray <= 255.0))
            throw ConfigError("cdn-gm: need 0 < sigma_min < sigma_max <= 255");
        if (learning_rate <= 0) throw ConfigError("cdn-gm: learning rate must be positive");
        if (batch_size < 1) throw ConfigError("cdn-gm: batch size must be >= 1");
    }
};

// One pixel's T most-recent color samples, normalized to [0,1].
// values[t * channels + ch].
template <typename S>
struct PixelHistory {
    int frames = 0;
    int channels = 0;
    std::vector<S> values;

    const S* sample(int t) const { return values.data() + static_cast<std::int64_t>(t) * channels; }

    void validate() const {
        if (frames < 1 || (channels != 1 && channels != 3))
            throw UsageError("pixel history: bad extents");
        if (static_cast<std::int64_t>(values.size()) !=
            static_cast<std::int64_t>(frames) * channels)
            throw UsageError("pixel history: value count does not match extents");
        for (S v : values)
            if (!(v >= S(0) && v <= S(1))) throw UsageError("pixel history: values must be in [0,1]");
    }
};

// Unconstrained network head of size (c+2)*K, laid out as
// [mu (K*c) | sigma (K) | pi (K)].
template <typename S>
struct RawHeadView {
    const S* mu;
    const S* sigma;
    const S* pi;

    RawHeadView(const S* head, int K, int c)
        : mu(head), sigma(head + static_cast<std::int64_t>(K) * c), pi(sigma + K) {}
};

// Constrained GMM parameters for one pixel. sigma is the shared per-component
// variance on the normalized color cube; mu is stored as mu[k*c + ch].
template <typename S>
struct MixtureParams {
    int components = 0;  // K
    int channels = 0;    // c
    std::vector<S> pi;
    std::vector<S> sigma;
    std::vector<S> mu;

    const S* mean(int k) const { return mu.data() + static_cast<std::int64_t>(k) * channels; }
};

// Posterior component probabilities for one sample.
template <typename S>
using Responsibilities = std::vector<S>;

// Checks every MixtureParams invariant; returns a failure description or "".
template <typename S>
std::string params_invariant_violation(const MixtureParams<S>& p, double sigma_min_gray,
                                       double sigma_max_gray, double simplex_tol = 1e-5) {
    if (static_cast<int>(p.pi.size()) != p.components ||
        static_cast<int>(p.sigma.size()) != p.components ||
        static_cast<int>(p.mu.size()) != p.components * p.channels)
        return "field sizes do not match K/c";
    double sum = 0;
    for (S v : p.pi) {
        if (!(v >= S(0))) return "pi has a negative entry";
        sum += static_cast<double>(v);
    }
    if (std::abs(sum - 1.0) > simplex_tol) return "pi does not sum to 1";
    const double lo = sigma_min_gray / 255.0, hi = sigma_max_gray / 255.0;
    const double slack = 1e-6;
    for (S v : p.sigma)
        if (!(static_cast<double>(v) >= lo - slack && static_cast<double>(v) <= hi + slack))
            return "sigma out of bounds";
    for (S v : p.mu)
        if (!(v >= S(0) && v <= S(1))) return "mu out of [0,1]";
    return "";
}

// Applies the head constraints: softmax for the mixing coefficients,
// hard-sigmoid plus the bounded-variance map for sigma, hard-sigmoid for mu.
template <typename S>
MixtureParams<S> constrain(const S* raw_head, const CdnGmConfig& cfg) {
    const int K = cfg.mixture_components, c = cfg.channels;
    RawHeadView<S> head(raw_head, K, c);
    MixtureParams<S> out;
    out.components = K;
    out.channels = c;
    out.pi.resize(static_cast<std::size_t>(K));
    out.sigma.resize(static_cast<std::size_t>(K));
    out.mu.resize(static_cast<std::size_t>(K) * c);
    softmax(head.pi, out.pi.data(), K);
    const S lo = static_cast<S>(cfg.sigma_min_gray), hi = static_cast<S>(cfg.sigma_max_gray);
    for (int k = 0; k < K; ++k) {
        const S shat = hard_sigmoid(head.sigma[k]);
        out.sigma[static_cast<std::size_t>(k)] = (lo * (S(1) - shat) + hi * shat) / S(255);
    }
    for (int i = 0; i < K * c; ++i) out.mu[static_cast<std::size_t>(i)] = hard_sigmoid(head.mu[i]);
    return out;
}

template <typename S>
MixtureParams<S> constrain(const std::vector<S>& raw_head, const CdnGmConfig& cfg) {
    if (static_cast<int>(raw_head.size()) != cfg.head_size())
        throw UsageError("constrain: raw head size " + std::to_string(raw_head.size()) +
                         ", expected " + std::to_string(cfg.head_size()));
    return constrain(raw_head.data(), cfg);
}

// ln N_k(x): shared-variance Gaussian with sigma as the variance,
// N = (2*pi*sigma)^(-c/2) * exp(-||x-mu||^2 / (2*sigma)).
template <typename S>
double log_component_density(const S* x, const MixtureParams<S>& p, int k) {
    const int c = p.channels;
    const double sigma = static_cast<double>(p.sigma[static_cast<std::size_t>(k)]);
    const S* mu = p.mean(k);
    double d2 = 0;
    for (int ch = 0; ch < c; ++ch) {
        const double d = static_cast<double>(x[ch]) - static_cast<double>(mu[ch]);
        d2 += d * d;
    }
    return -0.5 * c * std::log(kTwoPi * sigma) - d2 / (2.0 * sigma);
}

// Mixture density sum_k pi_k * N_k(x).
template <typename S>
double gmm_pdf(const S* x, const MixtureParams<S>& p) {
    double acc = 0;
    for (int k = 0; k < p.components; ++k)
        acc += static_cast<double>(p.pi[static_cast<std::size_t>(k)]) *
               std::exp(log_component_density(x, p, k));
    return acc;
}

template <typename S>
double gmm_pdf(const std::vector<S>& x, const MixtureParams<S>& p) {
    if (static_cast<int>(x.size()) != p.channels) throw UsageError("gmm_pdf: wrong sample size");
    return gmm_pdf(x.data(), p);
}

// Negative log-likelihood of a history under fixed parameters; the density is
// floored at 1e-12 before the log. Order-independent by construction.
template <typename S>
double nll_loss(const MixtureParams<S>& p, const PixelHistory<S>& history) {
    if (history.channels != p.channels) throw UsageError("nll_loss: channel mismatch");
    double total = 0;
    for (int t = 0; t < history.frames; ++t)
        total += -std::log(std::max(gmm_pdf(history.sample(t), p), kDensityFloor));
    return total;
}

// Posterior component probabilities via log-sum-exp.
template <typename S>
Responsibilities<S> responsibilities(const MixtureParams<S>& p, const S* x) {
    const int K = p.components;
    std::vector<double> a(static_cast<std::size_t>(K));
    double amax = -1e300;
    for (int k = 0; k < K; ++k) {
        const double pik = static_cast<double>(p.pi[static_cast<std::size_t>(k)]);
        a[static_cast<std::size_t>(k)] =
            (pik > 0 ? std::log(pik) : -1e300) + log_component_density(x, p, k);
        amax = std::max(amax, a[static_cast<std::size_t>(k)]);
    }
    double denom = 0;
    Responsibilities<S> out(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        const double e = std::exp(a[static_cast<std::size_t>(k)] - amax);
        a[static_cast<std::size_t>(k)] = e;
        denom += e;
    }
    for (int k = 0; k < K; ++k)
        out[static_cast<std::size_t>(k)] = static_cast<S>(a[static_cast<std::size_t>(k)] / denom);
    return out;
}

template <typename S>
Responsibilities<S> responsibilities(const MixtureParams<S>& p, const std::vector<S>& x) {
    if (static_cast<int>(x.size()) != p.channels)
        throw UsageError("responsibilities: wrong sample size");
    return responsibilities(p, x.data());
}

// Analytic gradient of nll_loss(constrain(head), history) w.r.t. the raw head,
// written into d_head[(c+2)*K] (layout [mu | sigma | pi]).
//
// Per sample j with posteriors P_k:
//   d/dy_pi_l    = pi_l - P_l
//   d/dy_sigma_k = 0.2 * (sigma_max-sigma_min)/255 * P_k * (c/(2 s_k) - ||x-mu_k||^2/(2 s_k^2))
//   d/dy_mu_kl   = 0.2 * P_k * (mu_kl - x_l) / s_k
// The 0.2 factors vanish wherever the hard-sigmoid preactivation is saturated,
// which is recovered here from the constrained values themselves.
template <typename S>
void head_gradients(const MixtureParams<S>& p, const PixelHistory<S>& history,
                    const CdnGmConfig& cfg, S* d_head) {
    const int K = cfg.mixture_components, c = cfg.channels;
    if (p.components != K || p.channels != c || history.channels != c)
        throw UsageError("head_gradients: mismatched K/c");
    S* d_mu = d_head;
    S* d_sigma = d_head + static_cast<std::int64_t>(K) * c;
    S* d_pi = d_sigma + K;
    std::fill(d_head, d_head + cfg.head_size(), S(0));

    const double sigma_scale = 0.2 * (cfg.sigma_max_gray - cfg.sigma_min_gray) / 255.0;
    const double lo = cfg.sigma_min_gray / 255.0, hi = cfg.sigma_max_gray / 255.0;

    for (int t = 0; t < history.frames; ++t) {
        const S* x = history.sample(t);
        const Responsibilities<S> post = responsibilities(p, x);
        for (int k = 0; k < K; ++k) {
            const double P = static_cast<double>(post[static_cast<std::size_t>(k)]);
            const double pik = static_cast<double>(p.pi[static_cast<std::size_t>(k)]);
            d_pi[k] += static_cast<S>(pik - P);

            const double s = static_cast<double>(p.sigma[static_cast<std::size_t>(k)]);
            const S* mu = p.mean(k);
            double d2 = 0;
            for (int ch = 0; ch < c; ++ch) {
                const double d = static_cast<double>(mu[ch]) - static_cast<double>(x[ch]);
                d2 += d * d;
            }
            const bool sigma_live = s > lo && s < hi;
            if (sigma_live)
                d_sigma[k] += static_cast<S>(sigma_scale * P * (c / (2.0 * s) - d2 / (2.0 * s * s)));
            for (int ch = 0; ch < c; ++ch) {
                const double m = static_cast<double>(mu[ch]);
                const bool mu_live = m > 0.0 && m < 1.0;
                if (mu_live)
                    d_mu[static_cast<std::int64_t>(k) * c + ch] +=
                        static_cast<S>(0.2 * P * (m - static_cast<double>(x[ch])) / s);
            }
        }
    }
}

template <typename S>
std::vector<S> head_gradients(const MixtureParams<S>& p, const PixelHistory<S>& history,
                              const CdnGmConfig& cfg) {
    std::vector<S> d(static_cast<std::size_t>(cfg.head_size()));
    head_gradients(p, history, cfg, d.data());
    return d;
}

template <typename S>
struct BackgroundPick {
    std::vector<S> mu_star;
    int winner = 0;
};

// Picks the high-weighted, low-spread component: argmax_k pi_k / sigma_k,
// ties resolved to the lowest index. Returns that component's mean whole.
template <typename S>
BackgroundPick<S> select_background(const MixtureParams<S>& p) {
    int winner = 0;
    double best = -1.0;
    for (int k = 0; k < p.components; ++k) {
        const double ratio = static_cast<double>(p.pi[static_cast<std::size_t>(k)]) /
                             static_cast<double>(p.sigma[static_cast<std::size_t>(k)]);
        if (ratio > best) {
            best = ratio;
            winner = k;
        }
    }
    BackgroundPick<S> out;
    out.winner = winner;
    out.mu_star.assign(p.mean(winner), p.mean(winner) + p.channels);
    return out;
}

// The 7-layer history-to-head network: two depthwise temporal convolutions,
// two channel-mixing convolutions, three dense layers. All four convolutions
// stride by 2, so a length-T history reaches the dense head at T/16 steps.
template <typename S>
NetworkGraph<S> build_cdn_gm(const CdnGmConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (cfg.history_len % kCdnTemporalStride != 0)
        throw ConfigError("cdn-gm: history length " + std::to_string(cfg.history_len) +
                          " is not divisible by the temporal stride plan (" +
                          std::to_string(kCdnTemporalStride) + ")");
    const int c = cfg.channels;
    const int flat = (cfg.history_len / kCdnTemporalStride) * 12;
    std::vector<LayerSpec> layers = {
        dwconv1d_layer("temporal_dw1", 5, c, 2),
        dwconv1d_layer("temporal_dw2", 5, c, 2),
        conv1d_layer("temporal_conv1", 5, c, 8, 2, Activation::ReLU),
        conv1d_layer("temporal_conv2", 5, 8, 12, 2, Activation::ReLU),
        dense_layer("head_dense1", flat, 32, Activation::ReLU),
        dense_layer("head_dense2", 32, 24, Activation::ReLU),
        dense_layer("head_out", 24, cfg.head_size()),
    };
    return make_network<S>({cfg.history_len, c}, std::move(layers), seed);
}

// Packs histories into the batched network input [N, T, c].
template <typename S>
Tensor<S> pack_histories(const std::vector<PixelHistory<S>>& hs, const CdnGmConfig& cfg) {
    if (hs.empty()) throw UsageError("pack_histories: empty batch");
    Tensor<S> t = Tensor<S>::zeros({static_cast<int>(hs.size()), cfg.history_len, cfg.channels});
    const std::int64_t per = static_cast<std::int64_t>(cfg.history_len) * cfg.channels;
    for (std::size_t i = 0; i < hs.size(); ++i) {
        if (hs[i].frames != cfg.history_len || hs[i].channels != cfg.channels)
            throw UsageError("pack_histories: history " + std::to_string(i) + " has wrong extents");
        std::copy(hs[i].values.begin(), hs[i].values.end(),
                  t.data.begin() + static_cast<std::int64_t>(i) * per);
    }
    return t;
}

// Batched inference: raw heads -> constrained parameters per history.
template <typename S>
std::vector<MixtureParams<S>> cdn_infer(const NetworkGraph<S>& net, const Tensor<S>& histories,
                                        const CdnGmConfig& cfg, int threads = 1) {
    const int n = histories.shape[0];
    std::vector<MixtureParams<S>> out(static_cast<std::size_t>(n));
    const int head = cfg.head_size();
    parallel_chunks(n, 1024, threads, [&](std::int64_t, std::int64_t b, std::int64_t e) {
        const std::int64_t count = e - b;
        Tensor<S> slice = Tensor<S>::zeros(
            {static_cast<int>(count), histories.shape[1], histories.shape[2]});
        const std::int64_t per = static_cast<std::int64_t>(histories.shape[1]) * histories.shape[2];
        std::copy(histories.data.begin() + b * per, histories.data.begin() + e * per,
                  slice.data.begin());
        Tensor<S> heads = forward_output(net, slice);
        for (std::int64_t i = 0; i < count; ++i)
            out[static_cast<std::size_t>(b + i)] =
                constrain(heads.ptr() + i * head, cfg);
    });
    return out;
}

struct TrainReport {
    int epochs_run = 0;
    double final_mean_loss = 0.0;
    std::vector<double> epoch_losses;
    bool aborted = false;
    std::string abort_reason;
};

// Unsupervised training: shuffled mini-batches, analytic head gradients fed
// into the network backward pass, Adam updates. On a non-finite loss the
// weights revert to the state before the offending update and training stops.
template <typename S>
TrainReport train_cdn_gm(NetworkGraph<S>& net, const Tensor<S>& histories, int epochs,
                         const CdnGmConfig& cfg, std::uint64_t seed, int threads = 1) {
    cfg.validate();
    if (histories.rank() != 3 || histories.shape[1] != cfg.history_len ||
        histories.shape[2] != cfg.channels)
        throw UsageError("train_cdn_gm: history batch must be [N, T, c]");
    const int n = histories.shape[0];
    if (n < 1) throw UsageError("train_cdn_gm: empty history batch");
    const int head = cfg.head_size();
    const std::int64_t per = static_cast<std::int64_t>(cfg.history_len) * cfg.channels;

    TrainReport rep;
    AdamState<S> adam = AdamState<S>::for_weights(net.weights);
    SplitMix64 rng(seed);
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    WeightsBundle<S> checkpoint = net.weights;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        shuffle(order, rng);
        double epoch_loss_sum = 0.0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, n - start);
            Tensor<S> batch = Tensor<S>::zeros({bsz, cfg.history_len, cfg.channels});
            for (int i = 0; i < bsz; ++i)
                std::copy(histories.data.begin() + order[static_cast<std::size_t>(start + i)] * per,
                          histories.data.begin() +
                              (order[static_cast<std::size_t>(start + i)] + 1) * per,
                          batch.data.begin() + static_cast<std::int64_t>(i) * per);

            ForwardCache<S> cache = forward(net, batch);
            const Tensor<S>& heads = cache.output();
            Tensor<S> d_heads = Tensor<S>::zeros(heads.shape);

            const int chunk = 64;
            const int nchunks = (bsz + chunk - 1) / chunk;
            std::vector<double> chunk_loss(static_cast<std::size_t>(nchunks), 0.0);
            parallel_chunks(bsz, chunk, threads, [&](std::int64_t ci, std::int64_t b, std::int64_t e) {
                PixelHistory<S> h;
                h.frames = cfg.history_len;
                h.channels = cfg.channels;
                double local = 0;
                for (std::int64_t i = b; i < e; ++i) {
                    h.values.assign(batch.data.begin() + i * per, batch.data.begin() + (i + 1) * per);
                    MixtureParams<S> params = constrain(heads.ptr() + i * head, cfg);
                    local += nll_loss(params, h);
                    head_gradients(params, h, cfg, d_heads.ptr() + i * head);
                }
                chunk_loss[static_cast<std::size_t>(ci)] = local;
            });
            double batch_loss = 0;
            for (double v : chunk_loss) batch_loss += v;
            batch_loss /= bsz;

            if (!std::isfinite(batch_loss)) {
                net.weights = checkpoint;
                net.touch();
                rep.aborted = true;
                rep.abort_reason = "non-finite loss at epoch " + std::to_string(epoch);
                rep.epochs_run = epoch;
                return rep;
            }

            const S scale = static_cast<S>(1.0 / bsz);
            for (auto& v : d_heads.data) v *= scale;
            WeightsBundle<S> grads;
            backward(net, cache, d_heads, grads);
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
            epoch_loss_sum += batch_loss * bsz;
        }
        rep.epoch_losses.push_back(epoch_loss_sum / n);
        rep.epochs_run = epoch + 1;
    }
    rep.final_mean_loss = rep.epoch_losses.empty() ? 0.0 : rep.epoch_losses.back();
    return rep;
}

}  // namespace cdnm
