#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "cdnm/cdn_gm.hpp"
#include "cdnm/common.hpp"

namespace cdnm {

// Slow-but-trusted references for testing and acceptance. Everything here
// runs in double precision and is allowed to be orders of magnitude slower
// than the network path.

struct SigmaBounds {
    double min_gray = 16.0;
    double max_gray = 32.0;
};

struct OracleFit {
    MixtureParams<double> params;
    double nll = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> nll_trajectory;  // one entry per EM iteration
};

namespace detail {

inline double sample_brightness(const double* x, int c) {
    double s = 0;
    for (int ch = 0; ch < c; ++ch) s += x[ch];
    return s / c;
}

}  // namespace detail

// Expectation-maximization on the shared-variance mixture family. After each
// M-step sigma is clamped to [min_gray, max_gray]/255 and pi floored at 1e-6
// then renormalized, so the oracle optimizes the same constrained family as
// the network head. Means start at the 10th/50th/90th percentile samples for
// K=3, evenly spaced quantiles otherwise.
inline OracleFit em_fit(const PixelHistory<double>& history, int K, SigmaBounds bounds,
                        int max_iter = 200, double tol = 1e-7) {
    history.validate();
    const int T = history.frames, c = history.channels;
    if (T < K) throw UsageError("em_fit: need at least K samples, got " + std::to_string(T));
    if (K < 1) throw UsageError("em_fit: K must be >= 1");
    const double lo = bounds.min_gray / 255.0, hi = bounds.max_gray / 255.0;
    if (!(0.0 < lo && lo < hi)) throw UsageError("em_fit: bad sigma bounds");

    // Quantile initialization on brightness-sorted samples.
    std::vector<int> idx(static_cast<std::size_t>(T));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return detail::sample_brightness(history.sample(a), c) <
               detail::sample_brightness(history.sample(b), c);
    });
    OracleFit fit;
    MixtureParams<double>& p = fit.params;
    p.components = K;
    p.channels = c;
    p.pi.assign(static_cast<std::size_t>(K), 1.0 / K);
    p.sigma.assign(static_cast<std::size_t>(K), 0.5 * (lo + hi));
    p.mu.resize(static_cast<std::size_t>(K) * c);
    for (int k = 0; k < K; ++k) {
        double q = K == 3 ? (k == 0 ? 0.10 : k == 1 ? 0.50 : 0.90)
                          : static_cast<double>(k + 1) / (K + 1);
        int si = idx[static_cast<std::size_t>(std::lround(q * (T - 1)))];
        const double* x = history.sample(si);
        for (int ch = 0; ch < c; ++ch) p.mu[static_cast<std::size_t>(k) * c + ch] = x[ch];
    }

    std::vector<double> resp(static_cast<std::size_t>(T) * K);
    double prev_nll = nll_loss(p, history);
    for (int iter = 0; iter < max_iter; ++iter) {
        // E-step
        for (int t = 0; t < T; ++t) {
            Responsibilities<double> r = responsibilities(p, history.sample(t));
            std::copy(r.begin(), r.end(), resp.begin() + static_cast<std::int64_t>(t) * K);
        }
        // M-step
        for (int k = 0; k < K; ++k) {
            double nk = 0;
            for (int t = 0; t < T; ++t) nk += resp[static_cast<std::size_t>(t) * K + k];
            if (nk < 1e-300) nk = 1e-300;
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0;
                for (int t = 0; t < T; ++t)
                    acc += resp[static_cast<std::size_t>(t) * K + k] * history.sample(t)[ch];
                p.mu[static_cast<std::size_t>(k) * c + ch] = acc / nk;
            }
            double s = 0;
            for (int t = 0; t < T; ++t) {
                const double* x = history.sample(t);
                double d2 = 0;
                for (int ch = 0; ch < c; ++ch) {
                    double d = x[ch] - p.mu[static_cast<std::size_t>(k) * c + ch];
                    d2 += d * d;
                }
                s += resp[static_cast<std::size_t>(t) * K + k] * d2;
            }
            p.sigma[static_cast<std::size_t>(k)] = std::clamp(s / (c * nk), lo, hi);
            p.pi[static_cast<std::size_t>(k)] = nk / T;
        }
        // pi floor + renormalize
        double sum = 0;
        for (int k = 0; k < K; ++k) {
            p.pi[static_cast<std::size_t>(k)] = std::max(p.pi[static_cast<std::size_t>(k)], 1e-6);
            sum += p.pi[static_cast<std::size_t>(k)];
        }
        for (int k = 0; k < K; ++k) p.pi[static_cast<std::size_t>(k)] /= sum;

        const double cur = nll_loss(p, history);
        fit.nll_trajectory.push_back(cur);
        fit.iterations = iter + 1;
        if (prev_nll - cur < tol) {
            fit.converged = true;
            prev_nll = cur;
            break;
        }
        prev_nll = cur;
    }
    fit.nll = nll_loss(p, history);
    return fit;
}

// Brute-force background reference: the center of the most populated joint
// histogram bin over the history, ties resolved to the lowest linear bin
// index (channel 0 major). Order-free by construction.
inline std::vector<double> oracle_background(const PixelHistory<double>& history, int bins = 32) {
    history.validate();
    if (bins < 2) throw UsageError("oracle_background: need at least 2 bins");
    const int c = history.channels;
    std::int64_t total_bins = 1;
    for (int ch = 0; ch < c; ++ch) total_bins *= bins;
    std::vector<int> counts(static_cast<std::size_t>(total_bins), 0);
    for (int t = 0; t < history.frames; ++t) {
        const double* x = history.sample(t);
        std::int64_t bin = 0;
        for (int ch = 0; ch < c; ++ch) {
            int b = static_cast<int>(x[ch] * bins);
            b = std::clamp(b, 0, bins - 1);
            bin = bin * bins + b;
        }
        counts[static_cast<std::size_t>(bin)]++;
    }
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < total_bins; ++i)
        if (counts[static_cast<std::size_t>(i)] > counts[static_cast<std::size_t>(best)]) best = i;
    std::vector<double> center(static_cast<std::size_t>(c));
    for (int ch = c - 1; ch >= 0; --ch) {
        center[static_cast<std::size_t>(ch)] = (static_cast<double>(best % bins) + 0.5) / bins;
        best /= bins;
    }
    return center;
}

struct FitComparison {
    double nll_a = 0.0;
    double nll_b = 0.0;
    double bg_distance = 0.0;  // L-infinity between the selected backgrounds
};

inline FitComparison compare_fits(const MixtureParams<double>& a, const MixtureParams<double>& b,
                                  const PixelHistory<double>& history) {
    if (a.components != b.components || a.channels != b.channels)
        throw UsageError("compare_fits: mixtures must share K and c");
    FitComparison out;
    out.nll_a = nll_loss(a, history);
    out.nll_b = nll_loss(b, history);
    const auto pa = select_background(a), pb = select_background(b);
    for (int ch = 0; ch < a.channels; ++ch)
        out.bg_distance = std::max(
            out.bg_distance, std::abs(pa.mu_star[static_cast<std::size_t>(ch)] -
                                      pb.mu_star[static_cast<std::size_t>(ch)]));
    return out;
}

}  // namespace cdnm
