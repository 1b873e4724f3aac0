#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cdnm/common.hpp"
#include "cdnm/image.hpp"

namespace cdnm {

// ROI convention: nullptr evaluates everywhere; otherwise mask value 1 marks
// pixels inside the region.
inline bool in_roi(const BinaryMask* roi, int y, int x) {
    return roi == nullptr || roi->at(y, x) != 0;
}

inline void require_same_extents(const Image8& gt, const Image8& est, const char* what) {
    if (!gt.same_extents(est)) throw UsageError(std::string(what) + ": image extents differ");
}

inline void require_roi_extents(const Image8& gt, const BinaryMask* roi, const char* what) {
    if (roi && (roi->h != gt.h || roi->w != gt.w))
        throw UsageError(std::string(what) + ": ROI extents differ from image");
}

// Average gray-level error: mean absolute luma difference over the ROI.
inline double age(const Image8& gt, const Image8& est, const BinaryMask* roi = nullptr) {
    require_same_extents(gt, est, "age");
    require_roi_extents(gt, roi, "age");
    double sum = 0;
    std::int64_t count = 0;
    for (int y = 0; y < gt.h; ++y)
        for (int x = 0; x < gt.w; ++x) {
            if (!in_roi(roi, y, x)) continue;
            sum += std::abs(luma_at(gt, y, x) - luma_at(est, y, x));
            count++;
        }
    if (count == 0) throw UsageError("age: empty ROI");
    return sum / static_cast<double>(count);
}

// pEPs: fraction of ROI pixels with luma error > tau. pCEPs: fraction whose
// 4-connected in-ROI neighbors all also exceed tau (neighbors outside the
// image or ROI do not disqualify a pixel).
inline std::pair<double, double> peps_pceps(const Image8& gt, const Image8& est, double tau = 20.0,
                                            const BinaryMask* roi = nullptr) {
    require_same_extents(gt, est, "peps_pceps");
    require_roi_extents(gt, roi, "peps_pceps");
    if (tau <= 0) throw UsageError("peps_pceps: tau must be positive");
    const int h = gt.h, w = gt.w;
    std::vector<std::uint8_t> err(static_cast<std::size_t>(h) * w, 0);
    std::int64_t count = 0, n_err = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!in_roi(roi, y, x)) continue;
            count++;
            if (std::abs(luma_at(gt, y, x) - luma_at(est, y, x)) > tau) {
                err[static_cast<std::size_t>(y) * w + x] = 1;
                n_err++;
            }
        }
    if (count == 0) throw UsageError("peps_pceps: empty ROI");
    std::int64_t n_clustered = 0;
    const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!in_roi(roi, y, x) || !err[static_cast<std::size_t>(y) * w + x]) continue;
            bool clustered = true;
            for (int d = 0; d < 4 && clustered; ++d) {
                const int ny = y + dy[d], nx = x + dx[d];
                if (ny < 0 || ny >= h || nx < 0 || nx >= w || !in_roi(roi, ny, nx)) continue;
                if (!err[static_cast<std::size_t>(ny) * w + nx]) clustered = false;
            }
            if (clustered) n_clustered++;
        }
    return {static_cast<double>(n_err) / static_cast<double>(count),
            static_cast<double>(n_clustered) / static_cast<double>(count)};
}

inline constexpr double kPsnrCap = 100.0;

// Peak signal-to-noise ratio on luma: 10*log10(255^2 / MSE), capped at 100.
inline double psnr(const Image8& gt, const Image8& est, const BinaryMask* roi = nullptr) {
    require_same_extents(gt, est, "psnr");
    require_roi_extents(gt, roi, "psnr");
    double sq = 0;
    std::int64_t count = 0;
    for (int y = 0; y < gt.h; ++y)
        for (int x = 0; x < gt.w; ++x) {
            if (!in_roi(roi, y, x)) continue;
            const double d = luma_at(gt, y, x) - luma_at(est, y, x);
            sq += d * d;
            count++;
        }
    if (count == 0) throw UsageError("psnr: empty ROI");
    const double mse = sq / static_cast<double>(count);
    if (mse <= 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

namespace detail {

struct Plane {
    int h = 0, w = 0;
    std::vector<double> v;
    double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

inline Plane luma_plane(const Image8& im) {
    Plane p;
    p.h = im.h;
    p.w = im.w;
    p.v.resize(static_cast<std::size_t>(im.h) * im.w);
    for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x) p.v[static_cast<std::size_t>(y) * im.w + x] = luma_at(im, y, x);
    return p;
}

inline Plane downsample2(const Plane& p) {
    Plane out;
    out.h = p.h / 2;
    out.w = p.w / 2;
    out.v.resize(static_cast<std::size_t>(out.h) * out.w);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            out.v[static_cast<std::size_t>(y) * out.w + x] =
                0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x) +
                        p.at(2 * y + 1, 2 * x + 1));
    return out;
}

inline std::vector<double> gaussian_window_11() {
    std::vector<double> w(11);
    const double sigma = 1.5;
    double sum = 0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5;
        w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
        sum += w[static_cast<std::size_t>(i)];
    }
    for (auto& x : w) x /= sum;
    return w;
}

// Separable 11x11 Gaussian filtering, valid region only.
inline Plane gauss_filter_valid(const Plane& p) {
    static const std::vector<double> win = gaussian_window_11();
    Plane tmp;  // horizontal pass
    tmp.h = p.h;
    tmp.w = p.w - 10;
    tmp.v.assign(static_cast<std::size_t>(tmp.h) * tmp.w, 0.0);
    for (int y = 0; y < p.h; ++y)
        for (int x = 0; x < tmp.w; ++x) {
            double acc = 0;
            for (int i = 0; i < 11; ++i) acc += win[static_cast<std::size_t>(i)] * p.at(y, x + i);
            tmp.v[static_cast<std::size_t>(y) * tmp.w + x] = acc;
        }
    Plane out;  // vertical pass
    out.h = p.h - 10;
    out.w = tmp.w;
    out.v.assign(static_cast<std::size_t>(out.h) * out.w, 0.0);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            double acc = 0;
            for (int i = 0; i < 11; ++i) acc += win[static_cast<std::size_t>(i)] * tmp.at(y + i, x);
            out.v[static_cast<std::size_t>(y) * out.w + x] = acc;
        }
    return out;
}

struct SsimScale {
    double mean_ssim = 0;  // mean of l*cs map
    double mean_cs = 0;
};

inline SsimScale ssim_scale(const Plane& a, const Plane& b) {
    const double c1 = (0.01 * 255) * (0.01 * 255);
    const double c2 = (0.03 * 255) * (0.03 * 255);
    Plane mu_a = gauss_filter_valid(a);
    Plane mu_b = gauss_filter_valid(b);

    Plane aa = a, bb = b, ab = a;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        aa.v[i] = a.v[i] * a.v[i];
        bb.v[i] = b.v[i] * b.v[i];
        ab.v[i] = a.v[i] * b.v[i];
    }
    Plane m_aa = gauss_filter_valid(aa);
    Plane m_bb = gauss_filter_valid(bb);
    Plane m_ab = gauss_filter_valid(ab);

    double sum_ssim = 0, sum_cs = 0;
    const std::size_t n = mu_a.v.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double ma = mu_a.v[i], mb = mu_b.v[i];
        const double va = m_aa.v[i] - ma * ma;
        const double vb = m_bb.v[i] - mb * mb;
        const double cov = m_ab.v[i] - ma * mb;
        const double l = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        const double cs = (2 * cov + c2) / (va + vb + c2);
        sum_ssim += l * cs;
        sum_cs += cs;
    }
    return {sum_ssim / static_cast<double>(n), sum_cs / static_cast<double>(n)};
}

}  // namespace detail

// Multi-scale structural similarity on luma: 11x11 Gaussian window (sigma
// 1.5), canonical exponent weights, 2x2-mean downsampling between scales.
// Images too small for five scales use fewer, with the used weights
// renormalized; scales_used reports how many were evaluated.
inline double ms_ssim(const Image8& gt, const Image8& est, int* scales_used = nullptr) {
    require_same_extents(gt, est, "ms_ssim");
    static const double weights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    detail::Plane a = detail::luma_plane(gt);
    detail::Plane b = detail::luma_plane(est);

    int max_scales = 0;
    {
        int h = a.h, w = a.w;
        while (max_scales < 5 && h >= 11 && w >= 11) {
            max_scales++;
            h /= 2;
            w /= 2;
        }
    }
    if (max_scales == 0) throw UsageError("ms_ssim: image smaller than the 11x11 window");
    if (scales_used) *scales_used = max_scales;

    double wsum = 0;
    for (int s = 0; s < max_scales; ++s) wsum += weights[s];

    double value = 1.0;
    for (int s = 0; s < max_scales; ++s) {
        detail::SsimScale sc = detail::ssim_scale(a, b);
        const double weight = weights[s] / wsum;
        const double base = s + 1 == max_scales ? std::max(sc.mean_ssim, 0.0)
                                                : std::max(sc.mean_cs, 0.0);
        value *= std::pow(base, weight);
        if (s + 1 < max_scales) {
            a = detail::downsample2(a);
            b = detail::downsample2(b);
        }
    }
    return std::clamp(value, 0.0, 1.0);
}

namespace detail {

// Classic BT.601 YUV: Y in [0,255], U = 0.492(B-Y), V = 0.877(R-Y).
inline void rgb_to_yuv(double r, double g, double b, double& y, double& u, double& v) {
    y = 0.299 * r + 0.587 * g + 0.114 * b;
    u = 0.492 * (b - y);
    v = 0.877 * (r - y);
}

}  // namespace detail

// Color quality measure: PSNR blend over BT.601 YUV,
// CQM = 0.9449 * PSNR_Y + 0.0551 * (PSNR_U + PSNR_V) / 2, each term capped.
inline double cqm(const Image8& gt, const Image8& est, const BinaryMask* roi = nullptr) {
    require_same_extents(gt, est, "cqm");
    require_roi_extents(gt, roi, "cqm");
    if (gt.c != 3) throw UsageError("cqm: requires 3-channel images");
    double sy = 0, su = 0, sv = 0;
    std::int64_t count = 0;
    for (int y = 0; y < gt.h; ++y)
        for (int x = 0; x < gt.w; ++x) {
            if (!in_roi(roi, y, x)) continue;
            double y1, u1, v1, y2, u2, v2;
            detail::rgb_to_yuv(gt.at(y, x, 0), gt.at(y, x, 1), gt.at(y, x, 2), y1, u1, v1);
            detail::rgb_to_yuv(est.at(y, x, 0), est.at(y, x, 1), est.at(y, x, 2), y2, u2, v2);
            sy += (y1 - y2) * (y1 - y2);
            su += (u1 - u2) * (u1 - u2);
            sv += (v1 - v2) * (v1 - v2);
            count++;
        }
    if (count == 0) throw UsageError("cqm: empty ROI");
    auto psnr_of = [&](double sq) {
        const double mse = sq / static_cast<double>(count);
        if (mse <= 0) return kPsnrCap;
        return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
    };
    return 0.9449 * psnr_of(sy) + 0.0551 * 0.5 * (psnr_of(su) + psnr_of(sv));
}

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::int64_t total() const { return tp + fp + fn + tn; }

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

// Foreground-positive confusion counts; ignore-labeled and out-of-ROI pixels
// are never counted in any cell.
inline ConfusionCounts confusion(const BinaryMask& pred, const LabelMask& gt,
                                 const BinaryMask* roi = nullptr) {
    if (pred.h != gt.h || pred.w != gt.w) throw UsageError("confusion: extents differ");
    if (roi && (roi->h != gt.h || roi->w != gt.w))
        throw UsageError("confusion: ROI extents differ");
    ConfusionCounts cc;
    for (int y = 0; y < gt.h; ++y)
        for (int x = 0; x < gt.w; ++x) {
            if (!in_roi(roi, y, x)) continue;
            const Label lab = gt.at(y, x);
            if (lab == Label::Ignore) continue;
            const bool p = pred.at(y, x) != 0;
            const bool t = lab == Label::Foreground;
            if (p && t)
                cc.tp++;
            else if (p && !t)
                cc.fp++;
            else if (!p && t)
                cc.fn++;
            else
                cc.tn++;
        }
    return cc;
}

struct FgQualityReport {
    double precision = 0, recall = 0, fmeasure = 0, fpr = 0, fnr = 0, pwc = 0;
};

inline FgQualityReport classification_metrics(const ConfusionCounts& cc) {
    if (cc.total() <= 0) throw UsageError("classification_metrics: no evaluated pixels");
    FgQualityReport r;
    const double tp = static_cast<double>(cc.tp), fp = static_cast<double>(cc.fp);
    const double fn = static_cast<double>(cc.fn), tn = static_cast<double>(cc.tn);
    r.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    r.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    r.fmeasure = r.precision + r.recall > 0
                     ? 2 * r.precision * r.recall / (r.precision + r.recall)
                     : 0.0;
    r.fpr = fp + tn > 0 ? fp / (fp + tn) : 0.0;
    r.fnr = tp + fn > 0 ? fn / (tp + fn) : 0.0;
    r.pwc = 100.0 * (fn + fp) / (tp + fp + fn + tn);
    return r;
}

struct BgQualityReport {
    double age = 0, peps = 0, pceps = 0, psnr = 0, ms_ssim = 0, cqm = 0;
    bool has_cqm = false;  // grayscale inputs have no CQM
};

inline BgQualityReport background_quality(const Image8& gt, const Image8& est, double tau = 20.0,
                                          const BinaryMask* roi = nullptr) {
    BgQualityReport r;
    r.age = age(gt, est, roi);
    auto pe = peps_pceps(gt, est, tau, roi);
    r.peps = pe.first;
    r.pceps = pe.second;
    r.psnr = psnr(gt, est, roi);
    r.ms_ssim = ms_ssim(gt, est);
    if (gt.c == 3) {
        r.cqm = cqm(gt, est, roi);
        r.has_cqm = true;
    }
    return r;
}

// Ordered metric record: (metric name, value) pairs under a group label.
using MetricValues = std::vector<std::pair<std::string, double>>;

struct GroupedRecord {
    std::string group;
    MetricValues values;
};

struct AggregateResult {
    std::vector<GroupedRecord> group_means;  // one per nonempty group, input order
    MetricValues overall;                    // unweighted mean of group means
    std::vector<std::string> warnings;
};

// Per-group unweighted means, then an overall row that is the unweighted mean
// of the group means (not the pooled mean). Groups with no records are
// excluded with a warning.
inline AggregateResult aggregate(const std::vector<GroupedRecord>& records,
                                 const std::vector<std::string>& group_order = {}) {
    if (records.empty()) throw UsageError("aggregate: no records");
    std::vector<std::string> groups = group_order;
    if (groups.empty())
        for (const auto& r : records)
            if (std::find(groups.begin(), groups.end(), r.group) == groups.end())
                groups.push_back(r.group);

    AggregateResult out;
    std::vector<std::string> keys;
    for (const auto& r : records)
        for (const auto& [k, v] : r.values)
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);

    for (const auto& g : groups) {
        std::map<std::string, std::pair<double, int>> acc;
        int count = 0;
        for (const auto& r : records) {
            if (r.group != g) continue;
            count++;
            for (const auto& [k, v] : r.values) {
                acc[k].first += v;
                acc[k].second += 1;
            }
        }
        if (count == 0) {
            out.warnings.push_back("group '" + g + "' has no records; excluded");
            continue;
        }
        GroupedRecord mean;
        mean.group = g;
        for (const auto& k : keys)
            if (acc.count(k) && acc[k].second > 0)
                mean.values.emplace_back(k, acc[k].first / acc[k].second);
        out.group_means.push_back(std::move(mean));
    }
    if (out.group_means.empty()) throw UsageError("aggregate: all groups are empty");
    for (const auto& k : keys) {
        double sum = 0;
        int cnt = 0;
        for (const auto& g : out.group_means)
            for (const auto& [gk, gv] : g.values)
                if (gk == k) {
                    sum += gv;
                    cnt++;
                }
        if (cnt > 0) out.overall.emplace_back(k, sum / cnt);
    }
    return out;
}

}  // namespace cdnm
