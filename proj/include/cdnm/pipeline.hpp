#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cdnm/cdn_gm.hpp"
#include "cdnm/common.hpp"
#include "cdnm/image.hpp"
#include "cdnm/medal_net.hpp"
#include "cdnm/network.hpp"
#include "cdnm/tensor.hpp"

namespace cdnm {

struct VideoSequence {
    std::vector<Image8> frames;
    double frame_rate = 0.0;  // optional metadata

    void validate() const {
        if (frames.empty()) throw UsageError("video sequence is empty");
        for (const auto& f : frames)
            if (!f.same_extents(frames.front()))
                throw UsageError("video sequence has ragged frame extents");
    }
    int height() const { return frames.front().h; }
    int width() const { return frames.front().w; }
    int channels() const { return frames.front().c; }
};

struct PipelineConfig {
    int hop = 96;  // frames between background refreshes; defaults to T
    double epsilon = 0.5;
    int threads = 1;
};

// Rearranges a T-frame window into H*W pixel histories, normalized to [0,1]:
// history (r*W + w) holds pixel (r, w) across the window in temporal order.
// Returns [H*W, T, c].
template <typename S>
Tensor<S> reform_pixel_histories(const std::vector<const Image8*>& window) {
    if (window.empty()) throw UsageError("reform_pixel_histories: empty window");
    const Image8& f0 = *window.front();
    for (const Image8* f : window)
        if (!f->same_extents(f0)) throw UsageError("reform_pixel_histories: ragged frames");
    const int T = static_cast<int>(window.size());
    const int H = f0.h, W = f0.w, c = f0.c;
    Tensor<S> out = Tensor<S>::zeros({H * W, T, c});
    const S inv = S(1) / S(255);
    for (int t = 0; t < T; ++t) {
        const std::uint8_t* src = window[static_cast<std::size_t>(t)]->data.data();
        for (std::int64_t px = 0; px < static_cast<std::int64_t>(H) * W; ++px) {
            S* dst = out.ptr() + (px * T + t) * c;
            for (int ch = 0; ch < c; ++ch)
                dst[ch] = static_cast<S>(src[px * c + ch]) * inv;
        }
    }
    return out;
}

// Row-major inverse of the reform ordering: per-pixel intensities back to an
// 8-bit image, denormalized by x255 with half-up rounding.
template <typename S>
Image8 reconstruct_background(const std::vector<S>& per_pixel, int h, int w, int c) {
    if (static_cast<std::int64_t>(per_pixel.size()) != static_cast<std::int64_t>(h) * w * c)
        throw UsageError("reconstruct_background: expected " + std::to_string(h * w * c) +
                         " values, got " + std::to_string(per_pixel.size()));
    Image8 im;
    im.h = h;
    im.w = w;
    im.c = c;
    im.data.resize(per_pixel.size());
    for (std::size_t i = 0; i < per_pixel.size(); ++i) {
        const double v = std::floor(static_cast<double>(per_pixel[i]) * 255.0 + 0.5);
        im.data[i] = static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
    }
    return im;
}

// Streaming window over the last T frames plus the current background.
struct WindowState {
    int capacity = 0;
    std::vector<Image8> ring;
    int next = 0;
    int filled = 0;
    Image8 background;
    bool has_background = false;
    int frames_since_refresh = 0;

    explicit WindowState(int T) : capacity(T) { ring.resize(static_cast<std::size_t>(T)); }

    void push(const Image8& frame) {
        ring[static_cast<std::size_t>(next)] = frame;
        next = (next + 1) % capacity;
        filled = std::min(filled + 1, capacity);
    }

    bool full() const { return filled == capacity; }

    // Oldest-to-newest view of the buffered frames.
    std::vector<const Image8*> window() const {
        std::vector<const Image8*> out;
        out.reserve(static_cast<std::size_t>(filled));
        const int start = full() ? next : 0;
        for (int i = 0; i < filled; ++i)
            out.push_back(&ring[static_cast<std::size_t>((start + i) % capacity)]);
        return out;
    }
};

// One background refresh: pixel histories -> mixture parameters -> selected
// means -> 8-bit image.
template <typename S>
Image8 refresh_background(const NetworkGraph<S>& cdn, const std::vector<const Image8*>& window,
                          const CdnGmConfig& cfg, int threads) {
    const Image8& f0 = *window.front();
    Tensor<S> histories = reform_pixel_histories<S>(window);
    std::vector<MixtureParams<S>> params = cdn_infer(cdn, histories, cfg, threads);
    std::vector<S> bg(static_cast<std::size_t>(f0.h) * f0.w * f0.c);
    for (std::size_t px = 0; px < params.size(); ++px) {
        BackgroundPick<S> pick = select_background(params[px]);
        for (int ch = 0; ch < f0.c; ++ch)
            bg[px * static_cast<std::size_t>(f0.c) + static_cast<std::size_t>(ch)] =
                pick.mu_star[static_cast<std::size_t>(ch)];
    }
    return reconstruct_background(bg, f0.h, f0.w, f0.c);
}

struct BackgroundSchedule {
    std::vector<int> refresh_frames;       // frame index of each refresh
    std::vector<Image8> backgrounds;       // one per refresh
    std::vector<int> background_of_frame;  // per frame: index into backgrounds
    std::vector<std::string> warnings;
};

// Runs the refresh cadence over the sequence: first refresh when the window
// first holds T frames, then every `hop` frames. Sequences shorter than T get
// a single refresh from a window padded by repeating the first frame.
template <typename S>
BackgroundSchedule compute_background_schedule(const VideoSequence& seq,
                                               const NetworkGraph<S>& cdn,
                                               const CdnGmConfig& cfg,
                                               const PipelineConfig& pipe) {
    seq.validate();
    if (pipe.hop < 1) throw ConfigError("pipeline: hop must be >= 1");
    const int len = static_cast<int>(seq.frames.size());
    const int T = cfg.history_len;
    BackgroundSchedule sched;
    sched.background_of_frame.assign(static_cast<std::size_t>(len), 0);

    if (len < T) {
        sched.warnings.push_back("sequence shorter than history length (" + std::to_string(len) +
                                 " < " + std::to_string(T) + "); padding with the first frame");
        std::vector<const Image8*> window;
        window.reserve(static_cast<std::size_t>(T));
        for (int i = 0; i < T - len; ++i) window.push_back(&seq.frames.front());
        for (const auto& f : seq.frames) window.push_back(&f);
        sched.refresh_frames.push_back(len - 1);
        sched.backgrounds.push_back(refresh_background(cdn, window, cfg, pipe.threads));
        return sched;
    }

    WindowState state(T);
    for (int i = 0; i < len; ++i) {
        state.push(seq.frames[static_cast<std::size_t>(i)]);
        if (state.has_background) state.frames_since_refresh++;
        const bool due = state.full() && (!state.has_background ||
                                          state.frames_since_refresh >= pipe.hop);
        if (due) {
            state.background = refresh_background(cdn, state.window(), cfg, pipe.threads);
            state.has_background = true;
            state.frames_since_refresh = 0;
            sched.refresh_frames.push_back(i);
            sched.backgrounds.push_back(state.background);
        }
        sched.background_of_frame[static_cast<std::size_t>(i)] =
            std::max(0, static_cast<int>(sched.backgrounds.size()) - 1);
    }
    return sched;
}

struct ProcessResult {
    std::vector<BinaryMask> masks;  // one per input frame
    BackgroundSchedule schedule;
};

// Full two-stage pass: periodic background refresh through the density
// network, then per-frame segmentation of (frame, current background) pairs.
// Frames before the first refresh reuse the first computed background.
template <typename S>
ProcessResult process_sequence(const VideoSequence& seq, const NetworkGraph<S>& cdn,
                               const NetworkGraph<S>& medal, const CdnGmConfig& cdn_cfg,
                               const PipelineConfig& pipe) {
    seq.validate();
    if (seq.channels() != cdn_cfg.channels)
        throw ConfigError("pipeline: sequence has " + std::to_string(seq.channels()) +
                          " channels, density network expects " + std::to_string(cdn_cfg.channels));
    MedalConfig mcfg;
    mcfg.height = seq.height();
    mcfg.width = seq.width();
    mcfg.channels = seq.channels();
    mcfg.epsilon = pipe.epsilon;
    mcfg.validate();
    const Shape want = {mcfg.height, mcfg.width, 2 * mcfg.channels};
    if (medal.input_shape != want)
        throw ConfigError("pipeline: segmentation network input " + shape_str(medal.input_shape) +
                          " does not match frames " + shape_str(want));

    ProcessResult out;
    out.schedule = compute_background_schedule(seq, cdn, cdn_cfg, pipe);
    const int len = static_cast<int>(seq.frames.size());
    out.masks.resize(static_cast<std::size_t>(len));

    std::vector<Tensor<S>> bg_tensors;
    bg_tensors.reserve(out.schedule.backgrounds.size());
    for (const auto& bg : out.schedule.backgrounds) bg_tensors.push_back(image_to_tensor<S>(bg));

    parallel_chunks(len, 8, pipe.threads, [&](std::int64_t, std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) {
            const Tensor<S> frame = image_to_tensor<S>(seq.frames[static_cast<std::size_t>(i)]);
            const Tensor<S>& bg =
                bg_tensors[static_cast<std::size_t>(out.schedule.background_of_frame[static_cast<std::size_t>(i)])];
            Tensor<S> prob = medal_forward(medal, frame, bg, mcfg);
            out.masks[static_cast<std::size_t>(i)] = std::move(binarize(prob, pipe.epsilon)[0]);
        }
    });
    return out;
}

// Picks n labeled frames at a uniform temporal stride and pairs each with the
// background the inference cadence would hand it. Fewer labels than requested
// takes everything and records a warning.
template <typename S>
std::vector<MedalPair<S>> sample_training_pairs(const VideoSequence& seq,
                                                const std::map<int, LabelMask>& groundtruths,
                                                int n, const NetworkGraph<S>& cdn,
                                                const CdnGmConfig& cdn_cfg,
                                                const PipelineConfig& pipe,
                                                std::vector<std::string>* warnings = nullptr) {
    seq.validate();
    if (n < 1) throw UsageError("sample_training_pairs: n must be >= 1");
    std::vector<int> labeled;
    for (const auto& [idx, mask] : groundtruths) {
        if (idx < 0 || idx >= static_cast<int>(seq.frames.size()))
            throw UsageError("sample_training_pairs: ground truth index " + std::to_string(idx) +
                             " outside the sequence");
        labeled.push_back(idx);
    }
    if (labeled.empty()) throw UsageError("sample_training_pairs: no labeled frames");

    std::vector<int> chosen;
    if (n >= static_cast<int>(labeled.size())) {
        chosen = labeled;
        if (n > static_cast<int>(labeled.size()) && warnings)
            warnings->push_back("requested " + std::to_string(n) + " pairs but only " +
                                std::to_string(labeled.size()) + " labeled frames; taking all");
    } else {
        const int stride = static_cast<int>(labeled.size()) / n;
        for (int i = 0; i < n; ++i) chosen.push_back(labeled[static_cast<std::size_t>(i * stride)]);
    }

    BackgroundSchedule sched = compute_background_schedule(seq, cdn, cdn_cfg, pipe);
    if (warnings)
        warnings->insert(warnings->end(), sched.warnings.begin(), sched.warnings.end());

    std::vector<MedalPair<S>> pairs;
    pairs.reserve(chosen.size());
    for (int idx : chosen) {
        MedalPair<S> p;
        p.frame = image_to_tensor<S>(seq.frames[static_cast<std::size_t>(idx)]);
        p.background = image_to_tensor<S>(
            sched.backgrounds[static_cast<std::size_t>(sched.background_of_frame[static_cast<std::size_t>(idx)])]);
        p.labels = groundtruths.at(idx);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace cdnm
