#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cdnm/common.hpp"
#include "cdnm/image.hpp"
#include "cdnm/pipeline.hpp"

namespace cdnm {

enum class SynthBackground { Flat, Gradient, Checker };
enum class SynthShape { Square, Bar };

// Deterministic synthetic scene: a colored object sweeping horizontally with
// wraparound over a static background, additive Gaussian noise and an
// optional linear illumination ramp. Foreground occupancy per in-band pixel
// is object_width / width by construction.
struct SynthSpec {
    int height = 128, width = 128;
    int frame_count = 300;
    int channels = 3;
    SynthBackground background = SynthBackground::Gradient;
    std::array<std::uint8_t, 3> color_a = {40, 60, 90};    // flat color / gradient left / checker even
    std::array<std::uint8_t, 3> color_b = {180, 160, 120};  // gradient right / checker odd
    int checker_cell = 16;
    SynthShape shape = SynthShape::Square;
    std::array<std::uint8_t, 3> object_color = {220, 40, 40};
    double occupancy = 0.3;   // fraction of frames an in-band pixel is covered
    int object_height = 0;    // 0 -> height / 4
    int speed = 1;            // columns advanced per frame (wraps)
    double noise_sd = 4.0;    // gray levels
    double illumination_amp = 0.0;  // total gray-level swing across the sequence
    std::uint64_t seed = 1;

    int object_width() const {
        return std::max(1, static_cast<int>(std::lround(occupancy * width)));
    }
    int object_rows() const { return object_height > 0 ? object_height : height / 4; }
    int band_top() const { return (height - object_rows()) / 2; }

    void validate() const {
        if (height < 1 || width < 1 || frame_count < 1) throw UsageError("synth: bad extents");
        if (channels != 1 && channels != 3) throw UsageError("synth: channels must be 1 or 3");
        if (occupancy > 0.95)
            throw UsageError("synth: occupancy > 0.95 makes the background unrecoverable");
        if (occupancy <= 0.0) throw UsageError("synth: occupancy must be positive");
        if (speed < 1) throw UsageError("synth: speed must be >= 1");
        if (noise_sd < 0 || illumination_amp < 0) throw UsageError("synth: bad noise settings");
        if (object_rows() < 1 || object_rows() > height) throw UsageError("synth: bad object height");
        if (checker_cell < 1) throw UsageError("synth: bad checker cell");
    }
};

struct SynthResult {
    VideoSequence sequence;
    Image8 true_background;
    std::vector<BinaryMask> masks;
};

namespace detail {

inline std::uint8_t synth_channel_value(const SynthSpec& spec,
                                        const std::array<std::uint8_t, 3>& rgb, int ch) {
    if (spec.channels == 3) return rgb[static_cast<std::size_t>(ch)];
    // grayscale: BT.601 of the color triple
    return static_cast<std::uint8_t>(
        std::lround(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]));
}

inline Image8 render_background(const SynthSpec& spec) {
    Image8 bg = Image8::filled(spec.height, spec.width, spec.channels, 0);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x)
            for (int ch = 0; ch < spec.channels; ++ch) {
                double v = 0;
                switch (spec.background) {
                    case SynthBackground::Flat:
                        v = synth_channel_value(spec, spec.color_a, ch);
                        break;
                    case SynthBackground::Gradient: {
                        const double t = spec.width > 1
                                             ? static_cast<double>(x) / (spec.width - 1)
                                             : 0.0;
                        v = (1 - t) * synth_channel_value(spec, spec.color_a, ch) +
                            t * synth_channel_value(spec, spec.color_b, ch);
                        break;
                    }
                    case SynthBackground::Checker: {
                        const bool odd = ((x / spec.checker_cell) + (y / spec.checker_cell)) % 2;
                        v = synth_channel_value(spec, odd ? spec.color_b : spec.color_a, ch);
                        break;
                    }
                }
                bg.at(y, x, ch) = static_cast<std::uint8_t>(std::lround(v));
            }
    return bg;
}

}  // namespace detail

// True iff the object covers pixel (y, x) at frame t.
inline bool synth_object_covers(const SynthSpec& spec, int t, int y, int x) {
    const int rows = spec.object_rows();
    const int top = spec.shape == SynthShape::Bar ? 0 : spec.band_top();
    const int span = spec.shape == SynthShape::Bar ? spec.height : rows;
    if (y < top || y >= top + span) return false;
    const int wobj = spec.object_width();
    const std::int64_t shift = (static_cast<std::int64_t>(spec.speed) * t) % spec.width;
    int rel = static_cast<int>((x - shift) % spec.width);
    if (rel < 0) rel += spec.width;
    return rel < wobj;
}

// Closed-form per-pixel occupancy from the trajectory geometry: the exact
// count of covering frames divided by the frame count.
inline double synth_expected_occupancy(const SynthSpec& spec, int y, int x) {
    const int rows = spec.object_rows();
    const int top = spec.shape == SynthShape::Bar ? 0 : spec.band_top();
    const int span = spec.shape == SynthShape::Bar ? spec.height : rows;
    if (y < top || y >= top + span) return 0.0;
    // x - speed*t (mod width) < wobj. With g = gcd(speed, width) the shift
    // sequence has period width/g and visits residues congruent to x mod g.
    const int g = std::gcd(spec.speed, spec.width);
    const int period = spec.width / g;
    std::int64_t per_period = 0;
    for (int t = 0; t < period; ++t)
        if (synth_object_covers(spec, t, y, x)) per_period++;
    const std::int64_t full = spec.frame_count / period;
    std::int64_t count = full * per_period;
    for (int t = static_cast<int>(full) * period; t < spec.frame_count; ++t)
        if (synth_object_covers(spec, t, y, x)) count++;
    return static_cast<double>(count) / spec.frame_count;
}

// Pure function of the spec (splitmix64 noise stream, fixed draw order
// frame -> row -> column -> channel).
inline SynthResult synth_generate(const SynthSpec& spec) {
    spec.validate();
    SynthResult out;
    out.true_background = detail::render_background(spec);

    SplitMix64 rng(spec.seed);
    out.sequence.frames.reserve(static_cast<std::size_t>(spec.frame_count));
    out.masks.reserve(static_cast<std::size_t>(spec.frame_count));
    for (int t = 0; t < spec.frame_count; ++t) {
        Image8 frame = out.true_background;
        BinaryMask mask = BinaryMask::zeros(spec.height, spec.width);
        const double ramp =
            spec.frame_count > 1
                ? spec.illumination_amp * (static_cast<double>(t) / (spec.frame_count - 1) - 0.5)
                : 0.0;
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x) {
                const bool fg = synth_object_covers(spec, t, y, x);
                if (fg) {
                    mask.set(y, x, 1);
                    for (int ch = 0; ch < spec.channels; ++ch)
                        frame.at(y, x, ch) = detail::synth_channel_value(spec, spec.object_color, ch);
                }
                for (int ch = 0; ch < spec.channels; ++ch) {
                    double v = frame.at(y, x, ch) + ramp;
                    if (spec.noise_sd > 0) v += spec.noise_sd * rng.next_normal();
                    v = std::floor(v + 0.5);
                    frame.at(y, x, ch) = static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
                }
            }
        out.sequence.frames.push_back(std::move(frame));
        out.masks.push_back(std::move(mask));
    }
    return out;
}

}  // namespace cdnm
