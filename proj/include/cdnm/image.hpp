#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdnm/common.hpp"
#include "cdnm/tensor.hpp"

namespace cdnm {

// 8-bit image, row-major HWC, c = 1 or 3.
struct Image8 {
    int h = 0, w = 0, c = 0;
    std::vector<std::uint8_t> data;

    static Image8 filled(int h, int w, int c, std::uint8_t value) {
        Image8 im;
        im.h = h;
        im.w = w;
        im.c = c;
        im.data.assign(static_cast<std::size_t>(h) * w * c, value);
        return im;
    }

    std::uint8_t& at(int y, int x, int ch) {
        return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    std::uint8_t at(int y, int x, int ch) const {
        return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }

    bool same_extents(const Image8& o) const { return h == o.h && w == o.w && c == o.c; }
};

enum class Label : std::uint8_t { Background = 0, Foreground = 1, Ignore = 2 };

// Per-pixel {BG, FG, IGNORE} labels.
struct LabelMask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;

    static LabelMask filled(int h, int w, Label l) {
        LabelMask m;
        m.h = h;
        m.w = w;
        m.v.assign(static_cast<std::size_t>(h) * w, static_cast<std::uint8_t>(l));
        return m;
    }
    Label at(int y, int x) const { return static_cast<Label>(v[static_cast<std::size_t>(y) * w + x]); }
    void set(int y, int x, Label l) { v[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint8_t>(l); }
};

// Binary foreground mask, values in {0,1}.
struct BinaryMask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;

    static BinaryMask zeros(int h, int w) {
        BinaryMask m;
        m.h = h;
        m.w = w;
        m.v.assign(static_cast<std::size_t>(h) * w, 0);
        return m;
    }
    std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    void set(int y, int x, std::uint8_t b) { v[static_cast<std::size_t>(y) * w + x] = b; }
};

// Normalizes an 8-bit image to a [H,W,c] tensor in [0,1].
template <typename S>
Tensor<S> image_to_tensor(const Image8& im) {
    Tensor<S> t = Tensor<S>::zeros({im.h, im.w, im.c});
    for (std::size_t i = 0; i < im.data.size(); ++i)
        t.data[i] = static_cast<S>(im.data[i]) / S(255);
    return t;
}

// Denormalizes with half-up rounding: round(v*255 + 0.5 down), clamped.
template <typename S>
Image8 tensor_to_image(const Tensor<S>& t) {
    if (t.rank() != 3) throw UsageError("tensor_to_image: expected [H,W,c]");
    Image8 im;
    im.h = t.shape[0];
    im.w = t.shape[1];
    im.c = t.shape[2];
    im.data.resize(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        double v = std::floor(static_cast<double>(t.data[i]) * 255.0 + 0.5);
        im.data[i] = static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
    }
    return im;
}

// BT.601 luma from 8-bit samples; the single luma convention used everywhere.
inline double luma_at(const Image8& im, int y, int x) {
    if (im.c == 1) return static_cast<double>(im.at(y, x, 0));
    return 0.299 * im.at(y, x, 0) + 0.587 * im.at(y, x, 1) + 0.114 * im.at(y, x, 2);
}

}  // namespace cdnm
