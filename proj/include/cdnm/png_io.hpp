#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "cdnm/common.hpp"
#include "cdnm/image.hpp"
#include "cdnm/weights_io.hpp"  // read_file_bytes / write_file_atomic

namespace cdnm {

// Minimal PNG support: 8-bit, non-interlaced, gray / RGB output (alpha
// dropped on load), always written with filter type 0 and one IDAT chunk.
// The DEFLATE stream is handled by zlib; the container is parsed here.

namespace detail {

inline void be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>(v & 0xff));
}

inline std::uint32_t read_be32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void png_chunk(std::vector<unsigned char>& out, const char type[4],
                      const unsigned char* data, std::size_t len) {
    be32(out, static_cast<std::uint32_t>(len));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    if (len) out.insert(out.end(), data, data + len);
    std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, out.data() + start, static_cast<uInt>(4 + len)));
    be32(out, crc);
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

inline constexpr unsigned char kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

inline std::vector<unsigned char> encode_png(const Image8& im) {
    if (im.c != 1 && im.c != 3) throw UsageError("encode_png: only gray or RGB images");
    if (im.h < 1 || im.w < 1) throw UsageError("encode_png: empty image");
    std::vector<unsigned char> out(kPngSignature, kPngSignature + 8);

    unsigned char ihdr[13];
    ihdr[0] = static_cast<unsigned char>((im.w >> 24) & 0xff);
    ihdr[1] = static_cast<unsigned char>((im.w >> 16) & 0xff);
    ihdr[2] = static_cast<unsigned char>((im.w >> 8) & 0xff);
    ihdr[3] = static_cast<unsigned char>(im.w & 0xff);
    ihdr[4] = static_cast<unsigned char>((im.h >> 24) & 0xff);
    ihdr[5] = static_cast<unsigned char>((im.h >> 16) & 0xff);
    ihdr[6] = static_cast<unsigned char>((im.h >> 8) & 0xff);
    ihdr[7] = static_cast<unsigned char>(im.h & 0xff);
    ihdr[8] = 8;                                      // bit depth
    ihdr[9] = im.c == 1 ? 0 : 2;                      // color type
    ihdr[10] = 0;                                     // compression
    ihdr[11] = 0;                                     // filter method
    ihdr[12] = 0;                                     // no interlace
    detail::png_chunk(out, "IHDR", ihdr, 13);

    // Raw scanlines, filter byte 0 per row.
    const std::size_t stride = static_cast<std::size_t>(im.w) * im.c;
    std::vector<unsigned char> raw((stride + 1) * static_cast<std::size_t>(im.h));
    for (int y = 0; y < im.h; ++y) {
        raw[static_cast<std::size_t>(y) * (stride + 1)] = 0;
        std::memcpy(raw.data() + static_cast<std::size_t>(y) * (stride + 1) + 1,
                    im.data.data() + static_cast<std::size_t>(y) * stride, stride);
    }
    uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> compressed(bound);
    if (::compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw NumericError("encode_png: deflate failed");
    compressed.resize(bound);
    detail::png_chunk(out, "IDAT", compressed.data(), compressed.size());
    detail::png_chunk(out, "IEND", nullptr, 0);
    return out;
}

inline Image8 decode_png(const unsigned char* bytes, std::size_t size) {
    if (size < 8 || std::memcmp(bytes, kPngSignature, 8) != 0)
        throw FormatError("not a PNG file (bad signature)", 0);
    std::size_t pos = 8;
    int width = 0, height = 0, color_type = -1, channels = 0;
    bool seen_ihdr = false, seen_iend = false;
    std::vector<unsigned char> idat;

    while (pos < size) {
        if (pos + 8 > size) throw FormatError("truncated chunk header", pos);
        const std::uint32_t len = detail::read_be32(bytes + pos);
        char type[5] = {0};
        std::memcpy(type, bytes + pos + 4, 4);
        if (pos + 12 + len > size) throw FormatError("truncated chunk payload", pos);
        const unsigned char* payload = bytes + pos + 8;
        const std::uint32_t want_crc = detail::read_be32(payload + len);
        const std::uint32_t got_crc = static_cast<std::uint32_t>(
            ::crc32(0L, bytes + pos + 4, static_cast<uInt>(4 + len)));
        if (want_crc != got_crc) throw FormatError("chunk CRC mismatch", pos + 8 + len);

        if (std::strcmp(type, "IHDR") == 0) {
            if (len != 13) throw FormatError("bad IHDR length", pos);
            width = static_cast<int>(detail::read_be32(payload));
            height = static_cast<int>(detail::read_be32(payload + 4));
            const int bit_depth = payload[8];
            color_type = payload[9];
            const int interlace = payload[12];
            if (width <= 0 || height <= 0) throw FormatError("bad image extents", pos + 8);
            if (bit_depth != 8) throw FormatError("unsupported bit depth (need 8)", pos + 16);
            if (interlace != 0) throw FormatError("interlaced PNG not supported", pos + 20);
            switch (color_type) {
                case 0: channels = 1; break;
                case 2: channels = 3; break;
                case 4: channels = 2; break;
                case 6: channels = 4; break;
                default:
                    throw FormatError("unsupported color type " + std::to_string(color_type),
                                      pos + 17);
            }
            seen_ihdr = true;
        } else if (std::strcmp(type, "IDAT") == 0) {
            if (!seen_ihdr) throw FormatError("IDAT before IHDR", pos);
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::strcmp(type, "IEND") == 0) {
            seen_iend = true;
            break;
        }
        // ancillary chunks are skipped
        pos += 12 + len;
    }
    if (!seen_ihdr) throw FormatError("missing IHDR", size);
    if (!seen_iend) throw FormatError("missing IEND", size);
    if (idat.empty()) throw FormatError("missing IDAT", size);

    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    std::vector<unsigned char> raw((stride + 1) * static_cast<std::size_t>(height));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    const int zrc = ::uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || raw_len != raw.size())
        throw FormatError("inflate failed or wrong pixel data size", 8);

    // Undo per-scanline filters in place.
    std::vector<unsigned char> prev(stride, 0);
    Image8 im;
    im.h = height;
    im.w = width;
    im.c = channels == 2 ? 1 : (channels == 4 ? 3 : channels);
    im.data.resize(static_cast<std::size_t>(height) * width * im.c);
    const int bpp = channels;
    std::vector<unsigned char> cur(stride);
    for (int y = 0; y < height; ++y) {
        const unsigned char* row = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
        const int filter = row[0];
        const unsigned char* src = row + 1;
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<std::size_t>(bpp) ? cur[i - static_cast<std::size_t>(bpp)] : 0;
            const int b = prev[i];
            const int c = i >= static_cast<std::size_t>(bpp) ? prev[i - static_cast<std::size_t>(bpp)] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += detail::paeth(a, b, c); break;
                default: throw FormatError("bad scanline filter " + std::to_string(filter),
                                           8);
            }
            cur[i] = static_cast<unsigned char>(v & 0xff);
        }
        // Drop alpha if present.
        for (int x = 0; x < width; ++x)
            for (int ch = 0; ch < im.c; ++ch)
                im.data[(static_cast<std::size_t>(y) * width + x) * im.c + ch] =
                    cur[static_cast<std::size_t>(x) * channels + ch];
        prev = cur;
    }
    return im;
}

inline void write_png(const Image8& im, const std::string& path) {
    auto bytes = encode_png(im);
    write_file_atomic(path, bytes.data(), bytes.size());
}

inline Image8 read_png(const std::string& path) {
    auto bytes = read_file_bytes(path);
    try {
        return decode_png(bytes.data(), bytes.size());
    } catch (const FormatError& e) {
        throw DataError("'" + path + "': " + e.what());
    }
}

}  // namespace cdnm
