#pragma once

#include <cctype>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "cdnm/common.hpp"
#include "cdnm/image.hpp"
#include "cdnm/png_io.hpp"

namespace cdnm {

// Binary PGM (P5) and PPM (P6), maxval 255 only.

namespace detail {

struct PnmHeader {
    int magic = 0;  // 5 or 6
    int w = 0, h = 0, maxval = 0;
    std::size_t data_offset = 0;
};

inline PnmHeader parse_pnm_header(const unsigned char* bytes, std::size_t size) {
    PnmHeader hd;
    std::size_t pos = 0;
    if (size < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw FormatError("not a binary PGM/PPM file", 0);
    hd.magic = bytes[1] - '0';
    pos = 2;
    auto next_int = [&](const char* what) {
        // whitespace and '#' comments separate header fields
        for (;;) {
            while (pos < size && std::isspace(bytes[pos])) pos++;
            if (pos < size && bytes[pos] == '#') {
                while (pos < size && bytes[pos] != '\n') pos++;
                continue;
            }
            break;
        }
        if (pos >= size || !std::isdigit(bytes[pos]))
            throw FormatError(std::string("expected integer for ") + what, pos);
        int v = 0;
        while (pos < size && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > (1 << 28)) throw FormatError(std::string(what) + " out of range", pos);
            pos++;
        }
        return v;
    };
    hd.w = next_int("width");
    hd.h = next_int("height");
    hd.maxval = next_int("maxval");
    if (pos >= size || !std::isspace(bytes[pos]))
        throw FormatError("missing whitespace after maxval", pos);
    pos++;  // exactly one whitespace byte before the raster
    hd.data_offset = pos;
    if (hd.w < 1 || hd.h < 1) throw FormatError("bad image extents", 2);
    if (hd.maxval != 255) throw FormatError("unsupported maxval (need 255)", 2);
    return hd;
}

}  // namespace detail

inline Image8 decode_pnm(const unsigned char* bytes, std::size_t size) {
    detail::PnmHeader hd = detail::parse_pnm_header(bytes, size);
    const int c = hd.magic == 5 ? 1 : 3;
    const std::size_t need = static_cast<std::size_t>(hd.w) * hd.h * c;
    if (size - hd.data_offset < need)
        throw FormatError("truncated pixel data", size);
    Image8 im;
    im.h = hd.h;
    im.w = hd.w;
    im.c = c;
    im.data.assign(bytes + hd.data_offset, bytes + hd.data_offset + need);
    return im;
}

inline std::vector<unsigned char> encode_pnm(const Image8& im) {
    if (im.c != 1 && im.c != 3) throw UsageError("encode_pnm: only gray or RGB images");
    std::string header = std::string(im.c == 1 ? "P5" : "P6") + "\n" + std::to_string(im.w) + " " +
                         std::to_string(im.h) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.insert(out.end(), im.data.begin(), im.data.end());
    return out;
}

inline void write_pnm(const Image8& im, const std::string& path) {
    auto bytes = encode_pnm(im);
    write_file_atomic(path, bytes.data(), bytes.size());
}

inline Image8 read_pnm(const std::string& path) {
    auto bytes = read_file_bytes(path);
    try {
        return decode_pnm(bytes.data(), bytes.size());
    } catch (const FormatError& e) {
        throw DataError("'" + path + "': " + e.what());
    }
}

// Dispatch on magic bytes: PNG or binary PNM. Anything else is an
// unsupported codec, reported with the file name.
inline Image8 read_image(const std::string& path) {
    auto bytes = read_file_bytes(path);
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0) {
        try {
            return decode_png(bytes.data(), bytes.size());
        } catch (const FormatError& e) {
            throw DataError("'" + path + "': " + e.what());
        }
    }
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
        try {
            return decode_pnm(bytes.data(), bytes.size());
        } catch (const FormatError& e) {
            throw DataError("'" + path + "': " + e.what());
        }
    }
    throw DataError("'" + path + "': unsupported codec (PNG and binary PPM/PGM only)");
}

}  // namespace cdnm
