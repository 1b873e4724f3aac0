#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cdnm/common.hpp"
#include "cdnm/network.hpp"

namespace cdnm {

// Weight file layout (all integers little-endian):
//   magic "CDNM"
//   u32 version = 1
//   u32 group count
//   per group: u16 name length, UTF-8 name, u8 tensor count
//   per tensor: u8 rank, rank x u32 extents, extent-product x f32 IEEE-754
inline constexpr char kWeightsMagic[4] = {'C', 'D', 'N', 'M'};
inline constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {

struct ByteWriter {
    std::vector<unsigned char> bytes;

    void raw(const void* p, std::size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u16(std::uint16_t v) {
        bytes.push_back(static_cast<unsigned char>(v & 0xff));
        bytes.push_back(static_cast<unsigned char>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        u32(u);
    }
};

struct ByteReader {
    const unsigned char* p;
    std::size_t size;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        if (pos + n > size) throw FormatError(std::string("weights file truncated reading ") + what, pos);
    }
    void raw(void* out, std::size_t n, const char* what) {
        need(n, what);
        std::memcpy(out, p + pos, n);
        pos += n;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return p[pos++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    float f32(const char* what) {
        std::uint32_t u = u32(what);
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
};

}  // namespace detail

inline std::vector<unsigned char> encode_weights(const WeightsBundle<float>& w) {
    detail::ByteWriter out;
    out.raw(kWeightsMagic, 4);
    out.u32(kWeightsVersion);
    out.u32(static_cast<std::uint32_t>(w.groups.size()));
    for (const auto& g : w.groups) {
        if (g.name.size() > 0xffff) throw ConfigError("weights group name too long: " + g.name);
        out.u16(static_cast<std::uint16_t>(g.name.size()));
        out.raw(g.name.data(), g.name.size());
        out.u8(static_cast<std::uint8_t>(g.tensors.size()));
        for (const auto& t : g.tensors) {
            out.u8(static_cast<std::uint8_t>(t.rank()));
            for (int e : t.shape) out.u32(static_cast<std::uint32_t>(e));
            for (float v : t.data) out.f32(v);
        }
    }
    return out.bytes;
}

inline WeightsBundle<float> decode_weights(const unsigned char* bytes, std::size_t size) {
    detail::ByteReader in{bytes, size};
    char magic[4];
    in.raw(magic, 4, "magic");
    if (std::memcmp(magic, kWeightsMagic, 4) != 0)
        throw FormatError("bad magic (not a weights file)", 0);
    const std::uint32_t version = in.u32("version");
    if (version != kWeightsVersion)
        throw FormatError("unsupported weights version " + std::to_string(version), 4);
    const std::uint32_t ngroups = in.u32("group count");
    WeightsBundle<float> w;
    w.groups.reserve(ngroups);
    for (std::uint32_t gi = 0; gi < ngroups; ++gi) {
        ParamGroup<float> g;
        const std::uint16_t namelen = in.u16("group name length");
        g.name.resize(namelen);
        if (namelen) in.raw(g.name.data(), namelen, "group name");
        const std::uint8_t ntensors = in.u8("tensor count");
        for (std::uint8_t ti = 0; ti < ntensors; ++ti) {
            const std::size_t header_pos = in.pos;
            const std::uint8_t rank = in.u8("tensor rank");
            if (rank < 1 || rank > 4)
                throw FormatError("tensor rank " + std::to_string(rank) + " out of range", header_pos);
            Shape shape(rank);
            std::int64_t numel = 1;
            for (std::uint8_t ri = 0; ri < rank; ++ri) {
                const std::uint32_t e = in.u32("tensor extent");
                if (e == 0 || e > (1u << 28))
                    throw FormatError("tensor extent " + std::to_string(e) + " out of range", header_pos);
                shape[ri] = static_cast<int>(e);
                numel *= e;
            }
            std::vector<float> data(static_cast<std::size_t>(numel));
            for (auto& v : data) v = in.f32("tensor data");
            g.tensors.emplace_back(std::move(shape), std::move(data));
        }
        w.groups.push_back(std::move(g));
    }
    if (in.pos != size) throw FormatError("trailing bytes after weights payload", in.pos);
    return w;
}

// Atomic write: temp file in the target directory, then rename.
inline void write_file_atomic(const std::string& path, const void* data, std::size_t size) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!out) throw DataError("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, target);
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

template <typename S>
void save_weights(const NetworkGraph<S>& net, const std::string& path) {
    WeightsBundle<float> w;
    if constexpr (std::is_same_v<S, float>)
        w = net.weights;
    else
        w = net.weights.template cast<float>();
    auto bytes = encode_weights(w);
    write_file_atomic(path, bytes.data(), bytes.size());
}

inline WeightsBundle<float> load_weights(const std::string& path) {
    auto bytes = read_file_bytes(path);
    return decode_weights(bytes.data(), bytes.size());
}

// Installs a loaded bundle into a built network, validating group names and
// tensor shapes against the graph.
template <typename S>
void load_weights_into(NetworkGraph<S>& net, const std::string& path) {
    WeightsBundle<float> w = load_weights(path);
    if (w.groups.size() != net.weights.groups.size())
        throw DataError("weights file '" + path + "' has " + std::to_string(w.groups.size()) +
                        " groups, network expects " + std::to_string(net.weights.groups.size()));
    for (std::size_t gi = 0; gi < w.groups.size(); ++gi) {
        const auto& got = w.groups[gi];
        const auto& want = net.weights.groups[gi];
        if (got.name != want.name)
            throw DataError("weights file '" + path + "' group " + std::to_string(gi) + " is '" +
                            got.name + "', network expects '" + want.name + "'");
        if (got.tensors.size() != want.tensors.size())
            throw DataError("weights group '" + got.name + "' tensor count mismatch");
        for (std::size_t ti = 0; ti < got.tensors.size(); ++ti)
            if (got.tensors[ti].shape != want.tensors[ti].shape)
                throw DataError("weights group '" + got.name + "' tensor " + std::to_string(ti) +
                                " shape " + shape_str(got.tensors[ti].shape) + ", network expects " +
                                shape_str(want.tensors[ti].shape));
    }
    if constexpr (std::is_same_v<S, float>)
        net.weights = std::move(w);
    else
        net.weights = w.template cast<S>();
    net.touch();
}

}  // namespace cdnm
