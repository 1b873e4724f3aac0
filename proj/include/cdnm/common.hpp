#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cdnm {

// Error taxonomy. The CLI maps these onto exit codes:
// usage/configuration -> 1, data/format -> 2, numeric -> 3.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Bad network/run configuration (shape mismatches, invalid hyperparameters).
struct ConfigError : UsageError {
    explicit ConfigError(const std::string& msg) : UsageError(msg) {}
};

struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Malformed file content; carries the byte offset at which parsing failed.
struct FormatError : DataError {
    FormatError(const std::string& msg, std::uint64_t offset)
        : DataError(msg + " (byte offset " + std::to_string(offset) + ")"), byte_offset(offset) {}
    std::uint64_t byte_offset = 0;
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// splitmix64: the project-wide PRNG. Bit-exact across platforms.
struct SplitMix64 {
    std::uint64_t state = 0;

    explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double next_range(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller. Consumes two draws per pair.
    double next_normal() {
        double u1 = 0.0;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        double u2 = next_double();
        constexpr double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }
};

// In-place Fisher-Yates shuffle driven by splitmix64.
template <typename T>
void shuffle(std::vector<T>& v, SplitMix64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(v[i - 1], v[j]);
    }
}

// Runs fn(chunk_index, begin, end) over [0, n) in fixed-size chunks.
// The chunk grid depends only on n and chunk_size, never on the thread
// count, so per-chunk results combined in chunk order are bit-identical
// for any number of workers.
template <typename Fn>
void parallel_chunks(std::int64_t n, std::int64_t chunk_size, int threads, Fn&& fn) {
    if (n <= 0) return;
    if (chunk_size <= 0) chunk_size = n;
    const std::int64_t num_chunks = (n + chunk_size - 1) / chunk_size;
    if (threads <= 1 || num_chunks == 1) {
        for (std::int64_t ci = 0; ci < num_chunks; ++ci) {
            std::int64_t b = ci * chunk_size;
            fn(ci, b, std::min(n, b + chunk_size));
        }
        return;
    }
    std::vector<std::thread> pool;
    const int workers = static_cast<int>(std::min<std::int64_t>(threads, num_chunks));
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (std::int64_t ci = w; ci < num_chunks; ci += workers) {
                std::int64_t b = ci * chunk_size;
                fn(ci, b, std::min(n, b + chunk_size));
            }
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace cdnm
