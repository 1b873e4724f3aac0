#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cdnm/common.hpp"

namespace cdnm {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor, rank 1-4. Scalar is float for training/inference
// and double for the gradient-checking path.
template <typename S>
struct Tensor {
    Shape shape;
    std::vector<S> data;

    Tensor() = default;
    Tensor(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
        if (shape.empty() || shape.size() > 4)
            throw ConfigError("tensor rank must be 1-4, got rank " + std::to_string(shape.size()));
        for (int e : shape)
            if (e <= 0) throw ConfigError("tensor extent must be positive in " + shape_str(shape));
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw ConfigError("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape sh) {
        std::int64_t n = shape_numel(sh);
        return Tensor(std::move(sh), std::vector<S>(static_cast<std::size_t>(n), S(0)));
    }

    static Tensor full(Shape sh, S value) {
        std::int64_t n = shape_numel(sh);
        return Tensor(std::move(sh), std::vector<S>(static_cast<std::size_t>(n), value));
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    S* ptr() { return data.data(); }
    const S* ptr() const { return data.data(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename T>
    Tensor<T> cast() const {
        std::vector<T> out(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out[i] = static_cast<T>(data[i]);
        return Tensor<T>(shape, std::move(out));
    }
};

template <typename S>
void require_shape(const Tensor<S>& t, const Shape& want, const std::string& what) {
    if (t.shape != want)
        throw ConfigError(what + ": expected shape " + shape_str(want) + ", got " + shape_str(t.shape));
}

}  // namespace cdnm
