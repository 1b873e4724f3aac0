#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "cdnm/common.hpp"

namespace cdnm {

enum class Activation : std::uint8_t { Identity, ReLU, HardSigmoid, Softmax };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::ReLU: return "relu";
        case Activation::HardSigmoid: return "hard_sigmoid";
        case Activation::Softmax: return "softmax";
    }
    return "?";
}

// hard_sigmoid(y) = clamp(0.2*y + 0.5, 0, 1). Slope 0.2, live region (-2.5, 2.5).
template <typename S>
inline S hard_sigmoid(S y) {
    S v = S(0.2) * y + S(0.5);
    return v < S(0) ? S(0) : (v > S(1) ? S(1) : v);
}

// Derivative is 0.2 strictly inside (-2.5, 2.5) and 0 outside (0 at the kinks).
template <typename S>
inline S hard_sigmoid_grad(S y) {
    return (y > S(-2.5) && y < S(2.5)) ? S(0.2) : S(0);
}

template <typename S>
inline S relu(S y) {
    return y > S(0) ? y : S(0);
}

template <typename S>
inline S relu_grad(S y) {
    return y > S(0) ? S(1) : S(0);
}

// Softmax over y[0..k), written to out[0..k). Max-subtraction keeps the
// exponentials in range for any finite input.
template <typename S>
inline void softmax(const S* y, S* out, int k) {
    if (k < 1) throw ConfigError("softmax needs at least one input");
    S m = y[0];
    for (int i = 1; i < k; ++i) m = std::max(m, y[i]);
    S sum = S(0);
    for (int i = 0; i < k; ++i) {
        out[i] = std::exp(y[i] - m);
        sum += out[i];
    }
    for (int i = 0; i < k; ++i) out[i] /= sum;
}

// Backward through softmax: given p = softmax(y) and dL/dp, produce dL/dy.
// dL/dy_i = p_i * (dL/dp_i - sum_j dL/dp_j * p_j).
template <typename S>
inline void softmax_backward(const S* p, const S* d_post, S* d_pre, int k) {
    S dot = S(0);
    for (int j = 0; j < k; ++j) dot += d_post[j] * p[j];
    for (int i = 0; i < k; ++i) d_pre[i] = p[i] * (d_post[i] - dot);
}

}  // namespace cdnm
