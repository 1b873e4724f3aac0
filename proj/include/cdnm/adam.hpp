#pragma once

#include <cmath>
#include <cstdint>

#include "cdnm/common.hpp"
#include "cdnm/network.hpp"

namespace cdnm {

// Adam optimizer state: one pair of moment bundles shaped like the weights.
template <typename S>
struct AdamState {
    WeightsBundle<S> m;  // first moment, zero-initialized
    WeightsBundle<S> v;  // second moment, zero-initialized
    std::int64_t timestep = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState for_weights(const WeightsBundle<S>& w) {
        AdamState st;
        st.m = w.zeros_like();
        st.v = w.zeros_like();
        return st;
    }
};

// One Adam update with bias correction. Gradients must be finite; a non-finite
// gradient aborts naming the offending layer group.
template <typename S>
void adam_step(NetworkGraph<S>& net, const WeightsBundle<S>& grads, AdamState<S>& state,
               double lr) {
    if (lr <= 0) throw ConfigError("adam_step: learning rate must be positive");
    if (grads.groups.size() != net.weights.groups.size())
        throw UsageError("adam_step: gradient structure does not match weights");
    state.timestep += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.timestep));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.timestep));
    for (std::size_t gi = 0; gi < grads.groups.size(); ++gi) {
        const auto& gg = grads.groups[gi];
        auto& wg = net.weights.groups[gi];
        auto& mg = state.m.groups[gi];
        auto& vg = state.v.groups[gi];
        for (std::size_t ti = 0; ti < gg.tensors.size(); ++ti) {
            const auto& g = gg.tensors[ti];
            auto& w = wg.tensors[ti];
            auto& m = mg.tensors[ti];
            auto& v = vg.tensors[ti];
            const S sb1 = static_cast<S>(b1), sb2 = static_cast<S>(b2);
            const S sbc1 = static_cast<S>(bc1), sbc2 = static_cast<S>(bc2);
            const S slr = static_cast<S>(lr), seps = static_cast<S>(state.epsilon);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                const S gv = g.data[i];
                if (!std::isfinite(static_cast<double>(gv)))
                    throw NumericError("adam_step: non-finite gradient in layer group '" +
                                       gg.name + "'");
                const S mv = sb1 * m.data[i] + (S(1) - sb1) * gv;
                const S vv = sb2 * v.data[i] + (S(1) - sb2) * gv * gv;
                m.data[i] = mv;
                v.data[i] = vv;
                const S mhat = mv / sbc1;
                const S vhat = vv / sbc2;
                w.data[i] -= slr * mhat / (std::sqrt(vhat) + seps);
            }
        }
    }
    net.touch();
}

}  // namespace cdnm
