#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cdnm/common.hpp"
#include "cdnm/network.hpp"

namespace cdnm {

// Central finite differences of a scalar loss over every weight coordinate,
// evaluated in 64-bit arithmetic: (L(w+h) - L(w-h)) / 2h.
// The loss callable receives the perturbed weights by const reference.
template <typename LossFn>
WeightsBundle<double> finite_diff_grad(LossFn&& loss_fn, WeightsBundle<double>& weights,
                                       double h) {
    if (h <= 0) throw ConfigError("finite_diff_grad: step must be positive");
    WeightsBundle<double> grads = weights.zeros_like();
    for (std::size_t gi = 0; gi < weights.groups.size(); ++gi) {
        for (std::size_t ti = 0; ti < weights.groups[gi].tensors.size(); ++ti) {
            auto& w = weights.groups[gi].tensors[ti];
            auto& gout = grads.groups[gi].tensors[ti];
            for (std::size_t i = 0; i < w.data.size(); ++i) {
                const double keep = w.data[i];
                w.data[i] = keep + h;
                const double lp = loss_fn(const_cast<const WeightsBundle<double>&>(weights));
                w.data[i] = keep - h;
                const double lm = loss_fn(const_cast<const WeightsBundle<double>&>(weights));
                w.data[i] = keep;
                gout.data[i] = (lp - lm) / (2.0 * h);
            }
        }
    }
    return grads;
}

// FNV-1a accumulator for gate signatures.
struct GateHash {
    std::uint64_t state = 1469598103934665603ULL;

    void byte(std::uint8_t b) {
        state ^= b;
        state *= 1099511628211ULL;
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) byte(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    }
};

// Signature of every piecewise-linear decision taken during a forward pass:
// ReLU signs, hard-sigmoid regions, pooling argmax winners. Two evaluations
// with equal signatures lie on the same smooth piece of the network function.
template <typename S>
std::uint64_t gate_signature(const NetworkGraph<S>& net, const ForwardCache<S>& cache) {
    GateHash h;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& spec = net.layers[li];
        const auto& e = cache.entries[li];
        if (spec.activation == Activation::ReLU) {
            for (S v : e.pre.data) h.byte(v > S(0) ? 1 : 0);
        } else if (spec.activation == Activation::HardSigmoid) {
            for (S v : e.pre.data) h.byte(v <= S(-2.5) ? 0 : (v >= S(2.5) ? 2 : 1));
        }
        if (spec.kind == LayerKind::MaxPool)
            for (std::int32_t a : e.argmax) h.u32(static_cast<std::uint32_t>(a));
    }
    return h.state;
}

// Loss adapter for network-level gradient checks: maps the network output to
// a scalar loss, its gradient, and a gate signature covering the loss's own
// piecewise decisions (head saturations, probability clamps, density floors).
struct LossEval {
    double loss = 0.0;
    Tensor<double> d_output;
    std::uint64_t gate_hash = 0;
};

using OutputLossFn = std::function<LossEval(const Tensor<double>&)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::int64_t compared = 0;
    std::int64_t excluded = 0;  // perturbation crossed a kink; FD invalid there
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::string worst_coord;

    bool passes(double tol) const { return compared > 0 && max_rel_err <= tol; }
};

// Compares analytic backward() gradients against central finite differences
// of loss_fn composed with forward(), sampling shuffled weight coordinates
// until target_coords comparisons land (0 = every coordinate). A coordinate
// is excluded when its perturbed evaluations fall on different smooth pieces
// (a ReLU, hard-sigmoid, pooling or loss gate flips), since a central
// difference across a kink estimates nothing; exclusions do not count
// towards the target.
inline GradCheckReport check_network_gradients(NetworkGraph<double>& net,
                                               const Tensor<double>& input,
                                               const OutputLossFn& loss_fn, double h,
                                               std::int64_t target_coords, std::uint64_t seed) {
    GradCheckReport rep;

    ForwardCache<double> cache = forward(net, input);
    LossEval nominal = loss_fn(cache.output());
    WeightsBundle<double> analytic;
    backward(net, cache, nominal.d_output, analytic);

    struct Coord {
        std::size_t gi, ti, i;
    };
    std::vector<Coord> coords;
    for (std::size_t gi = 0; gi < net.weights.groups.size(); ++gi)
        for (std::size_t ti = 0; ti < net.weights.groups[gi].tensors.size(); ++ti)
            for (std::size_t i = 0; i < net.weights.groups[gi].tensors[ti].data.size(); ++i)
                coords.push_back({gi, ti, i});
    SplitMix64 rng(seed);
    shuffle(coords, rng);
    if (max_coords > 0 && static_cast<std::int64_t>(coords.size()) > max_coords)
        coords.resize(static_cast<std::size_t>(max_coords));

    auto eval = [&](std::uint64_t& gates) {
        ForwardCache<double> c = forward(net, input);
        LossEval ev = loss_fn(c.output());
        GateHash gh;
        gh.state = gate_signature(net, c);
        gh.u32(static_cast<std::uint32_t>(ev.gate_hash & 0xffffffffu));
        gh.u32(static_cast<std::uint32_t>(ev.gate_hash >> 32));
        gates = gh.state;
        return ev.loss;
    };

    for (const Coord& c : coords) {
        auto& w = net.weights.groups[c.gi].tensors[c.ti].data[c.i];
        const double keep = w;
        std::uint64_t gates_p = 0, gates_m = 0, gates_hp = 0, gates_hm = 0;
        w = keep + h;
        const double lp = eval(gates_p);
        w = keep - h;
        const double lm = eval(gates_m);
        w = keep + 0.5 * h;
        const double lhp = eval(gates_hp);
        w = keep - 0.5 * h;
        const double lhm = eval(gates_hm);
        w = keep;
        if (gates_p != gates_m || gates_p != gates_hp || gates_p != gates_hm) {
            rep.excluded++;
            continue;
        }
        // Richardson-extrapolated central difference: cancels the h^2
        // truncation term, which the normalization layers otherwise push
        // above the comparison tolerance.
        const double d_full = (lp - lm) / (2.0 * h);
        const double d_half = (lhp - lhm) / h;
        const double fd = (4.0 * d_half - d_full) / 3.0;
        const double an = analytic.groups[c.gi].tensors[c.ti].data[c.i];
        // Denominator floored at the central-difference noise scale
        // (machine epsilon times loss magnitude over 2h), so exact-zero
        // directions (e.g. shifts normalized away downstream) compare their
        // roundoff against it instead of against each other.
        const double rel =
            std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-4});
        rep.compared++;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_analytic = an;
            rep.worst_numeric = fd;
            rep.worst_coord = net.weights.groups[c.gi].name + "[" + std::to_string(c.ti) + "][" +
                              std::to_string(c.i) + "]";
        }
    }
    return rep;
}

}  // namespace cdnm
