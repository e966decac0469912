// Copyright 2026 The Spikefold Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SPIKEFOLD_NEURON_HPP_
#define SPIKEFOLD_NEURON_HPP_

#include <cmath>
#include <string>
#include <utility>

#include "spikefold/errors.hpp"
#include "spikefold/tensor.hpp"

namespace spikefold {

// Leaky integrate-and-fire hyperparameters. tau leaks the carried membrane
// potential each step; v_th is the baseline firing threshold shared by all
// units until a normalization fold diversifies it.
struct LifConfig {
    double tau = 0.25;
    double v_th = 0.5;

    void validate() const {
        if (!(tau > 0.0 && tau < 1.0))
            throw ConfigError("lif: tau must lie in (0,1), got " + std::to_string(tau));
        if (!(v_th > 0.0) || !std::isfinite(v_th))
            throw ConfigError("lif: v_th must be positive and finite");
    }
};

// Per-unit firing rule: fire when direction*u > direction*threshold.
// direction is -1 for units whose normalization scale was negative at fold
// time (the comparison flips when dividing the inequality by a negative
// scale); +1 otherwise. Threshold shapes accepted against an [N,C,H,W]
// membrane: scalar {1}, per-channel {C}, per-element {C,H,W}.
template <class R>
struct FiringRule {
    Tensor<R> threshold;
    Tensor<R> direction;

    static FiringRule uniform(R v_th) {
        return FiringRule{Tensor<R>::scalar(v_th), Tensor<R>::scalar(R(1))};
    }

    void validate() const {
        check_same_shape(threshold, direction, "firing rule");
        require_finite(threshold, "firing rule threshold");
        for (std::size_t i = 0; i < direction.numel(); ++i)
            if (direction[i] != R(1) && direction[i] != R(-1))
                throw ConfigError("firing rule: direction entries must be +1 or -1");
    }
};

namespace detail {

// Maps membrane index -> rule index for the supported threshold shapes.
template <class R>
struct RuleIndexer {
    std::size_t chw = 0, hw = 0;
    bool per_channel = false, per_element = false;

    RuleIndexer(const Shape& membrane, const Shape& rule) {
        if (membrane.size() != 4)
            throw ShapeError("firing: membrane must be [N,C,H,W], got " + shape_str(membrane));
        const std::size_t c = membrane[1], h = membrane[2], w = membrane[3];
        chw = c * h * w;
        hw = h * w;
        if (rule == Shape{1}) {
            // scalar
        } else if (rule == Shape{c}) {
            per_channel = true;
        } else if (rule == Shape{c, h, w}) {
            per_element = true;
        } else {
            throw ShapeError("firing: rule shape " + shape_str(rule) +
                             " not broadcastable to membrane " + shape_str(membrane));
        }
    }

    std::size_t operator()(std::size_t flat) const {
        if (per_element) return flat % chw;
        if (per_channel) return (flat % chw) / hw;
        return 0;
    }
};

}  // namespace detail

// u_pre = tau * state_u + c. The first step passes state_u = 0.
template <class R>
Tensor<R> mp_update(const Tensor<R>& state_u, const Tensor<R>& c, R tau) {
    check_same_shape(state_u, c, "mp_update");
    Tensor<R> out = c;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += tau * state_u[i];
    return out;
}

// Binary spike map: 1 where direction*u exceeds direction*threshold
// strictly, 0 otherwise (ties do not fire).
template <class R>
Tensor<R> spike_indicator(const Tensor<R>& u, const FiringRule<R>& rule) {
    detail::RuleIndexer<R> index(u.shape, rule.threshold.shape);
    Tensor<R> o = Tensor<R>::zeros(u.shape);
    for (std::size_t i = 0; i < u.numel(); ++i) {
        const std::size_t g = index(i);
        const R t = rule.threshold[g];
        const bool fired = rule.direction[g] > R(0) ? (u[i] > t) : (u[i] < t);
        o[i] = fired ? R(1) : R(0);
    }
    return o;
}

// Hard reset: zero the membrane wherever a spike occurred.
template <class R>
Tensor<R> apply_reset(const Tensor<R>& u_pre, const Tensor<R>& spikes) {
    check_same_shape(u_pre, spikes, "apply_reset");
    Tensor<R> u = u_pre;
    for (std::size_t i = 0; i < u.numel(); ++i) u[i] *= (R(1) - spikes[i]);
    return u;
}

template <class R>
std::pair<Tensor<R>, Tensor<R>> fire_reset(const Tensor<R>& u_pre, const FiringRule<R>& rule) {
    Tensor<R> o = spike_indicator(u_pre, rule);
    Tensor<R> u_next = apply_reset(u_pre, o);
    return {std::move(o), std::move(u_next)};
}

// Rectangular straight-through surrogate: d(spike)/d(input) is taken as 1
// on [0,1] (both ends inclusive) and 0 elsewhere. Evaluated on the firing
// function's literal input, i.e. the normalized membrane when MPBN is
// active. The window is not re-centered for folded thresholds: training
// always runs the normalized path, so folded rules never reach a backward
// pass.
template <class R>
Tensor<R> surrogate_grad(const Tensor<R>& u) {
    Tensor<R> g = Tensor<R>::zeros(u.shape);
    for (std::size_t i = 0; i < u.numel(); ++i)
        g[i] = (u[i] >= R(0) && u[i] <= R(1)) ? R(1) : R(0);
    return g;
}

}  // namespace spikefold

#endif  // SPIKEFOLD_NEURON_HPP_
