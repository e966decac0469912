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

#ifndef SPIKEFOLD_NORM_HPP_
#define SPIKEFOLD_NORM_HPP_

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "spikefold/errors.hpp"
#include "spikefold/opcount.hpp"
#include "spikefold/tensor.hpp"

namespace spikefold {

// Parameter granularity of a normalization layer. Channel keeps one
// (lambda, beta, mean, var) tuple per channel; element keeps one per
// channel-and-spatial-position. Element granularity is only legal where the
// parameters fold into per-unit thresholds; folding it into shared conv
// weights would break weight sharing.
enum class Granularity : std::uint8_t { channel = 0, element = 1 };

inline const char* granularity_name(Granularity g) {
    return g == Granularity::channel ? "channel" : "element";
}

template <class R>
struct Moments {
    Tensor<R> mean;
    Tensor<R> var;
};

namespace detail {

// Flat [N,C,H,W] index -> normalization group index.
template <class R>
struct GroupMap {
    std::size_t chw = 0, hw = 0, groups = 0, count = 0;
    bool per_element = false;

    GroupMap() = default;
    GroupMap(const Shape& x, Granularity g) {
        if (x.size() != 4)
            throw ShapeError("norm: expected [N,C,H,W] input, got " + shape_str(x));
        const std::size_t n = x[0], c = x[1], h = x[2], w = x[3];
        chw = c * h * w;
        hw = h * w;
        per_element = (g == Granularity::element);
        groups = per_element ? chw : c;
        count = per_element ? n : n * hw;
        if (count == 0) throw ConfigError("norm: empty reduction set");
    }

    std::size_t operator()(std::size_t flat) const {
        const std::size_t r = flat % chw;
        return per_element ? r : r / hw;
    }

    Shape group_shape(const Shape& x) const {
        return per_element ? Shape{x[1], x[2], x[3]} : Shape{x[1]};
    }
};

}  // namespace detail

// Learnable scale/shift plus running statistics for one BN or MPBN layer.
template <class R>
struct NormParams {
    Tensor<R> lambda;
    Tensor<R> beta;
    Tensor<R> running_mean;
    Tensor<R> running_var;
    R eps = R(1e-5);
    R momentum = R(0.1);
    Granularity granularity = Granularity::channel;

    // Identity-at-start: lambda 1, beta 0, running stats (0, 1).
    static NormParams identity(Shape group_shape, Granularity g, R eps = R(1e-5),
                               R momentum = R(0.1)) {
        NormParams p;
        p.lambda = Tensor<R>::full(group_shape, R(1));
        p.beta = Tensor<R>::zeros(group_shape);
        p.running_mean = Tensor<R>::zeros(group_shape);
        p.running_var = Tensor<R>::full(group_shape, R(1));
        p.eps = eps;
        p.momentum = momentum;
        p.granularity = g;
        return p;
    }

    std::size_t groups() const { return lambda.numel(); }

    // eps = 0 is tolerated for algebraic setups with known-positive variance;
    // any place that divides still insists on var + eps > 0.
    void validate() const {
        check_same_shape(lambda, beta, "norm params");
        check_same_shape(lambda, running_mean, "norm params");
        check_same_shape(lambda, running_var, "norm params");
        if (!(eps >= R(0))) throw ConfigError("norm: eps must be non-negative");
        if (!(momentum > R(0) && momentum <= R(1)))
            throw ConfigError("norm: momentum must lie in (0,1]");
        for (R v : running_var.data)
            if (!(v >= R(0))) throw ConfigError("norm: running_var must be non-negative");
    }
};

// Batch moments of x for the layer's granularity: reduction over {N,H,W}
// per channel, or over {N} per element. Statistics joint over time steps
// are obtained by stacking steps along the batch axis before calling this.
template <class R>
Moments<R> batch_moments(const Tensor<R>& x, Granularity g) {
    const std::vector<std::size_t> axes =
        g == Granularity::channel ? std::vector<std::size_t>{0, 2, 3}
                                  : std::vector<std::size_t>{0};
    auto [mean, var] = moments(x, axes);
    return Moments<R>{std::move(mean), std::move(var)};
}

// Pools per-step moments into the moments of the union of the steps
// (equal-sized groups): E[x] averages, E[x^2] reconstructs the variance.
template <class R>
Moments<R> pool_moments(const std::vector<Moments<R>>& steps) {
    if (steps.empty()) throw ConfigError("pool_moments: no step statistics");
    Moments<R> out{Tensor<R>::zeros(steps[0].mean.shape), Tensor<R>::zeros(steps[0].var.shape)};
    const R inv = R(1) / static_cast<R>(steps.size());
    for (const auto& s : steps) {
        check_same_shape(out.mean, s.mean, "pool_moments");
        for (std::size_t i = 0; i < out.mean.numel(); ++i) {
            out.mean[i] += s.mean[i] * inv;
            out.var[i] += (s.var[i] + s.mean[i] * s.mean[i]) * inv;
        }
    }
    for (std::size_t i = 0; i < out.var.numel(); ++i) {
        out.var[i] -= out.mean[i] * out.mean[i];
        if (out.var[i] < R(0)) out.var[i] = R(0);  // rounding guard
    }
    return out;
}

// Saved forward state needed by bn_backward.
template <class R>
struct BnCache {
    Tensor<R> x_hat;
    Tensor<R> inv_std;  // per group, 1/sqrt(var + eps)
    detail::GroupMap<R> map;
};

// Training-mode normalization with caller-supplied batch statistics:
// out = lambda * (x - mean) / sqrt(var + eps) + beta. Pure with respect to
// params; the running-statistics EMA is applied separately, once per
// forward pass, via ema_update.
template <class R>
Tensor<R> bn_forward_train(const Tensor<R>& x, const NormParams<R>& params,
                           const Moments<R>& stats, BnCache<R>* cache = nullptr) {
    detail::GroupMap<R> map(x.shape, params.granularity);
    if (map.groups != params.groups())
        throw ShapeError("bn_forward_train: params cover " + std::to_string(params.groups()) +
                         " groups, input needs " + std::to_string(map.groups));
    check_same_shape(stats.mean, params.lambda, "bn_forward_train stats");
    check_same_shape(stats.var, params.lambda, "bn_forward_train stats");

    Tensor<R> inv_std = Tensor<R>::zeros(stats.var.shape);
    for (std::size_t g = 0; g < inv_std.numel(); ++g) {
        if (!(stats.var[g] + params.eps > R(0)))
            throw NumericError("bn_forward_train: zero variance with zero eps in group " +
                               std::to_string(g));
        inv_std[g] = R(1) / std::sqrt(stats.var[g] + params.eps);
    }

    Tensor<R> out = Tensor<R>::zeros(x.shape);
    Tensor<R> x_hat = Tensor<R>::zeros(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const std::size_t g = map(i);
        const R xh = (x[i] - stats.mean[g]) * inv_std[g];
        x_hat[i] = xh;
        out[i] = params.lambda[g] * xh + params.beta[g];
    }
    if (cache) {
        cache->x_hat = std::move(x_hat);
        cache->inv_std = std::move(inv_std);
        cache->map = map;
    }
    return out;
}

// Exponential moving average of the running statistics.
template <class R>
void ema_update(NormParams<R>& params, const Moments<R>& stats) {
    check_same_shape(stats.mean, params.running_mean, "ema_update");
    const R m = params.momentum;
    for (std::size_t g = 0; g < params.running_mean.numel(); ++g) {
        params.running_mean[g] = (R(1) - m) * params.running_mean[g] + m * stats.mean[g];
        params.running_var[g] = (R(1) - m) * params.running_var[g] + m * stats.var[g];
    }
}

// Inference-mode normalization: a frozen per-group affine map. Precomputes
// scale/shift per group so per-sample results cannot depend on batch
// composition.
template <class R>
Tensor<R> bn_forward_infer(const Tensor<R>& x, const NormParams<R>& params,
                           OpCounters* cost = nullptr) {
    detail::GroupMap<R> map(x.shape, params.granularity);
    if (map.groups != params.groups())
        throw ShapeError("bn_forward_infer: params cover " + std::to_string(params.groups()) +
                         " groups, input needs " + std::to_string(map.groups));

    Tensor<R> sc = Tensor<R>::zeros(params.lambda.shape);
    Tensor<R> sh = Tensor<R>::zeros(params.lambda.shape);
    for (std::size_t g = 0; g < sc.numel(); ++g) {
        if (!(params.running_var[g] + params.eps > R(0)))
            throw NumericError("bn_forward_infer: zero variance with zero eps in group " +
                               std::to_string(g));
        sc[g] = params.lambda[g] / std::sqrt(params.running_var[g] + params.eps);
        sh[g] = params.beta[g] - params.running_mean[g] * sc[g];
    }
    Tensor<R> out = Tensor<R>::zeros(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const std::size_t g = map(i);
        out[i] = sc[g] * x[i] + sh[g];
    }
    if (cost) {
        cost->norm_elements += x.numel();
        cost->elementwise_ops += 2 * x.numel();
    }
    return out;
}

template <class R>
struct BnGrads {
    Tensor<R> x;
    Tensor<R> lambda;
    Tensor<R> beta;
};

// Analytic gradient of bn_forward_train, including the dependence of the
// batch statistics on x:
//   dx = inv_std/m * (m*dxh - sum(dxh) - x_hat*sum(dxh*x_hat))
// with dxh = dy*lambda, sums per group of size m.
template <class R>
BnGrads<R> bn_backward(const Tensor<R>& grad_out, const BnCache<R>& cache,
                       const NormParams<R>& params) {
    if (cache.x_hat.numel() == 0)
        throw StateError("bn_backward: missing training-mode forward cache");
    check_same_shape(grad_out, cache.x_hat, "bn_backward");

    const auto& map = cache.map;
    const std::size_t groups = map.groups;
    const R m = static_cast<R>(map.count);

    BnGrads<R> g{Tensor<R>::zeros(grad_out.shape), Tensor<R>::zeros(params.lambda.shape),
                 Tensor<R>::zeros(params.beta.shape)};
    Tensor<R> sum_dxh = Tensor<R>::zeros({groups});
    Tensor<R> sum_dxh_xh = Tensor<R>::zeros({groups});

    for (std::size_t i = 0; i < grad_out.numel(); ++i) {
        const std::size_t gi = map(i);
        const R dy = grad_out[i];
        const R xh = cache.x_hat[i];
        g.beta[gi] += dy;
        g.lambda[gi] += dy * xh;
        const R dxh = dy * params.lambda[gi];
        sum_dxh[gi] += dxh;
        sum_dxh_xh[gi] += dxh * xh;
    }
    for (std::size_t i = 0; i < grad_out.numel(); ++i) {
        const std::size_t gi = map(i);
        const R dxh = grad_out[i] * params.lambda[gi];
        g.x[i] = cache.inv_std[gi] / m *
                 (m * dxh - sum_dxh[gi] - cache.x_hat[i] * sum_dxh_xh[gi]);
    }
    return g;
}

// MPBN is the same normalization applied to updated membrane potentials
// instead of conv outputs; it reuses bn_forward_train / bn_forward_infer /
// bn_backward verbatim. Only MPBN may use element granularity.

}  // namespace spikefold

#endif  // SPIKEFOLD_NORM_HPP_
