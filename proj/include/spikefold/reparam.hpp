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

#ifndef SPIKEFOLD_REPARAM_HPP_
#define SPIKEFOLD_REPARAM_HPP_

#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spikefold/errors.hpp"
#include "spikefold/network.hpp"
#include "spikefold/neuron.hpp"
#include "spikefold/norm.hpp"

namespace spikefold {

// A scale this close to zero makes the normalized firing decision constant
// in the membrane potential; no finite threshold can reproduce it.
inline constexpr double kDegenerateScaleTol = 1e-12;

// Audit record for one folded layer.
struct FoldReport {
    std::size_t layer_id = 0;
    Granularity granularity = Granularity::channel;
    double min_threshold = 0.0;
    double max_threshold = 0.0;
    std::size_t unit_count = 0;
    std::size_t flipped_unit_count = 0;     // units folded with a negative scale
    std::size_t degenerate_unit_count = 0;  // always 0 on success; folds fail hard

    std::string to_kv() const {
        std::ostringstream os;
        os << "layer=" << layer_id << " granularity=" << granularity_name(granularity)
           << " units=" << unit_count << " thr_min=" << min_threshold
           << " thr_max=" << max_threshold << " flipped=" << flipped_unit_count
           << " degenerate=" << degenerate_unit_count;
        return os.str();
    }
};

// Folds a frozen MPBN into per-unit firing thresholds:
//   threshold_g = (v_th - beta_g) * sqrt(running_var_g + eps) / lambda_g + running_mean_g
// For every membrane u the folded decision direction*u > direction*threshold
// equals the normalized decision MPBN(u) > v_th; a negative lambda flips the
// comparison, recorded in direction. eps stays under the root so the folded
// boundary is exactly the boundary the normalized path used.
template <class R>
FiringRule<R> fold_mpbn(const NormParams<R>& params, R v_th, FoldReport* report = nullptr) {
    params.validate();
    FiringRule<R> rule{Tensor<R>::zeros(params.lambda.shape),
                       Tensor<R>::zeros(params.lambda.shape)};
    std::size_t flipped = 0;
    for (std::size_t g = 0; g < params.lambda.numel(); ++g) {
        const R lam = params.lambda[g];
        if (std::abs(static_cast<double>(lam)) <= kDegenerateScaleTol)
            throw DegenerateScaleError(
                "fold_mpbn: |lambda| <= " + std::to_string(kDegenerateScaleTol) + " at unit " +
                std::to_string(g) + "; firing decision is constant, no threshold exists");
        const R sd = std::sqrt(params.running_var[g] + params.eps);
        rule.threshold[g] = (v_th - params.beta[g]) * sd / lam + params.running_mean[g];
        rule.direction[g] = lam > R(0) ? R(1) : R(-1);
        if (lam < R(0)) ++flipped;
    }
    require_finite(rule.threshold, "fold_mpbn threshold");
    if (report) {
        report->granularity = params.granularity;
        report->unit_count = rule.threshold.numel();
        report->flipped_unit_count = flipped;
        report->degenerate_unit_count = 0;
        double lo = rule.threshold[0], hi = rule.threshold[0];
        for (R t : rule.threshold.data) {
            lo = std::min(lo, static_cast<double>(t));
            hi = std::max(hi, static_cast<double>(t));
        }
        report->min_threshold = lo;
        report->max_threshold = hi;
    }
    return rule;
}

// Folds a frozen channel-wise BN into the preceding convolution:
//   w'_c = w_c * lambda_c / sqrt(var_c + eps)
//   b'_c = (b_c - mean_c) * lambda_c / sqrt(var_c + eps) + beta_c
// so conv(x, w', b') == bn_infer(conv(x, w, b)).
template <class R>
std::pair<Tensor<R>, Tensor<R>> fold_conv_bn(const Tensor<R>& weight, const Tensor<R>& bias,
                                             const NormParams<R>& params) {
    if (params.granularity != Granularity::channel)
        throw ConfigError(
            "fold_conv_bn: element granularity cannot fold into shared conv weights");
    params.validate();
    check_rank(weight, 4, "fold_conv_bn weight");
    const std::size_t cout = weight.dim(0);
    if (params.groups() != cout || bias.numel() != cout)
        throw ShapeError("fold_conv_bn: params cover " + std::to_string(params.groups()) +
                         " channels, conv has " + std::to_string(cout));

    Tensor<R> w = weight;
    Tensor<R> b = bias;
    const std::size_t per = weight.numel() / cout;
    for (std::size_t c = 0; c < cout; ++c) {
        const R s = params.lambda[c] / std::sqrt(params.running_var[c] + params.eps);
        for (std::size_t i = 0; i < per; ++i) w.data[c * per + i] *= s;
        b[c] = (bias[c] - params.running_mean[c]) * s + params.beta[c];
    }
    return {std::move(w), std::move(b)};
}

template <class R>
struct FoldedModel {
    Model<R> model;
    std::vector<FoldReport> reports;
};

// Re-parameterizes a trained model for inference: conv-side BN folds into
// weights, MPBN folds into per-unit firing thresholds, and the result
// carries no normalization layers at all. The input model is left intact.
template <class R>
FoldedModel<R> fold_model(const Model<R>& trained) {
    if (trained.mode != ModelMode::folded) trained.validate();
    if (trained.mode == ModelMode::folded)
        throw ConfigError("fold_model: model is already folded");

    FoldedModel<R> out;
    out.model = trained;
    out.model.mode = ModelMode::folded;
    const R v_th = static_cast<R>(trained.lif.v_th);

    for (std::size_t i = 0; i < out.model.layers.size(); ++i) {
        auto* conv = std::get_if<ConvLifLayer<R>>(&out.model.layers[i]);
        if (!conv) continue;

        FoldReport report;
        report.layer_id = i;
        try {
            auto [w, b] = fold_conv_bn(conv->weight, conv->bias, *conv->conv_bn);
            conv->weight = std::move(w);
            conv->bias = std::move(b);
            if (conv->mpbn) {
                conv->rule = fold_mpbn(*conv->mpbn, v_th, &report);
            } else {
                conv->rule = FiringRule<R>::uniform(v_th);
                report.unit_count = 1;
                report.min_threshold = report.max_threshold = trained.lif.v_th;
            }
        } catch (const DegenerateScaleError& e) {
            throw DegenerateScaleError("layer " + std::to_string(i) + ": " + e.what());
        }
        conv->conv_bn.reset();
        conv->mpbn.reset();
        out.reports.push_back(report);
    }

    out.model.validate();
    return out;
}

}  // namespace spikefold

#endif  // SPIKEFOLD_REPARAM_HPP_
