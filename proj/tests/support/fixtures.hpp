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

// Shared fixtures: randomly parameterized "trained-looking" models, a tape
// re-implementation of the full training forward for gradient comparison,
// and spike-train equality with near-threshold exclusion.

#ifndef SPIKEFOLD_TESTS_FIXTURES_HPP_
#define SPIKEFOLD_TESTS_FIXTURES_HPP_

#include <map>
#include <string>
#include <vector>

#include "spikefold/arch.hpp"
#include "spikefold/data.hpp"
#include "spikefold/network.hpp"
#include "spikefold/rng.hpp"
#include "spikefold/train.hpp"
#include "support/tape.hpp"

namespace fixtures {

using namespace spikefold;

// Training-mode model with plausible frozen statistics, as if training had
// run: scales away from identity, nonzero shifts and running moments.
// neg_lambda_frac forces roughly that fraction of MPBN scales negative.
inline Model<double> random_model(std::uint64_t seed, const std::string& arch, MpbnMode mpbn,
                                  std::size_t in_c, std::size_t in_h, std::size_t in_w,
                                  std::size_t classes, int T, double neg_lambda_frac = 0.0) {
    Model<double> m = build_model<double>(parse_arch(arch), in_c, in_h, in_w, classes,
                                          LifConfig{0.25, 0.5}, mpbn, T, seed);
    Rng rng(seed ^ 0x5eedf00dULL);
    for (auto& layer : m.layers) {
        auto* conv = std::get_if<ConvLifLayer<double>>(&layer);
        if (!conv) continue;
        auto jitter = [&](NormParams<double>& p, bool allow_negative) {
            for (auto& v : p.lambda.data) {
                v = 0.5 + 1.2 * rng.uniform();
                if (allow_negative && rng.uniform() < neg_lambda_frac) v = -v;
            }
            for (auto& v : p.beta.data) v = 0.3 * rng.gaussian();
            for (auto& v : p.running_mean.data) v = 0.4 * rng.gaussian();
            for (auto& v : p.running_var.data) v = 0.3 + 1.4 * rng.uniform();
        };
        jitter(*conv->conv_bn, false);
        if (conv->mpbn) jitter(*conv->mpbn, true);
        for (auto& v : conv->bias.data) v = 0.1 * rng.gaussian();
    }
    return m;
}

inline Tensor<double> random_images(std::uint64_t seed, std::size_t n, std::size_t c,
                                    std::size_t h, std::size_t w) {
    Rng rng(seed);
    Tensor<double> t = Tensor<double>::zeros({n, c, h, w});
    for (auto& v : t.data) v = rng.uniform();
    return t;
}

inline std::vector<int> random_labels(std::uint64_t seed, std::size_t n, int classes) {
    Rng rng(seed ^ 0x1abe1ULL);
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    return y;
}

// A few SGD steps on one batch, enough to move every parameter and the
// running statistics off their initial values.
inline void quick_train(Model<double>& m, const Tensor<double>& images,
                        const std::vector<int>& labels, int steps, double lr, int T) {
    auto refs = param_refs(m);
    std::vector<Tensor<double>> velocity;
    for (int s = 0; s < steps; ++s) {
        TrainForward<double> fwd = forward_train(m, images, T);
        LossResult<double> loss = cross_entropy(fwd.logits, labels);
        Gradients<double> grads = stbp_backward(m, fwd.trace, loss.grad_logits);
        sgd_step(refs, grads, velocity, lr, 0.9);
    }
}

// ---------------------------------------------------------------------------
// Spike-train comparison with near-threshold exclusion
// ---------------------------------------------------------------------------

struct SpikeCompare {
    std::size_t samples_checked = 0;
    std::size_t samples_excluded = 0;
    std::size_t mismatched_samples = 0;
};

// a and b are per-(layer, step) spike tensors appended in identical order;
// margins holds each sample's minimum |normalized membrane - v_th|.
inline SpikeCompare compare_spike_trains(const std::vector<Tensor<double>>& a,
                                         const std::vector<Tensor<double>>& b,
                                         const Tensor<double>& margins, double margin_tol) {
    SpikeCompare r;
    if (a.size() != b.size()) {
        r.mismatched_samples = 1;
        return r;
    }
    const std::size_t n = margins.numel();
    for (std::size_t s = 0; s < n; ++s) {
        if (!(margins[s] > margin_tol)) {
            ++r.samples_excluded;
            continue;
        }
        ++r.samples_checked;
        bool ok = true;
        for (std::size_t e = 0; e < a.size() && ok; ++e) {
            const std::size_t per = a[e].numel() / n;
            for (std::size_t i = s * per; i < (s + 1) * per; ++i)
                if (a[e][i] != b[e][i]) {
                    ok = false;
                    break;
                }
        }
        if (!ok) ++r.mismatched_samples;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Tape re-implementation of the training forward (the STBP oracle)
// ---------------------------------------------------------------------------

struct TapeOracle {
    double loss = 0.0;
    std::map<std::string, tape::T64> grads;  // keyed by param_refs names
};

inline TapeOracle tape_stbp_oracle(Model<double>& model, const Tensor<double>& images,
                                   const std::vector<int>& labels, int T) {
    tape::Graph g;
    const std::size_t steps = static_cast<std::size_t>(T);
    const double tau = model.lif.tau;
    const double v_th = model.lif.v_th;
    const double eps = model.eps;

    std::map<std::string, tape::P> leaves;
    auto refs = param_refs(model);
    for (auto& ref : refs) leaves[ref.name] = g.leaf(*ref.tensor);

    tape::P input = g.leaf(images);
    std::vector<tape::P> cur(steps, input);

    tape::P logits_acc;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const std::string prefix = "layer" + std::to_string(li) + ".";
        if (auto* conv = std::get_if<ConvLifLayer<double>>(&model.layers[li])) {
            std::vector<tape::P> a;
            for (std::size_t t = 0; t < steps; ++t)
                a.push_back(tape::conv2d(g, cur[t], leaves[prefix + "weight"],
                                         leaves[prefix + "bias"], conv->stride, conv->padding));
            tape::P stacked = tape::concat0(g, a);
            tape::P normed = tape::batchnorm(g, stacked, leaves[prefix + "bn.lambda"],
                                             leaves[prefix + "bn.beta"], false, eps);
            tape::P u;
            for (std::size_t t = 0; t < steps; ++t) {
                tape::P c = tape::slice0(g, normed, t, steps);
                tape::P u_pre = t == 0 ? c : tape::add(g, tape::mul_scalar(g, u, tau), c);
                tape::P u_norm = u_pre;
                if (conv->mpbn)
                    u_norm = tape::batchnorm(g, u_pre, leaves[prefix + "mpbn.lambda"],
                                             leaves[prefix + "mpbn.beta"],
                                             conv->mpbn->granularity == Granularity::element,
                                             eps);
                tape::P o = tape::ste_spike(g, u_norm, v_th);
                // hard reset with the gate treated as a constant
                tape::P gate =
                    tape::add_scalar(g, tape::mul_scalar(g, tape::detach(g, o), -1.0), 1.0);
                u = tape::mul(g, u_pre, gate);
                cur[t] = o;
            }
        } else if (auto* pool = std::get_if<PoolLayer>(&model.layers[li])) {
            for (std::size_t t = 0; t < steps; ++t)
                cur[t] = tape::maxpool(g, cur[t], pool->kernel);
        } else {
            auto* head = std::get_if<LinearOutLayer<double>>(&model.layers[li]);
            for (std::size_t t = 0; t < steps; ++t) {
                tape::P flat =
                    tape::reshape(g, cur[t], {cur[t]->value.dim(0), head->in_features});
                tape::P out = tape::linear(g, flat, leaves[prefix + "weight"],
                                           leaves[prefix + "bias"]);
                logits_acc = t == 0 ? out : tape::add(g, logits_acc, out);
            }
        }
    }
    tape::P logits = tape::mul_scalar(g, logits_acc, 1.0 / static_cast<double>(T));
    tape::P loss = tape::cross_entropy(g, logits, labels);
    g.backward(loss);

    TapeOracle out;
    out.loss = loss->value[0];
    for (auto& [name, leaf] : leaves) out.grads[name] = leaf->grad;
    return out;
}

}  // namespace fixtures

#endif  // SPIKEFOLD_TESTS_FIXTURES_HPP_
