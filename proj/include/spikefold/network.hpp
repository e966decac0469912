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

#ifndef SPIKEFOLD_NETWORK_HPP_
#define SPIKEFOLD_NETWORK_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "spikefold/arch.hpp"
#include "spikefold/errors.hpp"
#include "spikefold/neuron.hpp"
#include "spikefold/norm.hpp"
#include "spikefold/opcount.hpp"
#include "spikefold/rng.hpp"
#include "spikefold/tensor.hpp"

namespace spikefold {

enum class ModelMode : std::uint8_t { training = 0, folded = 1 };

// Membrane-potential normalization setting for a whole model.
enum class MpbnMode : std::uint8_t { off = 0, channel = 1, element = 2 };

inline const char* mpbn_mode_name(MpbnMode m) {
    switch (m) {
        case MpbnMode::off: return "off";
        case MpbnMode::channel: return "channel";
        default: return "element";
    }
}

// Test/debug knob: pass_through replaces the spike function by the
// identity (no firing, no reset), which makes the whole network smooth and
// lets finite differences validate the backward plumbing end to end.
enum class FiringMode : std::uint8_t { spiking = 0, pass_through = 1 };

// Conv + conv-side BN + LIF block. In training mode the normalization
// parameters are live; in folded mode the BN is burned into weight/bias and
// the MPBN into the firing rule.
template <class R>
struct ConvLifLayer {
    int in_ch = 0, out_ch = 0, kernel = 3, stride = 1, padding = 1;
    std::size_t out_h = 0, out_w = 0;
    bool encoder = false;

    Tensor<R> weight;  // [out_ch, in_ch, k, k]
    Tensor<R> bias;    // [out_ch]
    std::optional<NormParams<R>> conv_bn;
    std::optional<NormParams<R>> mpbn;
    std::optional<FiringRule<R>> rule;  // folded mode only
};

struct PoolLayer {
    int kernel = 2;
};

template <class R>
struct LinearOutLayer {
    std::size_t in_features = 0, out_features = 0;
    Tensor<R> weight;  // [out_features, in_features]
    Tensor<R> bias;    // [out_features]
};

template <class R>
using Layer = std::variant<ConvLifLayer<R>, PoolLayer, LinearOutLayer<R>>;

template <class R>
struct Model {
    ModelMode mode = ModelMode::training;
    FiringMode firing = FiringMode::spiking;
    LifConfig lif;
    MpbnMode mpbn = MpbnMode::off;
    R eps = R(1e-5);
    R momentum = R(0.1);
    int time_steps = 2;  // T the model was configured/trained with
    std::size_t in_ch = 0, in_h = 0, in_w = 0;
    std::size_t n_classes = 0;
    std::vector<Layer<R>> layers;

    void validate() const;
};

template <class R>
void Model<R>::validate() const {
    lif.validate();
    if (layers.empty()) throw ConfigError("model: no layers");
    if (!std::holds_alternative<LinearOutLayer<R>>(layers.back()))
        throw ConfigError("model: last layer must be the classifier head");
    for (std::size_t i = 0; i + 1 < layers.size(); ++i)
        if (std::holds_alternative<LinearOutLayer<R>>(layers[i]))
            throw ConfigError("model: classifier head must be the last layer");
    if (!std::holds_alternative<ConvLifLayer<R>>(layers.front()))
        throw ConfigError("model: first layer must be the conv encoder");

    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto* conv = std::get_if<ConvLifLayer<R>>(&layers[i]);
        if (!conv) continue;
        if (conv->encoder != (i == 0))
            throw ConfigError("model: encoder flag must sit on the first layer only");
        if (mode == ModelMode::training) {
            if (!conv->conv_bn || conv->rule)
                throw ConfigError("model: training mode requires conv BN and no firing rule");
            conv->conv_bn->validate();
            if (conv->mpbn) conv->mpbn->validate();
        } else {
            if (conv->conv_bn || conv->mpbn || !conv->rule)
                throw ConfigError("model: folded mode requires firing rules and no norm params");
            conv->rule->validate();
        }
    }
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

template <class R>
Model<R> build_model(const std::vector<ArchItem>& arch, std::size_t in_ch, std::size_t in_h,
                     std::size_t in_w, std::size_t n_classes, LifConfig lif, MpbnMode mpbn,
                     int time_steps, std::uint64_t seed, R eps = R(1e-5), R momentum = R(0.1)) {
    if (n_classes < 2) throw ConfigError("model: need at least 2 classes");
    if (time_steps < 1) throw ConfigError("model: time_steps must be >= 1");
    lif.validate();

    Model<R> m;
    m.lif = lif;
    m.mpbn = mpbn;
    m.eps = eps;
    m.momentum = momentum;
    m.time_steps = time_steps;
    m.in_ch = in_ch;
    m.in_h = in_h;
    m.in_w = in_w;
    m.n_classes = n_classes;

    Rng rng(seed);
    auto gauss = [&rng](Tensor<R>& t, double stddev) {
        for (auto& v : t.data) v = static_cast<R>(rng.gaussian() * stddev);
    };

    std::size_t c = in_ch, h = in_h, w = in_w;
    bool first = true;
    for (const ArchItem& item : arch) {
        if (item.kind == ArchItem::Kind::pool) {
            if (first) throw ConfigError("model: pool cannot be the first layer");
            if (h % 2 != 0 || w % 2 != 0)
                throw ConfigError("model: pool needs even spatial size, have " +
                                  std::to_string(h) + "x" + std::to_string(w));
            m.layers.emplace_back(PoolLayer{2});
            h /= 2;
            w /= 2;
            continue;
        }
        ConvLifLayer<R> layer;
        layer.in_ch = static_cast<int>(c);
        layer.out_ch = item.channels;
        layer.encoder = first;
        layer.out_h = h;  // 3x3 stride 1 pad 1 preserves spatial size
        layer.out_w = w;
        layer.weight = Tensor<R>::zeros({static_cast<std::size_t>(item.channels), c, 3, 3});
        gauss(layer.weight, std::sqrt(2.0 / (static_cast<double>(c) * 9.0)));
        layer.bias = Tensor<R>::zeros({static_cast<std::size_t>(item.channels)});
        layer.conv_bn = NormParams<R>::identity({static_cast<std::size_t>(item.channels)},
                                                Granularity::channel, eps, momentum);
        if (mpbn == MpbnMode::channel) {
            layer.mpbn = NormParams<R>::identity({static_cast<std::size_t>(item.channels)},
                                                 Granularity::channel, eps, momentum);
        } else if (mpbn == MpbnMode::element) {
            layer.mpbn = NormParams<R>::identity({static_cast<std::size_t>(item.channels), h, w},
                                                 Granularity::element, eps, momentum);
        }
        c = static_cast<std::size_t>(item.channels);
        m.layers.emplace_back(std::move(layer));
        first = false;
    }

    LinearOutLayer<R> head;
    head.in_features = c * h * w;
    head.out_features = n_classes;
    head.weight = Tensor<R>::zeros({n_classes, head.in_features});
    gauss(head.weight, std::sqrt(1.0 / static_cast<double>(head.in_features)));
    head.bias = Tensor<R>::zeros({n_classes});
    m.layers.emplace_back(std::move(head));

    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// Parameter enumeration (SGD, landscape directions, serialization order)
// ---------------------------------------------------------------------------

enum class ParamKind { conv_weight, linear_weight, vector };

template <class R>
struct ParamRef {
    std::string name;
    ParamKind kind;
    Tensor<R>* tensor;
};

template <class R>
std::vector<ParamRef<R>> param_refs(Model<R>& m) {
    std::vector<ParamRef<R>> refs;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const std::string prefix = "layer" + std::to_string(i) + ".";
        if (auto* conv = std::get_if<ConvLifLayer<R>>(&m.layers[i])) {
            refs.push_back({prefix + "weight", ParamKind::conv_weight, &conv->weight});
            refs.push_back({prefix + "bias", ParamKind::vector, &conv->bias});
            if (conv->conv_bn) {
                refs.push_back({prefix + "bn.lambda", ParamKind::vector, &conv->conv_bn->lambda});
                refs.push_back({prefix + "bn.beta", ParamKind::vector, &conv->conv_bn->beta});
            }
            if (conv->mpbn) {
                refs.push_back({prefix + "mpbn.lambda", ParamKind::vector, &conv->mpbn->lambda});
                refs.push_back({prefix + "mpbn.beta", ParamKind::vector, &conv->mpbn->beta});
            }
        } else if (auto* head = std::get_if<LinearOutLayer<R>>(&m.layers[i])) {
            refs.push_back({prefix + "weight", ParamKind::linear_weight, &head->weight});
            refs.push_back({prefix + "bias", ParamKind::vector, &head->bias});
        }
    }
    return refs;
}

// Gradients aligned index-for-index with param_refs(model).
template <class R>
struct Gradients {
    std::vector<Tensor<R>> by_param;
};

// ---------------------------------------------------------------------------
// Forward traces
// ---------------------------------------------------------------------------

template <class R>
struct ConvLifTrace {
    std::vector<Tensor<R>> input;   // conv input per step
    BnCache<R> conv_bn_cache;       // over the time-stacked batch
    std::vector<Tensor<R>> u_pre;   // updated membrane, pre-normalization
    std::vector<Tensor<R>> u_norm;  // firing-function input (u_pre if no MPBN)
    std::vector<Tensor<R>> spikes;
    std::vector<BnCache<R>> mpbn_cache;  // per step, empty if no MPBN
};

template <class R>
struct PoolTrace {
    std::vector<std::vector<std::size_t>> argmax;
    Shape in_shape;
};

template <class R>
struct HeadTrace {
    std::vector<Tensor<R>> input2d;  // flattened spikes per step
};

template <class R>
struct ForwardTrace {
    int T = 0;
    std::size_t batch = 0;
    std::vector<std::variant<ConvLifTrace<R>, PoolTrace<R>, HeadTrace<R>>> layers;
};

namespace detail {

template <class R>
Tensor<R> reshape(const Tensor<R>& t, Shape s) {
    if (shape_numel(s) != t.numel())
        throw ShapeError("reshape: cannot view " + shape_str(t.shape) + " as " + shape_str(s));
    return Tensor<R>(std::move(s), t.data);
}

// Stack per-step [N,...] tensors into one [T*N,...] tensor (time-major).
template <class R>
Tensor<R> stack_steps(const std::vector<Tensor<R>>& steps) {
    Shape s = steps.at(0).shape;
    s[0] *= steps.size();
    Tensor<R> out = Tensor<R>::zeros(s);
    const std::size_t chunk = steps[0].numel();
    for (std::size_t t = 0; t < steps.size(); ++t) {
        check_same_shape(steps[t], steps[0], "stack_steps");
        std::copy(steps[t].data.begin(), steps[t].data.end(), out.data.begin() + t * chunk);
    }
    return out;
}

template <class R>
std::vector<Tensor<R>> unstack_steps(const Tensor<R>& stacked, std::size_t T) {
    Shape s = stacked.shape;
    s[0] /= T;
    const std::size_t chunk = shape_numel(s);
    std::vector<Tensor<R>> steps;
    steps.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        Tensor<R> st = Tensor<R>::zeros(s);
        std::copy(stacked.data.begin() + t * chunk, stacked.data.begin() + (t + 1) * chunk,
                  st.data.begin());
        steps.push_back(std::move(st));
    }
    return steps;
}

template <class R>
void check_binary_spikes(const Tensor<R>& o) {
    for (R v : o.data)
        if (v != R(0) && v != R(1))
            throw StateError("forward: hidden activation is not a binary spike");
}

// Slices the per-step encoder input out of a 4-D (static, replicated) or
// 5-D (time-major) input tensor.
template <class R>
struct InputView {
    const Tensor<R>* x;
    bool time_major;
    std::size_t batch, chunk;

    InputView(const Tensor<R>& input, const Model<R>& m, int T) : x(&input) {
        if (input.rank() == 4) {
            time_major = false;
            batch = input.dim(0);
        } else if (input.rank() == 5) {
            time_major = true;
            if (input.dim(0) != static_cast<std::size_t>(T))
                throw ConfigError("forward: leading input axis " + std::to_string(input.dim(0)) +
                                  " does not match T=" + std::to_string(T));
            batch = input.dim(1);
        } else {
            throw ShapeError("forward: input must be [N,C,H,W] or [T,N,C,H,W], got " +
                             shape_str(input.shape));
        }
        const std::size_t off = time_major ? 1 : 0;
        if (input.dim(off + 1) != m.in_ch || input.dim(off + 2) != m.in_h ||
            input.dim(off + 3) != m.in_w)
            throw ConfigError("forward: input " + shape_str(input.shape) +
                              " does not match model input (" + std::to_string(m.in_ch) + "," +
                              std::to_string(m.in_h) + "," + std::to_string(m.in_w) + ")");
        chunk = batch * m.in_ch * m.in_h * m.in_w;
    }

    Tensor<R> step(std::size_t t, const Model<R>& m) const {
        if (!time_major) {
            Tensor<R> out = *x;
            return out;
        }
        Tensor<R> out = Tensor<R>::zeros({batch, m.in_ch, m.in_h, m.in_w});
        std::copy(x->data.begin() + t * chunk, x->data.begin() + (t + 1) * chunk,
                  out.data.begin());
        return out;
    }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Training-path forward (batch statistics, trace retained for BPTT)
// ---------------------------------------------------------------------------

template <class R>
struct TrainForward {
    Tensor<R> logits;
    ForwardTrace<R> trace;
};

// Runs the unrolled training forward. Conv-side BN normalizes with batch
// statistics taken jointly over all time steps (steps stacked along the
// batch axis). MPBN normalizes each step with that step's batch statistics:
// later membrane potentials depend on earlier firing decisions, so a joint
// statistic over time would need spikes it has not produced yet. Running
// statistics of both are EMA-updated exactly once per forward pass; MPBN
// pools its per-step moments first, so the stored statistics describe the
// union of all steps.
template <class R>
TrainForward<R> forward_train(Model<R>& model, const Tensor<R>& input, int T) {
    if (model.mode != ModelMode::training)
        throw ConfigError("forward_train: model is folded; use forward_eval");
    if (T < 1) throw ConfigError("forward_train: T must be >= 1");
    model.validate();

    const detail::InputView<R> view(input, model, T);
    const std::size_t steps = static_cast<std::size_t>(T);
    const R tau = static_cast<R>(model.lif.tau);
    const FiringRule<R> base_rule = FiringRule<R>::uniform(static_cast<R>(model.lif.v_th));

    TrainForward<R> result;
    result.trace.T = T;
    result.trace.batch = view.batch;

    std::vector<Tensor<R>> cur;
    cur.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) cur.push_back(view.step(t, model));

    Tensor<R> logit_acc = Tensor<R>::zeros({view.batch, model.n_classes});

    for (auto& layer : model.layers) {
        if (auto* conv = std::get_if<ConvLifLayer<R>>(&layer)) {
            ConvLifTrace<R> tr;
            tr.input = cur;

            std::vector<Tensor<R>> a;
            a.reserve(steps);
            for (std::size_t t = 0; t < steps; ++t)
                a.push_back(conv2d(cur[t], conv->weight, &conv->bias, conv->stride,
                                   conv->padding));

            Tensor<R> stacked = detail::stack_steps(a);
            const Moments<R> stats = batch_moments(stacked, Granularity::channel);
            Tensor<R> normed =
                bn_forward_train(stacked, *conv->conv_bn, stats, &tr.conv_bn_cache);
            ema_update(*conv->conv_bn, stats);
            std::vector<Tensor<R>> c = detail::unstack_steps(normed, steps);

            std::vector<Moments<R>> mpbn_steps;
            Tensor<R> u = Tensor<R>::zeros(c[0].shape);
            for (std::size_t t = 0; t < steps; ++t) {
                Tensor<R> u_pre = mp_update(u, c[t], tau);
                Tensor<R> u_norm;
                if (conv->mpbn) {
                    Moments<R> s = batch_moments(u_pre, conv->mpbn->granularity);
                    BnCache<R> cache;
                    u_norm = bn_forward_train(u_pre, *conv->mpbn, s, &cache);
                    tr.mpbn_cache.push_back(std::move(cache));
                    mpbn_steps.push_back(std::move(s));
                } else {
                    u_norm = u_pre;
                }
                Tensor<R> o;
                if (model.firing == FiringMode::spiking) {
                    o = spike_indicator(u_norm, base_rule);
                    detail::check_binary_spikes(o);
                    u = apply_reset(u_pre, o);
                } else {
                    o = u_norm;  // smooth test mode: identity activation, no reset
                    u = u_pre;
                }
                tr.u_pre.push_back(std::move(u_pre));
                tr.u_norm.push_back(std::move(u_norm));
                tr.spikes.push_back(o);
                cur[t] = std::move(o);
            }
            if (conv->mpbn) ema_update(*conv->mpbn, pool_moments(mpbn_steps));
            result.trace.layers.emplace_back(std::move(tr));
        } else if (auto* pool = std::get_if<PoolLayer>(&layer)) {
            PoolTrace<R> tr;
            tr.in_shape = cur[0].shape;
            for (std::size_t t = 0; t < steps; ++t) {
                PoolResult<R> r = max_pool2d(cur[t], pool->kernel);
                tr.argmax.push_back(std::move(r.argmax));
                cur[t] = std::move(r.output);
            }
            result.trace.layers.emplace_back(std::move(tr));
        } else {
            auto* head = std::get_if<LinearOutLayer<R>>(&layer);
            HeadTrace<R> tr;
            for (std::size_t t = 0; t < steps; ++t) {
                Tensor<R> flat = detail::reshape(cur[t], {view.batch, head->in_features});
                add_into(logit_acc, linear(flat, head->weight, &head->bias));
                tr.input2d.push_back(std::move(flat));
            }
            result.trace.layers.emplace_back(std::move(tr));
        }
    }

    result.logits = scale(logit_acc, R(1) / static_cast<R>(T));
    return result;
}

// ---------------------------------------------------------------------------
// Inference forward (frozen statistics or folded rules)
// ---------------------------------------------------------------------------

// Optional probe for fold-sensitivity analysis: per-sample minimum distance
// between the (normalized) membrane and the firing threshold across all
// layers, steps and units. Samples with a tiny margin are the only ones on
// which a fold can legitimately change a firing decision.
template <class R>
struct MarginProbe {
    Tensor<R> min_margin;
};

template <class R>
Tensor<R> forward_eval(const Model<R>& model, const Tensor<R>& input, int T,
                       OpCounters* cost = nullptr,
                       std::type_identity_t<MarginProbe<R>>* probe = nullptr,
                       std::vector<std::type_identity_t<Tensor<R>>>* spike_log = nullptr) {
    if (T < 1) throw ConfigError("forward_eval: T must be >= 1");
    if (probe && model.mode != ModelMode::training)
        throw ConfigError("forward_eval: margin probe needs the normalized (training-mode) path");
    model.validate();

    const detail::InputView<R> view(input, model, T);
    const std::size_t steps = static_cast<std::size_t>(T);
    const R tau = static_cast<R>(model.lif.tau);
    const R v_th = static_cast<R>(model.lif.v_th);
    const FiringRule<R> base_rule = FiringRule<R>::uniform(v_th);

    if (probe)
        probe->min_margin =
            Tensor<R>::full({view.batch}, std::numeric_limits<R>::infinity());

    std::vector<Tensor<R>> cur;
    cur.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) cur.push_back(view.step(t, model));

    Tensor<R> logit_acc = Tensor<R>::zeros({view.batch, model.n_classes});

    for (const auto& layer : model.layers) {
        if (const auto* conv = std::get_if<ConvLifLayer<R>>(&layer)) {
            Tensor<R> u;
            for (std::size_t t = 0; t < steps; ++t) {
                Tensor<R> a = conv2d(cur[t], conv->weight, &conv->bias, conv->stride,
                                     conv->padding);
                Tensor<R> c = (model.mode == ModelMode::training)
                                  ? bn_forward_infer(a, *conv->conv_bn, cost)
                                  : std::move(a);
                if (t == 0) u = Tensor<R>::zeros(c.shape);
                Tensor<R> u_pre = mp_update(u, c, tau);
                if (cost) cost->elementwise_ops += 2 * u_pre.numel();

                Tensor<R> o;
                if (model.mode == ModelMode::training) {
                    Tensor<R> u_norm =
                        conv->mpbn ? bn_forward_infer(u_pre, *conv->mpbn, cost) : u_pre;
                    if (probe) {
                        const std::size_t per = u_norm.numel() / view.batch;
                        for (std::size_t i = 0; i < u_norm.numel(); ++i) {
                            const R d = std::abs(u_norm[i] - v_th);
                            R& slot = probe->min_margin[i / per];
                            if (d < slot) slot = d;
                        }
                    }
                    o = spike_indicator(u_norm, base_rule);
                } else {
                    o = spike_indicator(u_pre, *conv->rule);
                }
                if (cost) cost->elementwise_ops += u_pre.numel();  // threshold compare
                u = apply_reset(u_pre, o);
                if (cost) cost->elementwise_ops += 2 * u_pre.numel();
                if (spike_log) spike_log->push_back(o);
                cur[t] = std::move(o);
            }
        } else if (const auto* pool = std::get_if<PoolLayer>(&layer)) {
            for (std::size_t t = 0; t < steps; ++t) {
                PoolResult<R> r = max_pool2d(cur[t], pool->kernel);
                if (cost)
                    cost->elementwise_ops +=
                        r.output.numel() * (static_cast<std::size_t>(pool->kernel) *
                                                static_cast<std::size_t>(pool->kernel) -
                                            1);
                cur[t] = std::move(r.output);
            }
        } else {
            const auto* head = std::get_if<LinearOutLayer<R>>(&layer);
            for (std::size_t t = 0; t < steps; ++t) {
                Tensor<R> flat = detail::reshape(cur[t], {view.batch, head->in_features});
                add_into(logit_acc, linear(flat, head->weight, &head->bias));
                if (cost) cost->elementwise_ops += logit_acc.numel();
            }
        }
    }
    if (cost) cost->elementwise_ops += logit_acc.numel();  // 1/T scaling
    return scale(logit_acc, R(1) / static_cast<R>(T));
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

template <class R>
struct LossResult {
    R loss;
    Tensor<R> grad_logits;
};

// Mean cross-entropy of softmax(logits) against integer labels.
template <class R>
LossResult<R> cross_entropy(const Tensor<R>& logits, const std::vector<int>& labels) {
    check_rank(logits, 2, "cross_entropy logits");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n)
        throw ConfigError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(n) + " rows");

    LossResult<R> out{R(0), Tensor<R>::zeros(logits.shape)};
    for (std::size_t b = 0; b < n; ++b) {
        const int y = labels[b];
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw ConfigError("cross_entropy: label " + std::to_string(y) +
                              " out of range for " + std::to_string(k) + " classes");
        const R* z = &logits.data[b * k];
        R zmax = z[0];
        for (std::size_t j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
        R sum = R(0);
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
        const R lse = zmax + std::log(sum);
        out.loss += lse - z[static_cast<std::size_t>(y)];
        R* g = &out.grad_logits.data[b * k];
        for (std::size_t j = 0; j < k; ++j) g[j] = std::exp(z[j] - lse);
        g[static_cast<std::size_t>(y)] -= R(1);
    }
    const R inv = R(1) / static_cast<R>(n);
    out.loss *= inv;
    for (auto& g : out.grad_logits.data) g *= inv;
    return out;
}

// ---------------------------------------------------------------------------
// STBP backward
// ---------------------------------------------------------------------------

// Backpropagation through the unrolled network. Per layer and step the
// spike derivative is the rectangular surrogate evaluated on the firing
// input; the temporal carry multiplies the leak tau and the reset gate
// (1 - o); the reset's direct dependence on o is treated as a constant.
// `include_temporal_carry=false` drops the carry term (diagnostics only).
template <class R>
Gradients<R> stbp_backward(Model<R>& model, const ForwardTrace<R>& trace,
                           const Tensor<R>& grad_logits, bool include_temporal_carry = true) {
    if (model.mode != ModelMode::training)
        throw ConfigError("stbp_backward: model is folded");
    if (trace.layers.size() != model.layers.size())
        throw StateError("stbp_backward: trace does not match model (missing forward?)");
    const std::size_t steps = static_cast<std::size_t>(trace.T);
    const R tau = static_cast<R>(model.lif.tau);

    auto refs = param_refs(model);
    Gradients<R> grads;
    grads.by_param.reserve(refs.size());
    for (auto& r : refs) grads.by_param.push_back(Tensor<R>::zeros(r.tensor->shape));

    // layer index -> first gradient slot
    std::vector<std::size_t> base(model.layers.size(), 0);
    {
        std::size_t slot = 0;
        for (std::size_t i = 0; i < model.layers.size(); ++i) {
            base[i] = slot;
            if (auto* conv = std::get_if<ConvLifLayer<R>>(&model.layers[i])) {
                slot += 2;
                if (conv->conv_bn) slot += 2;
                if (conv->mpbn) slot += 2;
            } else if (std::holds_alternative<LinearOutLayer<R>>(model.layers[i])) {
                slot += 2;
            }
        }
    }

    // Gradient with respect to each step's layer output, flowing downward.
    std::vector<Tensor<R>> grad_out;

    for (std::size_t li = model.layers.size(); li-- > 0;) {
        auto& layer = model.layers[li];
        if (auto* head = std::get_if<LinearOutLayer<R>>(&layer)) {
            const auto& tr = std::get<HeadTrace<R>>(trace.layers[li]);
            const Tensor<R> per_step = scale(grad_logits, R(1) / static_cast<R>(steps));
            grad_out.assign(steps, Tensor<R>());
            for (std::size_t t = 0; t < steps; ++t) {
                LinearGrads<R> g = linear_backward(per_step, tr.input2d[t], head->weight);
                add_into(grads.by_param[base[li]], g.weight);
                add_into(grads.by_param[base[li] + 1], g.bias);
                grad_out[t] = std::move(g.input);
            }
        } else if (auto* pool = std::get_if<PoolLayer>(&layer)) {
            const auto& tr = std::get<PoolTrace<R>>(trace.layers[li]);
            for (std::size_t t = 0; t < steps; ++t)
                grad_out[t] = max_pool2d_backward(grad_out[t], tr.argmax[t], tr.in_shape);
        } else {
            auto* conv = std::get_if<ConvLifLayer<R>>(&layer);
            const auto& tr = std::get<ConvLifTrace<R>>(trace.layers[li]);
            if (tr.u_pre.size() != steps)
                throw StateError("stbp_backward: trace depth mismatch");

            // The spike-output grads arrive as [N, out, H, W] per step; the
            // head backward returns flattened rows, so reshape first.
            const Shape out_shape = tr.u_pre[0].shape;
            for (std::size_t t = 0; t < steps; ++t)
                grad_out[t] = detail::reshape(grad_out[t], out_shape);

            std::vector<Tensor<R>> grad_c(steps);
            Tensor<R> du_next = Tensor<R>::zeros(out_shape);  // dL/du^(t) from step t+1
            for (std::size_t t = steps; t-- > 0;) {
                Tensor<R> du_norm;
                if (model.firing == FiringMode::spiking) {
                    du_norm = mul(grad_out[t], surrogate_grad(tr.u_norm[t]));
                } else {
                    du_norm = grad_out[t];
                }
                Tensor<R> du_pre;
                if (conv->mpbn) {
                    BnGrads<R> g = bn_backward(du_norm, tr.mpbn_cache[t], *conv->mpbn);
                    const std::size_t mpbn_slot = base[li] + (conv->conv_bn ? 4 : 2);
                    add_into(grads.by_param[mpbn_slot], g.lambda);
                    add_into(grads.by_param[mpbn_slot + 1], g.beta);
                    du_pre = std::move(g.x);
                } else {
                    du_pre = std::move(du_norm);
                }
                if (include_temporal_carry) {
                    if (model.firing == FiringMode::spiking) {
                        for (std::size_t i = 0; i < du_pre.numel(); ++i)
                            du_pre[i] += du_next[i] * (R(1) - tr.spikes[t][i]);
                    } else {
                        add_into(du_pre, du_next);  // pass-through mode has no reset gate
                    }
                }
                du_next = scale(du_pre, tau);
                grad_c[t] = std::move(du_pre);
            }

            Tensor<R> stacked = detail::stack_steps(grad_c);
            BnGrads<R> bn_g = bn_backward(stacked, tr.conv_bn_cache, *conv->conv_bn);
            add_into(grads.by_param[base[li] + 2], bn_g.lambda);
            add_into(grads.by_param[base[li] + 3], bn_g.beta);
            std::vector<Tensor<R>> grad_a = detail::unstack_steps(bn_g.x, steps);

            for (std::size_t t = 0; t < steps; ++t) {
                ConvGrads<R> g = conv2d_backward(grad_a[t], tr.input[t], conv->weight,
                                                 conv->stride, conv->padding);
                add_into(grads.by_param[base[li]], g.weight);
                add_into(grads.by_param[base[li] + 1], g.bias);
                grad_out[t] = std::move(g.input);
            }
        }
    }
    return grads;
}

}  // namespace spikefold

#endif  // SPIKEFOLD_NETWORK_HPP_
