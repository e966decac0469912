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

#ifndef SPIKEFOLD_CHECKPOINT_HPP_
#define SPIKEFOLD_CHECKPOINT_HPP_

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spikefold/errors.hpp"
#include "spikefold/network.hpp"

// Single-file model container, all integers little-endian, floats IEEE-754.
// Layout (byte offsets):
//   0   magic "SNNCKPT1" (8 bytes)
//   8   u32 version (currently 1; anything else is rejected)
//   12  u8 mode (0 training, 1 folded), u8 dtype (0 f32, 1 f64),
//       u8 mpbn (0 off, 1 channel, 2 element), u8 reserved (must be 0)
//   16  u32 T; f64 tau, v_th, eps, momentum
//   52  u32 layer count, u32 class count, u32 input C, H, W
//   72  layer records
// Layer record: u8 kind (0 conv+LIF, 1 pool, 2 head), then
//   conv: u8 encoder; u32 in_ch,out_ch,kernel,stride,padding,out_h,out_w;
//         arrays weight, bias; training mode adds conv-BN
//         lambda/beta/mean/var and, when mpbn != off, the MPBN quartet;
//         folded mode adds threshold and direction arrays instead
//   pool: u32 kernel
//   head: u32 in_features, out_features; arrays weight, bias
// Array: u32 ndim; u64 dims[ndim]; payload of prod(dims) elements at the
// header dtype's width.

namespace spikefold {

inline constexpr char kCheckpointMagic[8] = {'S', 'N', 'N', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
    ModelMode mode = ModelMode::training;
    Dtype dtype = Dtype::f32;
    MpbnMode mpbn = MpbnMode::off;
    std::uint32_t time_steps = 0;
    double tau = 0, v_th = 0, eps = 0, momentum = 0;
    std::uint32_t n_layers = 0, n_classes = 0;
    std::uint32_t in_c = 0, in_h = 0, in_w = 0;
};

// Byte-level codec (src/checkpoint_codec.cpp).
class ByteWriter {
public:
    void u8(std::uint8_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void raw(const void* p, std::size_t n);
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
    std::uint8_t u8(const char* what);
    std::uint32_t u32(const char* what);
    std::uint64_t u64(const char* what);
    double f64(const char* what);
    std::span<const std::uint8_t> raw(std::size_t n, const char* what);
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void write_checkpoint_header(ByteWriter& w, const CheckpointHeader& h);
CheckpointHeader read_checkpoint_header(ByteReader& r);

// Header-only peek, for dtype/mode dispatch without loading parameters.
CheckpointHeader peek_checkpoint(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Typed array payloads
// ---------------------------------------------------------------------------

namespace detail {

template <class R>
void write_array(ByteWriter& w, const Tensor<R>& t) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) w.u64(d);
    if constexpr (std::is_same_v<R, float>) {
        for (R v : t.data) {
            const auto bits = std::bit_cast<std::uint32_t>(v);
            w.u32(bits);
        }
    } else {
        for (R v : t.data) w.u64(std::bit_cast<std::uint64_t>(v));
    }
}

template <class R>
Tensor<R> read_array(ByteReader& r, const char* what) {
    const std::uint32_t ndim = r.u32(what);
    if (ndim == 0 || ndim > 8)
        throw ParseError(std::string("checkpoint: array '") + what + "' has bad rank " +
                             std::to_string(ndim),
                         r.pos());
    Shape shape(ndim);
    std::size_t n = 1;
    for (auto& d : shape) {
        const std::uint64_t v = r.u64(what);
        if (v == 0 || v > (1ULL << 32))
            throw ParseError(std::string("checkpoint: array '") + what + "' has bad extent",
                             r.pos());
        d = static_cast<std::size_t>(v);
        if (n > (std::size_t(1) << 40) / d)
            throw ParseError(std::string("checkpoint: array '") + what + "' too large", r.pos());
        n *= d;
    }
    Tensor<R> t = Tensor<R>::zeros(shape);
    if constexpr (std::is_same_v<R, float>) {
        for (auto& v : t.data) v = std::bit_cast<float>(r.u32(what));
    } else {
        for (auto& v : t.data) v = std::bit_cast<double>(r.u64(what));
    }
    return t;
}

template <class R>
void expect_shape(const Tensor<R>& t, const Shape& want, const char* what, std::size_t at) {
    if (t.shape != want)
        throw ParseError(std::string("checkpoint: array '") + what + "' has shape " +
                             shape_str(t.shape) + ", metadata implies " + shape_str(want),
                         at);
}

template <class R>
void write_norm(ByteWriter& w, const NormParams<R>& p) {
    write_array(w, p.lambda);
    write_array(w, p.beta);
    write_array(w, p.running_mean);
    write_array(w, p.running_var);
}

template <class R>
NormParams<R> read_norm(ByteReader& r, Granularity g, const Shape& want, R eps, R momentum,
                        const char* what) {
    NormParams<R> p;
    p.lambda = read_array<R>(r, what);
    p.beta = read_array<R>(r, what);
    p.running_mean = read_array<R>(r, what);
    p.running_var = read_array<R>(r, what);
    expect_shape(p.lambda, want, what, r.pos());
    expect_shape(p.beta, want, what, r.pos());
    expect_shape(p.running_mean, want, what, r.pos());
    expect_shape(p.running_var, want, what, r.pos());
    p.eps = eps;
    p.momentum = momentum;
    p.granularity = g;
    return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// save / load
// ---------------------------------------------------------------------------

template <class R>
std::vector<std::uint8_t> save_model(const Model<R>& m) {
    m.validate();
    ByteWriter w;
    CheckpointHeader h;
    h.mode = m.mode;
    h.dtype = dtype_of<R>();
    h.mpbn = m.mpbn;
    h.time_steps = static_cast<std::uint32_t>(m.time_steps);
    h.tau = m.lif.tau;
    h.v_th = m.lif.v_th;
    h.eps = static_cast<double>(m.eps);
    h.momentum = static_cast<double>(m.momentum);
    h.n_layers = static_cast<std::uint32_t>(m.layers.size());
    h.n_classes = static_cast<std::uint32_t>(m.n_classes);
    h.in_c = static_cast<std::uint32_t>(m.in_ch);
    h.in_h = static_cast<std::uint32_t>(m.in_h);
    h.in_w = static_cast<std::uint32_t>(m.in_w);
    write_checkpoint_header(w, h);

    for (const auto& layer : m.layers) {
        if (const auto* conv = std::get_if<ConvLifLayer<R>>(&layer)) {
            w.u8(0);
            w.u8(conv->encoder ? 1 : 0);
            w.u32(static_cast<std::uint32_t>(conv->in_ch));
            w.u32(static_cast<std::uint32_t>(conv->out_ch));
            w.u32(static_cast<std::uint32_t>(conv->kernel));
            w.u32(static_cast<std::uint32_t>(conv->stride));
            w.u32(static_cast<std::uint32_t>(conv->padding));
            w.u64(conv->out_h);
            w.u64(conv->out_w);
            detail::write_array(w, conv->weight);
            detail::write_array(w, conv->bias);
            if (m.mode == ModelMode::training) {
                detail::write_norm(w, *conv->conv_bn);
                if (conv->mpbn) detail::write_norm(w, *conv->mpbn);
            } else {
                detail::write_array(w, conv->rule->threshold);
                detail::write_array(w, conv->rule->direction);
            }
        } else if (const auto* pool = std::get_if<PoolLayer>(&layer)) {
            w.u8(1);
            w.u32(static_cast<std::uint32_t>(pool->kernel));
        } else {
            const auto* head = std::get_if<LinearOutLayer<R>>(&layer);
            w.u8(2);
            w.u64(head->in_features);
            w.u64(head->out_features);
            detail::write_array(w, head->weight);
            detail::write_array(w, head->bias);
        }
    }
    return w.take();
}

template <class R>
Model<R> load_model(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    const CheckpointHeader h = read_checkpoint_header(r);
    if (h.dtype != dtype_of<R>())
        throw ConfigError(std::string("checkpoint holds ") +
                          (h.dtype == Dtype::f32 ? "f32" : "f64") +
                          " parameters; load with the matching element type");

    Model<R> m;
    m.mode = h.mode;
    m.mpbn = h.mpbn;
    m.lif.tau = h.tau;
    m.lif.v_th = h.v_th;
    m.eps = static_cast<R>(h.eps);
    m.momentum = static_cast<R>(h.momentum);
    m.time_steps = static_cast<int>(h.time_steps);
    m.n_classes = h.n_classes;
    m.in_ch = h.in_c;
    m.in_h = h.in_h;
    m.in_w = h.in_w;

    for (std::uint32_t li = 0; li < h.n_layers; ++li) {
        const std::uint8_t kind = r.u8("layer kind");
        if (kind == 0) {
            ConvLifLayer<R> conv;
            conv.encoder = r.u8("encoder flag") != 0;
            conv.in_ch = static_cast<int>(r.u32("in_ch"));
            conv.out_ch = static_cast<int>(r.u32("out_ch"));
            conv.kernel = static_cast<int>(r.u32("kernel"));
            conv.stride = static_cast<int>(r.u32("stride"));
            conv.padding = static_cast<int>(r.u32("padding"));
            conv.out_h = static_cast<std::size_t>(r.u64("out_h"));
            conv.out_w = static_cast<std::size_t>(r.u64("out_w"));
            if (conv.in_ch <= 0 || conv.out_ch <= 0 || conv.kernel <= 0 || conv.stride <= 0 ||
                conv.padding < 0)
                throw ParseError("checkpoint: bad conv metadata in layer " + std::to_string(li),
                                 r.pos());
            const std::size_t co = static_cast<std::size_t>(conv.out_ch);
            const std::size_t ci = static_cast<std::size_t>(conv.in_ch);
            const std::size_t k = static_cast<std::size_t>(conv.kernel);
            conv.weight = detail::read_array<R>(r, "conv weight");
            detail::expect_shape(conv.weight, {co, ci, k, k}, "conv weight", r.pos());
            conv.bias = detail::read_array<R>(r, "conv bias");
            detail::expect_shape(conv.bias, {co}, "conv bias", r.pos());
            if (h.mode == ModelMode::training) {
                conv.conv_bn = detail::read_norm<R>(r, Granularity::channel, {co}, m.eps,
                                                    m.momentum, "conv bn");
                if (h.mpbn == MpbnMode::channel) {
                    conv.mpbn = detail::read_norm<R>(r, Granularity::channel, {co}, m.eps,
                                                     m.momentum, "mpbn");
                } else if (h.mpbn == MpbnMode::element) {
                    conv.mpbn =
                        detail::read_norm<R>(r, Granularity::element,
                                             {co, conv.out_h, conv.out_w}, m.eps, m.momentum,
                                             "mpbn");
                }
            } else {
                FiringRule<R> rule;
                rule.threshold = detail::read_array<R>(r, "threshold");
                rule.direction = detail::read_array<R>(r, "direction");
                conv.rule = std::move(rule);
            }
            m.layers.emplace_back(std::move(conv));
        } else if (kind == 1) {
            PoolLayer pool;
            pool.kernel = static_cast<int>(r.u32("pool kernel"));
            if (pool.kernel < 1)
                throw ParseError("checkpoint: bad pool kernel", r.pos());
            m.layers.emplace_back(pool);
        } else if (kind == 2) {
            LinearOutLayer<R> head;
            head.in_features = static_cast<std::size_t>(r.u64("in_features"));
            head.out_features = static_cast<std::size_t>(r.u64("out_features"));
            head.weight = detail::read_array<R>(r, "head weight");
            detail::expect_shape(head.weight, {head.out_features, head.in_features},
                                 "head weight", r.pos());
            head.bias = detail::read_array<R>(r, "head bias");
            detail::expect_shape(head.bias, {head.out_features}, "head bias", r.pos());
            m.layers.emplace_back(std::move(head));
        } else {
            throw ParseError("checkpoint: unknown layer kind " + std::to_string(kind),
                             r.pos() - 1);
        }
    }
    if (r.remaining() != 0)
        throw ParseError("checkpoint: trailing bytes after last layer", r.pos());

    try {
        m.validate();
        for (const auto& layer : m.layers)
            if (const auto* conv = std::get_if<ConvLifLayer<R>>(&layer)) {
                require_finite(conv->weight, "checkpoint conv weight");
                require_finite(conv->bias, "checkpoint conv bias");
                for (const auto* np : {conv->conv_bn ? &*conv->conv_bn : nullptr,
                                       conv->mpbn ? &*conv->mpbn : nullptr}) {
                    if (!np) continue;
                    require_finite(np->lambda, "checkpoint norm lambda");
                    require_finite(np->beta, "checkpoint norm beta");
                    require_finite(np->running_mean, "checkpoint running mean");
                    require_finite(np->running_var, "checkpoint running var");
                }
            }
    } catch (const Error& e) {
        throw ParseError(std::string("checkpoint: inconsistent content: ") + e.what(),
                         bytes.size());
    }
    return m;
}

}  // namespace spikefold

#endif  // SPIKEFOLD_CHECKPOINT_HPP_
