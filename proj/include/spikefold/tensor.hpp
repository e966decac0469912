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

#ifndef SPIKEFOLD_TENSOR_HPP_
#define SPIKEFOLD_TENSOR_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "spikefold/errors.hpp"

namespace spikefold {

using Shape = std::vector<std::size_t>;

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

template <class R>
constexpr Dtype dtype_of() {
    static_assert(std::is_same_v<R, float> || std::is_same_v<R, double>,
                  "element type must be float or double");
    return std::is_same_v<R, float> ? Dtype::f32 : Dtype::f64;
}

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

// Dense row-major N-d array. The element width doubles as the dtype tag:
// float tensors are the runtime default, double tensors back every
// numerical oracle in the test suite.
template <class R>
struct Tensor {
    Shape shape;
    std::vector<R> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<R> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor payload of " + std::to_string(data.size()) +
                             " elements does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) {
        std::size_t n = shape_numel(s);
        return Tensor(std::move(s), std::vector<R>(n, R(0)));
    }
    static Tensor full(Shape s, R v) {
        std::size_t n = shape_numel(s);
        return Tensor(std::move(s), std::vector<R>(n, v));
    }
    static Tensor scalar(R v) { return Tensor({1}, {v}); }

    std::size_t numel() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    R& operator[](std::size_t i) { return data[i]; }
    const R& operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    constexpr Dtype dtype() const { return dtype_of<R>(); }

    template <class T>
    Tensor<T> cast() const {
        std::vector<T> out(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out[i] = static_cast<T>(data[i]);
        return Tensor<T>(shape, std::move(out));
    }
};

template <class R>
void check_same_shape(const Tensor<R>& a, const Tensor<R>& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
}

template <class R>
void check_rank(const Tensor<R>& t, std::size_t rank, const char* op) {
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + shape_str(t.shape));
}

template <class R>
bool all_finite(const Tensor<R>& t) {
    for (R v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

template <class R>
void require_finite(const Tensor<R>& t, const char* what) {
    for (std::size_t i = 0; i < t.data.size(); ++i)
        if (!std::isfinite(t.data[i]))
            throw NumericError(std::string(what) + ": non-finite value at flat index " +
                               std::to_string(i));
}

// ---------------------------------------------------------------------------
// Elementwise helpers
// ---------------------------------------------------------------------------

template <class R>
Tensor<R> add(const Tensor<R>& a, const Tensor<R>& b) {
    check_same_shape(a, b, "add");
    Tensor<R> out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
    return out;
}

template <class R>
Tensor<R> sub(const Tensor<R>& a, const Tensor<R>& b) {
    check_same_shape(a, b, "sub");
    Tensor<R> out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
    return out;
}

template <class R>
Tensor<R> mul(const Tensor<R>& a, const Tensor<R>& b) {
    check_same_shape(a, b, "mul");
    Tensor<R> out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
    return out;
}

template <class R>
Tensor<R> scale(const Tensor<R>& a, R s) {
    Tensor<R> out = a;
    for (auto& v : out.data) v *= s;
    return out;
}

template <class R>
void add_into(Tensor<R>& acc, const Tensor<R>& g) {
    check_same_shape(acc, g, "add_into");
    for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
}

// ---------------------------------------------------------------------------
// conv2d: batched 2-D cross-correlation, channels-first
// ---------------------------------------------------------------------------

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, int stride, int padding,
                                   const char* axis) {
    const std::size_t padded = in + 2 * static_cast<std::size_t>(padding);
    if (padded < k)
        throw ConfigError(std::string("conv2d: kernel exceeds padded input along ") + axis);
    const std::size_t span = padded - k;
    if (span % static_cast<std::size_t>(stride) != 0)
        throw ConfigError(std::string("conv2d: non-integral output size along ") + axis +
                          " (input " + std::to_string(in) + ", kernel " + std::to_string(k) +
                          ", stride " + std::to_string(stride) + ", padding " +
                          std::to_string(padding) + ")");
    return span / static_cast<std::size_t>(stride) + 1;
}

template <class R>
Tensor<R> conv2d(const Tensor<R>& input, const Tensor<R>& weight,
                 const std::type_identity_t<Tensor<R>>* bias, int stride, int padding) {
    check_rank(input, 4, "conv2d input");
    check_rank(weight, 4, "conv2d weight");
    if (stride < 1) throw ConfigError("conv2d: stride must be positive");
    if (padding < 0) throw ConfigError("conv2d: padding must be non-negative");

    const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != cin)
        throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                         " input channels, input has " + std::to_string(cin));
    if (bias && !(bias->rank() == 1 && bias->dim(0) == cout))
        throw ShapeError("conv2d: bias shape " + shape_str(bias->shape) + " does not match " +
                         std::to_string(cout) + " output channels");

    const std::size_t oh = conv_out_extent(h, kh, stride, padding, "height");
    const std::size_t ow = conv_out_extent(w, kw, stride, padding, "width");

    Tensor<R> out = Tensor<R>::zeros({n, cout, oh, ow});
    const long pad = padding;
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            const R b0 = bias ? (*bias)[co] : R(0);
            R* dst = &out.data[((b * cout + co) * oh) * ow];
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    R acc = b0;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const R* src = &input.data[((b * cin + ci) * h) * w];
                        const R* ker = &weight.data[((co * cin + ci) * kh) * kw];
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            const long iy = static_cast<long>(y) * stride - pad + static_cast<long>(ky);
                            if (iy < 0 || iy >= static_cast<long>(h)) continue;
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const long ix = static_cast<long>(x) * stride - pad + static_cast<long>(kx);
                                if (ix < 0 || ix >= static_cast<long>(w)) continue;
                                acc += src[iy * static_cast<long>(w) + ix] * ker[ky * kw + kx];
                            }
                        }
                    }
                    dst[y * ow + x] = acc;
                }
            }
        }
    }
    return out;
}

template <class R>
struct ConvGrads {
    Tensor<R> input;
    Tensor<R> weight;
    Tensor<R> bias;  // length Cout; callers without a bias just ignore it
};

// Exact analytic gradients of conv2d. grad_out must have the forward's
// output shape.
template <class R>
ConvGrads<R> conv2d_backward(const Tensor<R>& grad_out, const Tensor<R>& input,
                             const Tensor<R>& weight, int stride, int padding) {
    check_rank(grad_out, 4, "conv2d_backward grad_out");
    check_rank(input, 4, "conv2d_backward input");
    check_rank(weight, 4, "conv2d_backward weight");

    const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != cin) throw ShapeError("conv2d_backward: channel mismatch");
    const std::size_t oh = conv_out_extent(h, kh, stride, padding, "height");
    const std::size_t ow = conv_out_extent(w, kw, stride, padding, "width");
    if (grad_out.shape != Shape{n, cout, oh, ow})
        throw ShapeError("conv2d_backward: grad_out shape " + shape_str(grad_out.shape) +
                         " does not match forward output " + shape_str({n, cout, oh, ow}));

    ConvGrads<R> g{Tensor<R>::zeros(input.shape), Tensor<R>::zeros(weight.shape),
                   Tensor<R>::zeros({cout})};
    const long pad = padding;
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            const R* go = &grad_out.data[((b * cout + co) * oh) * ow];
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    const R gv = go[y * ow + x];
                    if (gv == R(0)) continue;
                    g.bias[co] += gv;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const R* src = &input.data[((b * cin + ci) * h) * w];
                        R* gsrc = &g.input.data[((b * cin + ci) * h) * w];
                        const R* ker = &weight.data[((co * cin + ci) * kh) * kw];
                        R* gker = &g.weight.data[((co * cin + ci) * kh) * kw];
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            const long iy = static_cast<long>(y) * stride - pad + static_cast<long>(ky);
                            if (iy < 0 || iy >= static_cast<long>(h)) continue;
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const long ix = static_cast<long>(x) * stride - pad + static_cast<long>(kx);
                                if (ix < 0 || ix >= static_cast<long>(w)) continue;
                                const std::size_t si = static_cast<std::size_t>(iy) * w +
                                                       static_cast<std::size_t>(ix);
                                gker[ky * kw + kx] += gv * src[si];
                                gsrc[si] += gv * ker[ky * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// linear: affine map on [N, Din]
// ---------------------------------------------------------------------------

template <class R>
Tensor<R> linear(const Tensor<R>& input, const Tensor<R>& weight,
                 const std::type_identity_t<Tensor<R>>* bias) {
    check_rank(input, 2, "linear input");
    check_rank(weight, 2, "linear weight");
    const std::size_t n = input.dim(0), din = input.dim(1), dout = weight.dim(0);
    if (weight.dim(1) != din)
        throw ShapeError("linear: weight expects " + std::to_string(weight.dim(1)) +
                         " features, input has " + std::to_string(din));
    if (bias && !(bias->rank() == 1 && bias->dim(0) == dout))
        throw ShapeError("linear: bias shape mismatch");

    Tensor<R> out = Tensor<R>::zeros({n, dout});
    for (std::size_t b = 0; b < n; ++b) {
        const R* x = &input.data[b * din];
        for (std::size_t o = 0; o < dout; ++o) {
            const R* wrow = &weight.data[o * din];
            R acc = bias ? (*bias)[o] : R(0);
            for (std::size_t i = 0; i < din; ++i) acc += wrow[i] * x[i];
            out.data[b * dout + o] = acc;
        }
    }
    return out;
}

template <class R>
struct LinearGrads {
    Tensor<R> input;
    Tensor<R> weight;
    Tensor<R> bias;
};

template <class R>
LinearGrads<R> linear_backward(const Tensor<R>& grad_out, const Tensor<R>& input,
                               const Tensor<R>& weight) {
    check_rank(grad_out, 2, "linear_backward grad_out");
    const std::size_t n = input.dim(0), din = input.dim(1), dout = weight.dim(0);
    if (grad_out.shape != Shape{n, dout})
        throw ShapeError("linear_backward: grad_out shape mismatch");

    LinearGrads<R> g{Tensor<R>::zeros(input.shape), Tensor<R>::zeros(weight.shape),
                     Tensor<R>::zeros({dout})};
    for (std::size_t b = 0; b < n; ++b) {
        const R* x = &input.data[b * din];
        R* gx = &g.input.data[b * din];
        for (std::size_t o = 0; o < dout; ++o) {
            const R gv = grad_out.data[b * dout + o];
            if (gv == R(0)) continue;
            g.bias[o] += gv;
            const R* wrow = &weight.data[o * din];
            R* gwrow = &g.weight.data[o * din];
            for (std::size_t i = 0; i < din; ++i) {
                gwrow[i] += gv * x[i];
                gx[i] += gv * wrow[i];
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// moments: population mean and biased variance over an axis set
// ---------------------------------------------------------------------------

// Output tensors carry the non-reduced axes, in their original order.
template <class R>
std::pair<Tensor<R>, Tensor<R>> moments(const Tensor<R>& input,
                                        const std::vector<std::size_t>& axes) {
    if (axes.empty()) throw ConfigError("moments: empty reduction axis set");
    std::vector<bool> reduced(input.rank(), false);
    for (std::size_t a : axes) {
        if (a >= input.rank())
            throw ConfigError("moments: axis " + std::to_string(a) + " out of range for " +
                              shape_str(input.shape));
        reduced[a] = true;
    }

    Shape out_shape;
    for (std::size_t d = 0; d < input.rank(); ++d)
        if (!reduced[d]) out_shape.push_back(input.shape[d]);
    if (out_shape.empty()) out_shape.push_back(1);

    const std::size_t groups = shape_numel(out_shape);
    const std::size_t count = input.numel() / groups;
    if (count == 0) throw ConfigError("moments: empty reduction set");

    // Flat index -> group index map via strides of the kept axes.
    std::vector<std::size_t> in_stride(input.rank(), 1);
    for (std::size_t d = input.rank(); d-- > 1;)
        in_stride[d - 1] = in_stride[d] * input.shape[d];
    std::vector<std::size_t> group_stride(input.rank(), 0);
    {
        std::size_t gs = 1;
        for (std::size_t d = input.rank(); d-- > 0;) {
            if (!reduced[d]) {
                group_stride[d] = gs;
                gs *= input.shape[d];
            }
        }
    }

    auto group_of = [&](std::size_t flat) {
        std::size_t g = 0;
        for (std::size_t d = 0; d < input.rank(); ++d) {
            if (group_stride[d] == 0) continue;
            g += ((flat / in_stride[d]) % input.shape[d]) * group_stride[d];
        }
        return g;
    };

    Tensor<R> mean = Tensor<R>::zeros(out_shape);
    Tensor<R> var = Tensor<R>::zeros(out_shape);
    for (std::size_t i = 0; i < input.numel(); ++i) mean[group_of(i)] += input[i];
    const R inv = R(1) / static_cast<R>(count);
    for (auto& m : mean.data) m *= inv;
    for (std::size_t i = 0; i < input.numel(); ++i) {
        const R d = input[i] - mean[group_of(i)];
        var[group_of(i)] += d * d;
    }
    for (auto& v : var.data) v *= inv;
    return {std::move(mean), std::move(var)};
}

// ---------------------------------------------------------------------------
// max_pool2d on [N,C,H,W]; argmax retained for the backward pass
// ---------------------------------------------------------------------------

template <class R>
struct PoolResult {
    Tensor<R> output;
    std::vector<std::size_t> argmax;  // flat input index per output element
};

template <class R>
PoolResult<R> max_pool2d(const Tensor<R>& input, int k) {
    check_rank(input, 4, "max_pool2d input");
    if (k < 1) throw ConfigError("max_pool2d: kernel must be positive");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t kk = static_cast<std::size_t>(k);
    if (h % kk != 0 || w % kk != 0)
        throw ConfigError("max_pool2d: spatial size " + std::to_string(h) + "x" +
                          std::to_string(w) + " not divisible by kernel " + std::to_string(k));
    const std::size_t oh = h / kk, ow = w / kk;

    PoolResult<R> r{Tensor<R>::zeros({n, c, oh, ow}), {}};
    r.argmax.resize(r.output.numel());
    std::size_t oi = 0;
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = ((b * c + ch) * h) * w;
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x, ++oi) {
                    std::size_t best = base + (y * kk) * w + x * kk;
                    R bv = input[best];
                    for (std::size_t dy = 0; dy < kk; ++dy) {
                        for (std::size_t dx = 0; dx < kk; ++dx) {
                            const std::size_t idx = base + (y * kk + dy) * w + (x * kk + dx);
                            if (input[idx] > bv) {  // ties keep the first hit: deterministic
                                bv = input[idx];
                                best = idx;
                            }
                        }
                    }
                    r.output[oi] = bv;
                    r.argmax[oi] = best;
                }
            }
        }
    }
    return r;
}

template <class R>
Tensor<R> max_pool2d_backward(const Tensor<R>& grad_out, const std::vector<std::size_t>& argmax,
                              const Shape& input_shape) {
    if (grad_out.numel() != argmax.size())
        throw StateError("max_pool2d_backward: argmax cache does not match grad_out");
    Tensor<R> g = Tensor<R>::zeros(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
    return g;
}

}  // namespace spikefold

#endif  // SPIKEFOLD_TENSOR_HPP_
