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

#ifndef SPIKEFOLD_DATA_HPP_
#define SPIKEFOLD_DATA_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spikefold/errors.hpp"
#include "spikefold/rng.hpp"
#include "spikefold/tensor.hpp"

namespace spikefold {

using ByteSpan = std::span<const std::uint8_t>;

template <class R>
struct Dataset {
    Tensor<R> images;  // [N,C,H,W], values in [0,1]
    std::vector<int> labels;
    int class_count = 0;

    std::size_t size() const { return labels.size(); }

    void validate() const {
        if (images.rank() != 4 || images.dim(0) != labels.size())
            throw ConfigError("dataset: image tensor does not match label count");
        for (int y : labels)
            if (y < 0 || y >= class_count)
                throw ConfigError("dataset: label " + std::to_string(y) + " out of range");
        for (R v : images.data)
            if (!(v >= R(0) && v <= R(1)))
                throw ConfigError("dataset: pixel outside [0,1]");
    }
};

// ---------------------------------------------------------------------------
// Raw byte-level parsers (src/data_formats.cpp). Total over arbitrary
// input: they either return a valid structure or throw ParseError with the
// offending byte offset.
// ---------------------------------------------------------------------------

struct IdxImagesRaw {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;  // count*rows*cols, row-major
};

struct CifarRaw {
    std::size_t count = 0;
    std::vector<std::uint8_t> labels;
    std::vector<std::uint8_t> pixels;  // count * 3*32*32, channel-planar RGB
};

IdxImagesRaw parse_idx_images_raw(ByteSpan bytes);
std::vector<std::uint8_t> parse_idx_labels_raw(ByteSpan bytes);
CifarRaw parse_cifar_raw(ByteSpan bytes);

// ---------------------------------------------------------------------------
// Typed wrappers: pixel bytes scale by 1/255 into [0,1]
// ---------------------------------------------------------------------------

template <class R>
Tensor<R> parse_idx_images(ByteSpan bytes) {
    IdxImagesRaw raw = parse_idx_images_raw(bytes);
    Tensor<R> t = Tensor<R>::zeros({raw.count, 1, raw.rows, raw.cols});
    for (std::size_t i = 0; i < raw.pixels.size(); ++i)
        t[i] = static_cast<R>(raw.pixels[i]) / R(255);
    return t;
}

inline std::vector<int> parse_idx_labels(ByteSpan bytes) {
    auto raw = parse_idx_labels_raw(bytes);
    return std::vector<int>(raw.begin(), raw.end());
}

template <class R>
Dataset<R> load_idx_dataset(ByteSpan image_bytes, ByteSpan label_bytes) {
    Dataset<R> ds;
    ds.images = parse_idx_images<R>(image_bytes);
    ds.labels = parse_idx_labels(label_bytes);
    if (ds.images.dim(0) != ds.labels.size())
        throw ParseError("idx: image count " + std::to_string(ds.images.dim(0)) +
                             " does not match label count " + std::to_string(ds.labels.size()),
                         0);
    int max_label = -1;
    for (int y : ds.labels) max_label = std::max(max_label, y);
    ds.class_count = max_label + 1;
    return ds;
}

template <class R>
Dataset<R> parse_cifar_bin(ByteSpan bytes) {
    CifarRaw raw = parse_cifar_raw(bytes);
    Dataset<R> ds;
    ds.images = Tensor<R>::zeros({raw.count, 3, 32, 32});
    for (std::size_t i = 0; i < raw.pixels.size(); ++i)
        ds.images[i] = static_cast<R>(raw.pixels[i]) / R(255);
    ds.labels.assign(raw.labels.begin(), raw.labels.end());
    ds.class_count = 10;
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale dataset
// ---------------------------------------------------------------------------

// Class-conditional Gaussian blobs: each class owns a fixed mean image (a
// smooth bump at a class-specific position with seed-fixed per-channel
// amplitudes); samples add isotropic pixel noise and clip into [0,1].
// Labels are assigned round-robin so every class is represented. At the
// default noise level the classes stay close to linearly separable, which
// gives the overfit and trend harnesses headroom.
template <class R>
Dataset<R> synthetic(std::uint64_t seed, std::size_t n, int classes, std::size_t channels,
                     std::size_t height, std::size_t width, double noise_std = 0.25) {
    if (classes < 2) throw ConfigError("synthetic: need at least 2 classes");
    if (n == 0 || channels == 0 || height < 2 || width < 2)
        throw ConfigError("synthetic: degenerate shape");

    Rng rng(seed);
    Rng layout = rng.fork(0xb10b);

    // Fixed per-class means.
    const std::size_t chw = channels * height * width;
    std::vector<double> means(static_cast<std::size_t>(classes) * chw, 0.0);
    const double ring = 0.30 * static_cast<double>(std::min(height, width));
    const double cy0 = 0.5 * static_cast<double>(height - 1);
    const double cx0 = 0.5 * static_cast<double>(width - 1);
    const double radius = 0.22 * static_cast<double>(std::min(height, width));
    for (int k = 0; k < classes; ++k) {
        const double ang = 6.283185307179586 * static_cast<double>(k) / classes;
        const double cy = cy0 + ring * std::sin(ang);
        const double cx = cx0 + ring * std::cos(ang);
        for (std::size_t c = 0; c < channels; ++c) {
            const double amp = 0.55 + 0.4 * layout.uniform();
            for (std::size_t y = 0; y < height; ++y) {
                for (std::size_t x = 0; x < width; ++x) {
                    const double dy = static_cast<double>(y) - cy;
                    const double dx = static_cast<double>(x) - cx;
                    const double v = amp * std::exp(-(dy * dy + dx * dx) / (2 * radius * radius));
                    means[(static_cast<std::size_t>(k) * channels + c) * height * width +
                          y * width + x] = v;
                }
            }
        }
    }

    Dataset<R> ds;
    ds.class_count = classes;
    ds.images = Tensor<R>::zeros({n, channels, height, width});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int k = static_cast<int>(i % static_cast<std::size_t>(classes));
        ds.labels[i] = k;
        const double* mu = &means[static_cast<std::size_t>(k) * chw];
        R* dst = &ds.images.data[i * chw];
        for (std::size_t j = 0; j < chw; ++j) {
            const double v = mu[j] + noise_std * rng.gaussian();
            dst[j] = static_cast<R>(std::clamp(v, 0.0, 1.0));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Batching and augmentation
// ---------------------------------------------------------------------------

template <class R>
struct Batch {
    Tensor<R> images;
    std::vector<int> labels;
};

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    return idx;
}

template <class R>
Batch<R> gather(const Dataset<R>& ds, const std::vector<std::size_t>& order, std::size_t begin,
                std::size_t end) {
    if (end > order.size() || begin > end) throw ConfigError("gather: bad batch range");
    const std::size_t chw = ds.images.numel() / std::max<std::size_t>(ds.size(), 1);
    Batch<R> b;
    b.images = Tensor<R>::zeros(
        {end - begin, ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)});
    b.labels.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        const std::size_t src = order[i];
        std::copy(ds.images.data.begin() + src * chw, ds.images.data.begin() + (src + 1) * chw,
                  b.images.data.begin() + (i - begin) * chw);
        b.labels[i - begin] = ds.labels[src];
    }
    return b;
}

// In-place horizontal flip of each sample with probability 1/2.
template <class R>
void augment_hflip(Tensor<R>& images, Rng& rng) {
    check_rank(images, 4, "augment_hflip");
    const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    for (std::size_t i = 0; i < n; ++i) {
        if (!rng.coin()) continue;
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y) {
                R* row = &images.data[((i * c + ch) * h + y) * w];
                std::reverse(row, row + w);
            }
    }
}

// Zero-pad by `pad` on each side, then crop back to the original size at a
// per-sample random offset.
template <class R>
void augment_random_crop(Tensor<R>& images, int pad, Rng& rng) {
    check_rank(images, 4, "augment_random_crop");
    if (pad <= 0) return;
    const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const std::size_t p = static_cast<std::size_t>(pad);
    std::vector<R> padded((h + 2 * p) * (w + 2 * p));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t oy = rng.below(2 * p + 1);
        const std::size_t ox = rng.below(2 * p + 1);
        for (std::size_t ch = 0; ch < c; ++ch) {
            R* plane = &images.data[(i * c + ch) * h * w];
            std::fill(padded.begin(), padded.end(), R(0));
            for (std::size_t y = 0; y < h; ++y)
                std::copy(plane + y * w, plane + (y + 1) * w,
                          padded.begin() + (y + p) * (w + 2 * p) + p);
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    plane[y * w + x] = padded[(y + oy) * (w + 2 * p) + x + ox];
        }
    }
}

}  // namespace spikefold

#endif  // SPIKEFOLD_DATA_HPP_
