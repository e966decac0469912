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

#ifndef SPIKEFOLD_TRAIN_HPP_
#define SPIKEFOLD_TRAIN_HPP_

#include <chrono>
#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "spikefold/data.hpp"
#include "spikefold/errors.hpp"
#include "spikefold/network.hpp"
#include "spikefold/rng.hpp"

namespace spikefold {

struct TrainConfig {
    int epochs = 40;
    std::size_t batch_size = 64;
    double lr0 = 0.1;
    double momentum = 0.9;  // SGD momentum; the BN EMA momentum lives in NormParams
    std::uint64_t seed = 1;
    int T = 2;
    MpbnMode mpbn = MpbnMode::channel;
    bool augment_hflip = false;
    int augment_crop_pad = 0;

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (!(lr0 > 0.0)) throw ConfigError("train: lr0 must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw ConfigError("train: momentum must lie in [0,1)");
        if (T < 1) throw ConfigError("train: T must be >= 1");
    }
};

struct RunRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double test_acc = 0.0;
    double lr = 0.0;
    double wall_seconds = 0.0;  // measured, not part of determinism guarantees
};

using RunLog = std::vector<RunRecord>;

// lr = lr0 * (1 + cos(pi * epoch / epochs)) / 2
inline double cosine_lr(int epoch, int epochs, double lr0) {
    if (epochs < 1 || epoch < 0 || epoch >= epochs)
        throw ConfigError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0," +
                          std::to_string(epochs) + ")");
    return lr0 * (1.0 + std::cos(3.14159265358979323846 * epoch / epochs)) / 2.0;
}

// velocity <- momentum*velocity + grad; param <- param - lr*velocity.
// Aborts on the first non-finite gradient rather than corrupting the model.
template <class R>
void sgd_step(std::vector<ParamRef<R>>& params, const Gradients<R>& grads,
              std::vector<Tensor<R>>& velocity, R lr, R momentum) {
    if (grads.by_param.size() != params.size())
        throw ConfigError("sgd_step: gradient list does not match parameter list");
    if (velocity.empty()) {
        velocity.reserve(params.size());
        for (auto& p : params) velocity.push_back(Tensor<R>::zeros(p.tensor->shape));
    }
    if (velocity.size() != params.size())
        throw ConfigError("sgd_step: velocity list does not match parameter list");

    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor<R>& g = grads.by_param[i];
        check_same_shape(*params[i].tensor, g, "sgd_step");
        for (std::size_t j = 0; j < g.numel(); ++j)
            if (!std::isfinite(g[j]))
                throw NumericError("sgd_step: non-finite gradient in " + params[i].name +
                                   " at flat index " + std::to_string(j));
        Tensor<R>& v = velocity[i];
        Tensor<R>& p = *params[i].tensor;
        for (std::size_t j = 0; j < g.numel(); ++j) {
            v[j] = momentum * v[j] + g[j];
            p[j] -= lr * v[j];
        }
    }
}

template <class R>
double evaluate_accuracy(const Model<R>& model, const Dataset<R>& ds, int T,
                         std::size_t batch_size = 256, OpCounters* cost = nullptr) {
    if (ds.size() == 0) throw ConfigError("evaluate: empty dataset");
    std::size_t correct = 0;
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t at = 0; at < ds.size(); at += batch_size) {
        const std::size_t end = std::min(ds.size(), at + batch_size);
        Batch<R> b = gather(ds, order, at, end);
        Tensor<R> logits = forward_eval(model, b.images, T, cost);
        const std::size_t k = logits.dim(1);
        for (std::size_t i = 0; i < b.labels.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < k; ++j)
                if (logits[i * k + j] > logits[i * k + best]) best = j;
            if (static_cast<int>(best) == b.labels[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

template <class R>
struct TrainResult {
    Model<R> best;  // checkpoint of the best test-accuracy epoch
    int best_epoch = -1;
    double best_acc = 0.0;
    RunLog log;
};

// Epoch loop: cosine-decayed SGD with momentum over seeded shuffles.
// Deterministic given the config seed (wall-clock fields aside).
template <class R>
TrainResult<R> train(Model<R>& model, const TrainConfig& cfg, const Dataset<R>& train_ds,
                     const Dataset<R>& test_ds) {
    cfg.validate();
    train_ds.validate();
    test_ds.validate();
    if (model.mode != ModelMode::training)
        throw ConfigError("train: model is folded");
    if (train_ds.images.dim(1) != model.in_ch || train_ds.images.dim(2) != model.in_h ||
        train_ds.images.dim(3) != model.in_w)
        throw ConfigError("train: dataset images " + shape_str(train_ds.images.shape) +
                          " do not match model input");
    if (static_cast<std::size_t>(train_ds.class_count) > model.n_classes)
        throw ConfigError("train: dataset has more classes than the model head");

    Rng rng = Rng(cfg.seed).fork(0x7261696e);  // training-loop stream
    auto refs = param_refs(model);
    std::vector<Tensor<R>> velocity;

    TrainResult<R> result;
    result.best = model;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr0);

        std::vector<std::size_t> order = shuffled_indices(train_ds.size(), rng);
        double loss_sum = 0.0;
        for (std::size_t at = 0; at < train_ds.size(); at += cfg.batch_size) {
            const std::size_t end = std::min(train_ds.size(), at + cfg.batch_size);
            Batch<R> batch = gather(train_ds, order, at, end);
            if (cfg.augment_hflip) augment_hflip(batch.images, rng);
            if (cfg.augment_crop_pad > 0)
                augment_random_crop(batch.images, cfg.augment_crop_pad, rng);

            TrainForward<R> fwd = forward_train(model, batch.images, cfg.T);
            LossResult<R> loss = cross_entropy(fwd.logits, batch.labels);
            if (!std::isfinite(static_cast<double>(loss.loss)))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
            loss_sum += static_cast<double>(loss.loss) * static_cast<double>(end - at);

            Gradients<R> grads = stbp_backward(model, fwd.trace, loss.grad_logits);
            sgd_step(refs, grads, velocity, static_cast<R>(lr), static_cast<R>(cfg.momentum));
        }

        const double test_acc = evaluate_accuracy(model, test_ds, cfg.T);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back({epoch, loss_sum / static_cast<double>(train_ds.size()), test_acc,
                              lr, wall});
        if (test_acc > result.best_acc || result.best_epoch < 0) {
            result.best_acc = test_acc;
            result.best_epoch = epoch;
            result.best = model;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// 1-D loss landscape probe
// ---------------------------------------------------------------------------

template <class R>
struct LandscapePoint {
    double alpha = 0.0;
    double loss = 0.0;
};

template <class R>
double dataset_loss(const Model<R>& model, const Dataset<R>& ds, int T,
                    std::size_t batch_size = 256) {
    double sum = 0.0;
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t at = 0; at < ds.size(); at += batch_size) {
        const std::size_t end = std::min(ds.size(), at + batch_size);
        Batch<R> b = gather(ds, order, at, end);
        Tensor<R> logits = forward_eval(model, b.images, T);
        sum += static_cast<double>(cross_entropy(logits, b.labels).loss) *
               static_cast<double>(end - at);
    }
    return sum / static_cast<double>(ds.size());
}

// Loss of (params + alpha*direction) on a seeded, filter-normalized random
// direction, evaluated with frozen running statistics. alpha = 0 reuses the
// untouched parameters, so that row reproduces the model's own loss
// bit-for-bit.
template <class R>
std::vector<LandscapePoint<R>> landscape_1d(Model<R>& model, const Dataset<R>& ds, int n_points,
                                            double radius, std::uint64_t seed, int T) {
    if (model.mode != ModelMode::training)
        throw ConfigError("landscape: needs a training-mode model (folded thresholds have no "
                          "normalized loss surface)");
    if (n_points < 1) throw ConfigError("landscape: n_points must be >= 1");
    if (!(radius > 0.0)) throw ConfigError("landscape: radius must be positive");

    auto refs = param_refs(model);
    Rng rng(seed);

    // Gaussian direction, rescaled per filter / row / tensor to the norm of
    // the corresponding model block.
    std::vector<Tensor<R>> direction;
    direction.reserve(refs.size());
    for (auto& ref : refs) {
        Tensor<R> d = Tensor<R>::zeros(ref.tensor->shape);
        for (auto& v : d.data) v = static_cast<R>(rng.gaussian());
        const Tensor<R>& p = *ref.tensor;
        auto normalize_block = [&](std::size_t begin, std::size_t len) {
            double dn = 0.0, pn = 0.0;
            for (std::size_t i = begin; i < begin + len; ++i) {
                dn += static_cast<double>(d[i]) * static_cast<double>(d[i]);
                pn += static_cast<double>(p[i]) * static_cast<double>(p[i]);
            }
            const double s = dn > 0.0 ? std::sqrt(pn / dn) : 0.0;
            for (std::size_t i = begin; i < begin + len; ++i)
                d[i] = static_cast<R>(static_cast<double>(d[i]) * s);
        };
        if (ref.kind == ParamKind::conv_weight || ref.kind == ParamKind::linear_weight) {
            const std::size_t rows = ref.tensor->dim(0);
            const std::size_t per = ref.tensor->numel() / rows;
            for (std::size_t f = 0; f < rows; ++f) normalize_block(f * per, per);
        } else {
            normalize_block(0, d.numel());
        }
        direction.push_back(std::move(d));
    }

    std::vector<Tensor<R>> original;
    original.reserve(refs.size());
    for (auto& ref : refs) original.push_back(*ref.tensor);

    std::vector<LandscapePoint<R>> points;
    points.reserve(static_cast<std::size_t>(n_points));
    const double step = n_points > 1 ? 2.0 * radius / (n_points - 1) : 0.0;
    const double mid = (n_points - 1) / 2.0;
    for (int i = 0; i < n_points; ++i) {
        const double alpha = (static_cast<double>(i) - mid) * step;
        if (alpha != 0.0) {
            for (std::size_t j = 0; j < refs.size(); ++j) {
                Tensor<R>& p = *refs[j].tensor;
                for (std::size_t k = 0; k < p.numel(); ++k)
                    p[k] = original[j][k] + static_cast<R>(alpha) * direction[j][k];
            }
        } else {
            for (std::size_t j = 0; j < refs.size(); ++j) *refs[j].tensor = original[j];
        }
        const double loss = dataset_loss(model, ds, T);
        if (!std::isfinite(loss))
            throw NumericError("landscape: non-finite loss at alpha " + std::to_string(alpha));
        points.push_back({alpha, loss});
    }
    for (std::size_t j = 0; j < refs.size(); ++j) *refs[j].tensor = original[j];
    return points;
}

// Mean |second difference| / step^2 over the interior probe points.
template <class R>
double curvature_proxy(const std::vector<LandscapePoint<R>>& pts) {
    if (pts.size() < 3) return 0.0;
    const double h = pts[1].alpha - pts[0].alpha;
    double acc = 0.0;
    for (std::size_t i = 1; i + 1 < pts.size(); ++i)
        acc += std::abs(pts[i + 1].loss - 2.0 * pts[i].loss + pts[i - 1].loss);
    return acc / ((pts.size() - 2) * h * h);
}

// ---------------------------------------------------------------------------
// CSV emission (one comma-separated record per row; '#' lines echo flags)
// ---------------------------------------------------------------------------

inline void write_runlog_csv(const std::string& path, const RunLog& log,
                             const std::vector<std::string>& header_lines) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& line : header_lines) f << "# " << line << "\n";
    f << "epoch,train_loss,test_acc,lr,wall_seconds\n";
    f.precision(17);
    for (const auto& r : log)
        f << r.epoch << ',' << r.train_loss << ',' << r.test_acc << ',' << r.lr << ','
          << r.wall_seconds << "\n";
    if (!f) throw IoError("failed writing '" + path + "'");
}

template <class R>
void write_landscape_csv(const std::string& path, const std::vector<LandscapePoint<R>>& pts,
                         const std::vector<std::string>& header_lines) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& line : header_lines) f << "# " << line << "\n";
    f << "alpha,loss\n";
    f.precision(17);
    for (const auto& p : pts) f << p.alpha << ',' << p.loss << "\n";
    f << "# curvature_proxy=" << curvature_proxy(pts) << "\n";
    if (!f) throw IoError("failed writing '" + path + "'");
}

}  // namespace spikefold

#endif  // SPIKEFOLD_TRAIN_HPP_
