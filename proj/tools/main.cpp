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

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spikefold/checkpoint.hpp"
#include "spikefold/data.hpp"
#include "spikefold/network.hpp"
#include "spikefold/reparam.hpp"
#include "spikefold/train.hpp"

namespace sf = spikefold;

namespace {

std::string g_cmdline;

// SPIKEFOLD_VERBOSE: 0 silences progress chatter, 1 (default) prints
// summaries, 2 adds per-epoch lines. Result data (eval metrics, fold
// reports) is always printed.
int verbosity() {
    static const int level = [] {
        const char* env = std::getenv("SPIKEFOLD_VERBOSE");
        if (!env) return 1;
        try {
            return std::stoi(env);
        } catch (...) {
            return 1;
        }
    }();
    return level;
}

// --------------------------------------------------------------------------
// Dataset specs:
//   synthetic[:k=v,...]   keys n, classes, c, h, w, noise, seed
//   idx:<images>,<labels>
//   cifar:<file>[,<file>...]
// --------------------------------------------------------------------------

struct SyntheticSpec {
    std::size_t n = 800;
    int classes = 4;
    std::size_t c = 1, h = 8, w = 8;
    double noise = 0.25;
    std::uint64_t seed = 1234;
};

SyntheticSpec parse_synthetic_spec(const std::string& args) {
    SyntheticSpec s;
    if (args.empty()) return s;
    std::stringstream ss(args);
    std::string kv;
    while (std::getline(ss, kv, ',')) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw sf::ConfigError("dataset: expected key=value in synthetic spec, got '" + kv +
                                  "'");
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        try {
            if (key == "n") s.n = std::stoull(val);
            else if (key == "classes") s.classes = std::stoi(val);
            else if (key == "c") s.c = std::stoull(val);
            else if (key == "h") s.h = std::stoull(val);
            else if (key == "w") s.w = std::stoull(val);
            else if (key == "noise") s.noise = std::stod(val);
            else if (key == "seed") s.seed = std::stoull(val);
            else throw sf::ConfigError("dataset: unknown synthetic key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw sf::ConfigError("dataset: bad value '" + val + "' for key '" + key + "'");
        }
    }
    return s;
}

template <class R>
sf::Dataset<R> load_dataset(const std::string& spec) {
    if (spec == "synthetic" || spec.rfind("synthetic:", 0) == 0) {
        const SyntheticSpec s =
            parse_synthetic_spec(spec == "synthetic" ? "" : spec.substr(10));
        return sf::synthetic<R>(s.seed, s.n, s.classes, s.c, s.h, s.w, s.noise);
    }
    if (spec.rfind("idx:", 0) == 0) {
        const std::string rest = spec.substr(4);
        const auto comma = rest.find(',');
        if (comma == std::string::npos)
            throw sf::ConfigError("dataset: idx spec needs '<images>,<labels>'");
        auto img = sf::read_file_bytes(rest.substr(0, comma));
        auto lbl = sf::read_file_bytes(rest.substr(comma + 1));
        return sf::load_idx_dataset<R>(img, lbl);
    }
    if (spec.rfind("cifar:", 0) == 0) {
        std::vector<std::uint8_t> all;
        std::stringstream ss(spec.substr(6));
        std::string path;
        while (std::getline(ss, path, ',')) {
            auto bytes = sf::read_file_bytes(path);
            all.insert(all.end(), bytes.begin(), bytes.end());
        }
        return sf::parse_cifar_bin<R>(all);
    }
    throw sf::ConfigError("dataset: unknown spec '" + spec +
                          "' (expected synthetic[...], idx:..., or cifar:...)");
}

// Held-out test set: a fresh draw for synthetic data, a deterministic last
// tenth for file-backed data.
template <class R>
std::pair<sf::Dataset<R>, sf::Dataset<R>> load_train_test(const std::string& spec,
                                                          const std::string& test_spec) {
    sf::Dataset<R> train = load_dataset<R>(spec);
    if (!test_spec.empty()) return {std::move(train), load_dataset<R>(test_spec)};

    if (spec.rfind("synthetic", 0) == 0) {
        SyntheticSpec s = parse_synthetic_spec(spec == "synthetic" ? "" : spec.substr(10));
        s.seed += 1;
        s.n = std::max<std::size_t>(s.n / 4, static_cast<std::size_t>(s.classes));
        return {std::move(train),
                sf::synthetic<R>(s.seed, s.n, s.classes, s.c, s.h, s.w, s.noise)};
    }

    const std::size_t n = train.size();
    const std::size_t n_test = std::max<std::size_t>(n / 10, 1);
    const std::size_t n_train = n - n_test;
    if (n_train == 0) throw sf::ConfigError("dataset: too few samples to split");
    const std::size_t chw = train.images.numel() / n;
    auto slice = [&](std::size_t begin, std::size_t count) {
        sf::Dataset<R> out;
        out.class_count = train.class_count;
        out.images = sf::Tensor<R>::zeros(
            {count, train.images.dim(1), train.images.dim(2), train.images.dim(3)});
        std::copy(train.images.data.begin() + begin * chw,
                  train.images.data.begin() + (begin + count) * chw, out.images.data.begin());
        out.labels.assign(train.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                          train.labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
        return out;
    };
    sf::Dataset<R> test = slice(n_train, n_test);
    sf::Dataset<R> head = slice(0, n_train);
    return {std::move(head), std::move(test)};
}

std::vector<std::string> echo_lines() { return {"cmd: " + g_cmdline}; }

std::vector<std::string> echo_lines(std::uint64_t seed) {
    return {"cmd: " + g_cmdline, "seed: " + std::to_string(seed)};
}

// --------------------------------------------------------------------------
// train
// --------------------------------------------------------------------------

struct TrainFlags {
    std::string dataset;
    std::string test_dataset;
    std::string arch = "c8,c8";
    std::string mpbn = "channel";
    std::string dtype = "f32";
    std::string out = "model.ckpt";
    std::string log;
    int epochs = 40;
    std::size_t batch = 64;
    double lr = 0.1;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    int T = 2;
    double tau = 0.25;
    double vth = 0.5;
    double eps = 1e-5;
    double bn_momentum = 0.1;
    bool augment_hflip = false;
    int crop_pad = 0;
};

sf::MpbnMode parse_mpbn(const std::string& s) {
    if (s == "off") return sf::MpbnMode::off;
    if (s == "channel") return sf::MpbnMode::channel;
    if (s == "element") return sf::MpbnMode::element;
    throw sf::ConfigError("--mpbn must be off, channel or element");
}

template <class R>
int run_train(const TrainFlags& f) {
    auto [train_ds, test_ds] = load_train_test<R>(f.dataset, f.test_dataset);
    train_ds.validate();
    test_ds.validate();

    sf::TrainConfig cfg;
    cfg.epochs = f.epochs;
    cfg.batch_size = f.batch;
    cfg.lr0 = f.lr;
    cfg.momentum = f.momentum;
    cfg.seed = f.seed;
    cfg.T = f.T;
    cfg.mpbn = parse_mpbn(f.mpbn);
    cfg.augment_hflip = f.augment_hflip;
    cfg.augment_crop_pad = f.crop_pad;

    sf::Model<R> model = sf::build_model<R>(
        sf::parse_arch(f.arch), train_ds.images.dim(1), train_ds.images.dim(2),
        train_ds.images.dim(3), static_cast<std::size_t>(train_ds.class_count),
        sf::LifConfig{f.tau, f.vth}, cfg.mpbn, cfg.T, cfg.seed, static_cast<R>(f.eps),
        static_cast<R>(f.bn_momentum));

    if (verbosity() >= 1)
        std::cout << "training: " << train_ds.size() << " train / " << test_ds.size()
                  << " test samples, arch " << f.arch << ", T=" << f.T << ", mpbn=" << f.mpbn
                  << ", dtype=" << f.dtype << "\n";

    sf::TrainResult<R> result = sf::train(model, cfg, train_ds, test_ds);
    if (verbosity() >= 2)
        for (const auto& rec : result.log)
            std::cout << "epoch " << rec.epoch << ": loss " << rec.train_loss << ", test acc "
                      << rec.test_acc << ", lr " << rec.lr << "\n";

    auto bytes = sf::save_model(result.best);
    sf::write_file_bytes(f.out, bytes);
    const std::string log_path = f.log.empty() ? f.out + ".runlog.csv" : f.log;
    sf::write_runlog_csv(log_path, result.log, echo_lines(f.seed));

    if (verbosity() >= 1)
        std::cout << "best epoch " << result.best_epoch << " with test accuracy "
                  << result.best_acc << "\nwrote " << f.out << " and " << log_path << "\n";
    return 0;
}

// --------------------------------------------------------------------------
// fold
// --------------------------------------------------------------------------

template <class R>
int run_fold(const std::string& in, const std::string& out, const std::string& report_path) {
    const auto bytes = sf::read_file_bytes(in);
    sf::Model<R> model = sf::load_model<R>(bytes);
    sf::FoldedModel<R> folded = sf::fold_model(model);
    sf::write_file_bytes(out, sf::save_model(folded.model));

    std::ostringstream report;
    for (const auto& r : folded.reports) report << r.to_kv() << "\n";
    std::cout << report.str() << "wrote " << out << "\n";
    if (!report_path.empty()) {
        std::ofstream rf(report_path, std::ios::trunc);
        if (!rf) throw sf::IoError("cannot open '" + report_path + "' for writing");
        for (const auto& line : echo_lines()) rf << "# " << line << "\n";
        rf << report.str();
    }
    return 0;
}

// --------------------------------------------------------------------------
// eval
// --------------------------------------------------------------------------

template <class R>
int run_eval(const sf::Model<R>& model, const std::string& dataset, int T,
             std::size_t batch) {
    sf::Dataset<R> ds = load_dataset<R>(dataset);
    ds.validate();
    if (T <= 0) T = model.time_steps;
    if (T > model.time_steps)
        std::cerr << "warning: T=" << T << " exceeds the checkpoint's trained T="
                  << model.time_steps << " (thresholds are time-independent; proceeding)\n";

    sf::OpCounters cost;
    const auto t0 = std::chrono::steady_clock::now();
    const double acc = sf::evaluate_accuracy(model, ds, T, batch, &cost);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const double n = static_cast<double>(ds.size());
    std::cout << "mode: " << (model.mode == sf::ModelMode::folded ? "folded" : "training")
              << "\nsamples: " << ds.size() << "\ntop1_accuracy: " << acc
              << "\nmean_latency_ms: " << 1e3 * wall / n
              << "\nnorm_elements_per_sample: " << static_cast<double>(cost.norm_elements) / n
              << "\nelementwise_ops_per_sample: "
              << static_cast<double>(cost.elementwise_ops) / n << "\n";
    return 0;
}

// --------------------------------------------------------------------------
// landscape
// --------------------------------------------------------------------------

template <class R>
int run_landscape(sf::Model<R>& model, const std::string& dataset, int points, double radius,
                  std::uint64_t seed, int T, const std::string& out) {
    sf::Dataset<R> ds = load_dataset<R>(dataset);
    ds.validate();
    if (T <= 0) T = model.time_steps;
    auto pts = sf::landscape_1d(model, ds, points, radius, seed, T);
    sf::write_landscape_csv(out, pts, echo_lines(seed));
    std::cout << "wrote " << out << " (curvature_proxy=" << sf::curvature_proxy(pts) << ")\n";
    return 0;
}

// --------------------------------------------------------------------------
// inspect
// --------------------------------------------------------------------------

template <class R>
int run_inspect(const sf::Model<R>& model, const sf::CheckpointHeader& h) {
    std::cout << "mode: " << (h.mode == sf::ModelMode::folded ? "folded" : "training")
              << "\ndtype: " << (h.dtype == sf::Dtype::f32 ? "f32" : "f64")
              << "\nmpbn: " << sf::mpbn_mode_name(h.mpbn) << "\nT: " << h.time_steps
              << "\ntau: " << h.tau << "\nv_th: " << h.v_th << "\neps: " << h.eps
              << "\nbn_momentum: " << h.momentum << "\ninput: (" << h.in_c << "," << h.in_h
              << "," << h.in_w << ")\nclasses: " << h.n_classes << "\nlayers:\n";
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        std::cout << "  [" << i << "] ";
        if (const auto* conv = std::get_if<sf::ConvLifLayer<R>>(&model.layers[i])) {
            std::cout << "conv_lif " << conv->in_ch << "->" << conv->out_ch << " k"
                      << conv->kernel << (conv->encoder ? " (encoder)" : "");
            if (conv->rule) {
                double lo = conv->rule->threshold[0], hi = lo;
                std::size_t flipped = 0;
                for (std::size_t j = 0; j < conv->rule->threshold.numel(); ++j) {
                    lo = std::min(lo, static_cast<double>(conv->rule->threshold[j]));
                    hi = std::max(hi, static_cast<double>(conv->rule->threshold[j]));
                    if (conv->rule->direction[j] < R(0)) ++flipped;
                }
                std::cout << " thresholds[" << conv->rule->threshold.numel() << "] in [" << lo
                          << "," << hi << "] flipped=" << flipped;
            }
        } else if (const auto* pool = std::get_if<sf::PoolLayer>(&model.layers[i])) {
            std::cout << "max_pool k" << pool->kernel;
        } else {
            const auto* head = std::get_if<sf::LinearOutLayer<R>>(&model.layers[i]);
            std::cout << "linear_out " << head->in_features << "->" << head->out_features;
        }
        std::cout << "\n";
    }
    return 0;
}

template <class F>
int with_checkpoint(const std::string& path, F&& fn) {
    const auto bytes = sf::read_file_bytes(path);
    const sf::CheckpointHeader h = sf::peek_checkpoint(bytes);
    if (h.dtype == sf::Dtype::f32) {
        sf::Model<float> m = sf::load_model<float>(bytes);
        return fn(m, h);
    }
    sf::Model<double> m = sf::load_model<double>(bytes);
    return fn(m, h);
}

}  // namespace

int main(int argc, char** argv) {
    {
        std::ostringstream os;
        for (int i = 0; i < argc; ++i) os << (i ? " " : "") << argv[i];
        g_cmdline = os.str();
    }

    CLI::App app{"spiking-network training, threshold folding and inference"};
    app.require_subcommand(1);

    TrainFlags tf;
    auto* t = app.add_subcommand("train", "train a model and write a checkpoint");
    t->add_option("--dataset", tf.dataset, "synthetic[:k=v,...] | idx:<imgs>,<lbls> | cifar:<bin,...>")
        ->required();
    t->add_option("--test-dataset", tf.test_dataset, "held-out set (defaults to a split/draw)");
    t->add_option("--arch", tf.arch, "layer grammar, e.g. c8,c16,p,c16");
    t->add_option("--T", tf.T, "simulation time steps");
    t->add_option("--mpbn", tf.mpbn, "off | channel | element");
    t->add_option("--epochs", tf.epochs);
    t->add_option("--batch", tf.batch);
    t->add_option("--lr", tf.lr, "initial learning rate (cosine decay to 0)");
    t->add_option("--momentum", tf.momentum, "SGD momentum");
    t->add_option("--seed", tf.seed);
    t->add_option("--out", tf.out, "checkpoint output path");
    t->add_option("--log", tf.log, "run-log CSV path (default <out>.runlog.csv)");
    t->add_option("--dtype", tf.dtype)->check(CLI::IsMember({"f32", "f64"}));
    t->add_option("--tau", tf.tau, "membrane leak");
    t->add_option("--vth", tf.vth, "baseline firing threshold");
    t->add_option("--eps", tf.eps, "normalization epsilon");
    t->add_option("--bn-momentum", tf.bn_momentum, "running-statistics EMA momentum");
    t->add_flag("--augment-hflip", tf.augment_hflip, "random horizontal flip");
    t->add_option("--crop-pad", tf.crop_pad, "zero-pad + random-crop augmentation");

    std::string fold_in, fold_out = "folded.ckpt", fold_report;
    auto* fo = app.add_subcommand("fold", "fold BN/MPBN into weights and firing thresholds");
    fo->add_option("--in", fold_in, "training-mode checkpoint")->required();
    fo->add_option("--out", fold_out, "folded checkpoint output path");
    fo->add_option("--report", fold_report, "fold report file (key=value records)");

    std::string eval_model, eval_dataset;
    int eval_T = 0;
    std::size_t eval_batch = 256;
    auto* ev = app.add_subcommand("eval", "top-1 accuracy and inference cost of a checkpoint");
    ev->add_option("--model", eval_model)->required();
    ev->add_option("--dataset", eval_dataset)->required();
    ev->add_option("--T", eval_T, "override time steps (default: checkpoint's T)");
    ev->add_option("--batch", eval_batch);

    std::string land_model, land_dataset, land_out = "landscape.csv";
    int land_points = 41, land_T = 0;
    double land_radius = 1.0;
    std::uint64_t land_seed = 7;
    auto* la = app.add_subcommand("landscape", "1-D loss probe along a filter-normalized direction");
    la->add_option("--model", land_model)->required();
    la->add_option("--dataset", land_dataset)->required();
    la->add_option("--points", land_points);
    la->add_option("--radius", land_radius);
    la->add_option("--seed", land_seed);
    la->add_option("--T", land_T, "override time steps");
    la->add_option("--out", land_out);

    std::string inspect_model;
    auto* in = app.add_subcommand("inspect", "print checkpoint header and layer summary");
    in->add_option("--model", inspect_model)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (t->parsed()) {
            return tf.dtype == "f64" ? run_train<double>(tf) : run_train<float>(tf);
        }
        if (fo->parsed()) {
            const auto header = sf::peek_checkpoint(sf::read_file_bytes(fold_in));
            return header.dtype == sf::Dtype::f32
                       ? run_fold<float>(fold_in, fold_out, fold_report)
                       : run_fold<double>(fold_in, fold_out, fold_report);
        }
        if (ev->parsed()) {
            return with_checkpoint(eval_model, [&](auto& model, const sf::CheckpointHeader&) {
                return run_eval(model, eval_dataset, eval_T, eval_batch);
            });
        }
        if (la->parsed()) {
            return with_checkpoint(land_model, [&](auto& model, const sf::CheckpointHeader&) {
                return run_landscape(model, land_dataset, land_points, land_radius, land_seed,
                                     land_T, land_out);
            });
        }
        if (in->parsed()) {
            return with_checkpoint(inspect_model,
                                   [&](auto& model, const sf::CheckpointHeader& h) {
                                       return run_inspect(model, h);
                                   });
        }
    } catch (const sf::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
