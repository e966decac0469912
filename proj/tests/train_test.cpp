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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "spikefold/reparam.hpp"
#include "spikefold/train.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace spikefold;

TEST_CASE("sgd_step: no momentum, unit lr decrements by exactly the gradient") {
    Model<double> m = fixtures::random_model(1, "c2", MpbnMode::off, 1, 4, 4, 2, 1);
    auto refs = param_refs(m);
    Gradients<double> grads;
    for (auto& r : refs) grads.by_param.push_back(Tensor<double>::full(r.tensor->shape, 0.25));
    std::vector<Tensor<double>> before;
    for (auto& r : refs) before.push_back(*r.tensor);
    std::vector<Tensor<double>> velocity;
    sgd_step(refs, grads, velocity, 1.0, 0.0);
    for (std::size_t i = 0; i < refs.size(); ++i)
        for (std::size_t j = 0; j < refs[i].tensor->numel(); ++j)
            CHECK((*refs[i].tensor)[j] == doctest::Approx(before[i][j] - 0.25).epsilon(1e-12));
}

TEST_CASE("sgd_step: zero gradients leave params fixed while velocity decays") {
    Model<double> m = fixtures::random_model(2, "c2", MpbnMode::off, 1, 4, 4, 2, 1);
    auto refs = param_refs(m);
    Gradients<double> ones, zeros;
    for (auto& r : refs) {
        ones.by_param.push_back(Tensor<double>::full(r.tensor->shape, 1.0));
        zeros.by_param.push_back(Tensor<double>::zeros(r.tensor->shape));
    }
    std::vector<Tensor<double>> velocity;
    sgd_step(refs, ones, velocity, 0.0, 0.9);  // charge the velocity, lr 0 keeps params
    std::vector<Tensor<double>> before;
    for (auto& r : refs) before.push_back(*r.tensor);
    sgd_step(refs, zeros, velocity, 0.0, 0.9);
    for (auto& v : velocity)
        for (double x : v.data) CHECK(x == doctest::Approx(0.9).epsilon(1e-12));
    for (std::size_t i = 0; i < refs.size(); ++i)
        for (std::size_t j = 0; j < refs[i].tensor->numel(); ++j)
            CHECK((*refs[i].tensor)[j] == before[i][j]);
}

TEST_CASE("sgd_step: two steps at momentum 0.9, lr 0.1 decrement 0.29 of a constant gradient") {
    Model<double> m = fixtures::random_model(3, "c2", MpbnMode::off, 1, 4, 4, 2, 1);
    auto refs = param_refs(m);
    const double g = 0.7;
    Gradients<double> grads;
    for (auto& r : refs) grads.by_param.push_back(Tensor<double>::full(r.tensor->shape, g));
    std::vector<Tensor<double>> before;
    for (auto& r : refs) before.push_back(*r.tensor);
    std::vector<Tensor<double>> velocity;
    sgd_step(refs, grads, velocity, 0.1, 0.9);
    sgd_step(refs, grads, velocity, 0.1, 0.9);
    for (std::size_t i = 0; i < refs.size(); ++i)
        for (std::size_t j = 0; j < refs[i].tensor->numel(); ++j)
            CHECK((*refs[i].tensor)[j] ==
                  doctest::Approx(before[i][j] - 0.29 * g).epsilon(1e-12));
}

TEST_CASE("sgd_step aborts on non-finite gradients, naming the parameter") {
    Model<double> m = fixtures::random_model(4, "c2", MpbnMode::off, 1, 4, 4, 2, 1);
    auto refs = param_refs(m);
    Gradients<double> grads;
    for (auto& r : refs) grads.by_param.push_back(Tensor<double>::zeros(r.tensor->shape));
    grads.by_param[0][1] = std::numeric_limits<double>::quiet_NaN();
    std::vector<Tensor<double>> velocity;
    try {
        sgd_step(refs, grads, velocity, 0.1, 0.9);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find(refs[0].name) != std::string::npos);
    }
}

TEST_CASE("cosine_lr endpoints and midpoint") {
    CHECK(cosine_lr(0, 40, 0.1) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(cosine_lr(20, 40, 0.1) == doctest::Approx(0.05).epsilon(1e-12));
    const double last = cosine_lr(99, 100, 0.1);
    CHECK(last > 0.0);
    CHECK(last < 0.001);  // < 1% of lr0 for epochs >= 100
    CHECK_THROWS_AS(cosine_lr(40, 40, 0.1), ConfigError);
}

TEST_CASE("learning-rate sequence is non-increasing and spans (0, lr0]") {
    double prev = 1e9;
    for (int e = 0; e < 37; ++e) {
        const double lr = cosine_lr(e, 37, 0.1);
        CHECK(lr > 0.0);
        CHECK(lr <= 0.1);
        CHECK(lr <= prev);
        prev = lr;
    }
}

TEST_CASE("train: one epoch on 8 samples logs exactly one record") {
    Dataset<double> ds = synthetic<double>(5, 8, 2, 1, 6, 6);
    Model<double> m = build_model<double>(parse_arch("c3"), 1, 6, 6, 2, LifConfig{},
                                          MpbnMode::channel, 2, 5);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.lr0 = 0.05;
    cfg.seed = 5;
    cfg.T = 2;
    TrainResult<double> r = train(m, cfg, ds, ds);
    CHECK(r.log.size() == 1);
    CHECK(r.log[0].epoch == 0);
    CHECK(r.best_epoch == 0);
}

TEST_CASE("train rejects mismatched dataset geometry") {
    Dataset<double> ds = synthetic<double>(6, 8, 2, 2, 6, 6);
    Model<double> m = build_model<double>(parse_arch("c3"), 1, 6, 6, 2, LifConfig{},
                                          MpbnMode::off, 2, 6);
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(train(m, cfg, ds, ds), ConfigError);
}

TEST_CASE("overfit oracle: 200 steps on one mini-batch reach 100% train accuracy") {
    Dataset<double> ds = synthetic<double>(7, 16, 4, 1, 8, 8);
    Model<double> m = build_model<double>(parse_arch("c6"), 1, 8, 8, 4, LifConfig{},
                                          MpbnMode::channel, 2, 7);
    fixtures::quick_train(m, ds.images, ds.labels, 200, 0.05, 2);
    const double acc = evaluate_accuracy(m, ds, 2);
    CHECK(acc == doctest::Approx(1.0));
}

TEST_CASE("same-seed runs are bit-identical in f64 (wall time aside)") {
    Dataset<double> train_ds = synthetic<double>(8, 32, 3, 1, 6, 6);
    Dataset<double> test_ds = synthetic<double>(9, 12, 3, 1, 6, 6);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.lr0 = 0.05;
    cfg.seed = 42;
    cfg.T = 2;
    cfg.mpbn = MpbnMode::channel;

    auto run = [&] {
        Model<double> m = build_model<double>(parse_arch("c4"), 1, 6, 6, 3, LifConfig{},
                                              cfg.mpbn, cfg.T, cfg.seed);
        return train(m, cfg, train_ds, test_ds);
    };
    TrainResult<double> a = run();
    TrainResult<double> b = run();
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].train_loss == b.log[i].train_loss);
        CHECK(a.log[i].test_acc == b.log[i].test_acc);
        CHECK(a.log[i].lr == b.log[i].lr);
    }
    auto ra = param_refs(a.best);
    auto rb = param_refs(b.best);
    for (std::size_t i = 0; i < ra.size(); ++i)
        CHECK(std::memcmp(ra[i].tensor->data.data(), rb[i].tensor->data.data(),
                          ra[i].tensor->numel() * sizeof(double)) == 0);
}

TEST_CASE("landscape: alpha 0 reproduces the model's own loss exactly") {
    Dataset<double> ds = synthetic<double>(10, 24, 3, 1, 6, 6);
    Model<double> m = fixtures::random_model(11, "c3", MpbnMode::channel, 1, 6, 6, 3, 2);
    const double standalone = dataset_loss(m, ds, 2);

    std::vector<Tensor<double>> before;
    auto refs = param_refs(m);
    for (auto& r : refs) before.push_back(*r.tensor);

    auto pts = landscape_1d(m, ds, 11, 0.5, 77, 2);
    CHECK(pts.size() == 11);
    bool found_zero = false;
    for (const auto& p : pts) {
        CHECK(std::isfinite(p.loss));
        if (p.alpha == 0.0) {
            found_zero = true;
            CHECK(p.loss == standalone);  // 0 ulps
        }
    }
    CHECK(found_zero);
    CHECK(std::isfinite(curvature_proxy(pts)));

    // the probe restores the parameters bit-for-bit
    for (std::size_t i = 0; i < refs.size(); ++i)
        CHECK(std::memcmp(refs[i].tensor->data.data(), before[i].data.data(),
                          before[i].numel() * sizeof(double)) == 0);
}

TEST_CASE("landscape rejects folded models") {
    Model<double> m = fixtures::random_model(13, "c3", MpbnMode::channel, 1, 6, 6, 3, 2);
    FoldedModel<double> folded = fold_model(m);
    Dataset<double> ds = synthetic<double>(14, 8, 3, 1, 6, 6);
    CHECK_THROWS_AS(landscape_1d(folded.model, ds, 5, 0.5, 1, 2), ConfigError);
}

TEST_CASE("csv writers emit one record per row with echoed flags") {
    RunLog log{{0, 0.5, 0.75, 0.1, 1.0}, {1, 0.4, 0.8, 0.09, 1.0}};
    const std::string path = "train_test_runlog.csv";
    write_runlog_csv(path, log, {"cmd: unit-test", "seed: 1"});
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    CHECK(line == "# cmd: unit-test");
    std::getline(f, line);
    CHECK(line == "# seed: 1");
    std::getline(f, line);
    CHECK(line == "epoch,train_loss,test_acc,lr,wall_seconds");
    int rows = 0;
    while (std::getline(f, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
    std::remove(path.c_str());
}
