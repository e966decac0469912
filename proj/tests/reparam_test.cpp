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

#include "spikefold/reparam.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace spikefold;
using oracles::max_rel_err;
using oracles::random_tensor;

namespace {

NormParams<double> make_params(double lambda, double beta, double mean, double var,
                               double eps = 0.0) {
    NormParams<double> p = NormParams<double>::identity({1}, Granularity::channel, eps);
    p.lambda[0] = lambda;
    p.beta[0] = beta;
    p.running_mean[0] = mean;
    p.running_var[0] = var;
    return p;
}

// Training-path firing decision for a scalar membrane value.
bool mpbn_fires(const NormParams<double>& p, double u, double v_th) {
    Tensor<double> x({1, 1, 1, 1}, {u});
    return bn_forward_infer(x, p)[0] > v_th;
}

bool rule_fires(const FiringRule<double>& rule, double u) {
    Tensor<double> x({1, 1, 1, 1}, {u});
    return spike_indicator(x, rule)[0] == 1.0;
}

}  // namespace

TEST_CASE("fold_mpbn: identity parameters leave the baseline threshold as-is") {
    FiringRule<double> rule = fold_mpbn(make_params(1, 0, 0, 1), 0.5);
    CHECK(rule.threshold[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rule.direction[0] == 1.0);
}

TEST_CASE("fold_mpbn: worked positive-scale example gives threshold 0.7") {
    FoldReport report;
    FiringRule<double> rule = fold_mpbn(make_params(2.0, 0.1, 0.3, 4.0), 0.5, &report);
    CHECK(rule.threshold[0] == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(rule.direction[0] == 1.0);
    CHECK(report.flipped_unit_count == 0);

    // sweep oracle: the folded decision equals the normalized decision
    for (int i = 0; i <= 100000; ++i) {
        const double u = -4.0 + 8.0 * i / 100000.0;
        if (std::abs(u - 0.7) < 1e-9) continue;
        CHECK(mpbn_fires(make_params(2.0, 0.1, 0.3, 4.0), u, 0.5) ==
              rule_fires(rule, u));
    }
}

TEST_CASE("fold_mpbn: negative scale flips the comparison, threshold -0.1") {
    FoldReport report;
    FiringRule<double> rule = fold_mpbn(make_params(-2.0, 0.1, 0.3, 4.0), 0.5, &report);
    CHECK(rule.threshold[0] == doctest::Approx(-0.1).epsilon(1e-12));
    CHECK(rule.direction[0] == -1.0);
    CHECK(report.flipped_unit_count == 1);

    for (int i = 0; i <= 100000; ++i) {
        const double u = -4.0 + 8.0 * i / 100000.0;
        if (std::abs(u + 0.1) < 1e-9) continue;
        CHECK(mpbn_fires(make_params(-2.0, 0.1, 0.3, 4.0), u, 0.5) ==
              rule_fires(rule, u));
    }
}

TEST_CASE("fold_mpbn: a vanishing scale is a hard error naming the unit") {
    NormParams<double> p = NormParams<double>::identity({3}, Granularity::channel);
    p.lambda[1] = 1e-13;
    try {
        fold_mpbn(p, 0.5);
        FAIL("expected DegenerateScaleError");
    } catch (const DegenerateScaleError& e) {
        CHECK(std::string(e.what()).find("unit 1") != std::string::npos);
    }
}

TEST_CASE("fold-equivalence fuzz: 100 random parameterizations x 10^4 membrane samples") {
    Rng rng(404);
    std::size_t checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const double lam = (0.2 + 2.3 * rng.uniform()) * (rng.coin() ? 1.0 : -1.0);
        const double beta = rng.gaussian();
        const double mean = rng.gaussian();
        const double var = 0.05 + 2.0 * rng.uniform();
        const double eps = rng.coin() ? 1e-5 : 0.0;
        const double v_th = 0.5;
        NormParams<double> p = make_params(lam, beta, mean, var, eps);
        FiringRule<double> rule = fold_mpbn(p, v_th);
        std::size_t mismatches = 0;
        for (int s = 0; s < 10000; ++s) {
            const double u = 4.0 * rng.gaussian();
            Tensor<double> x({1, 1, 1, 1}, {u});
            const double normalized = bn_forward_infer(x, p)[0];
            if (std::abs(normalized - v_th) <= 1e-6) continue;
            ++checked;
            if ((normalized > v_th) != rule_fires(rule, u)) ++mismatches;
        }
        CHECK(mismatches == 0);
    }
    CHECK(checked > 900000);  // the exclusion must not eat the test
}

TEST_CASE("fold_mpbn round-trip: the folded boundary maps back onto v_th") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const double lam = (0.2 + 2.0 * rng.uniform()) * (rng.coin() ? 1.0 : -1.0);
        NormParams<double> p =
            make_params(lam, rng.gaussian(), rng.gaussian(), 0.1 + rng.uniform(), 1e-5);
        FiringRule<double> rule = fold_mpbn(p, 0.5);
        Tensor<double> at_boundary({1, 1, 1, 1}, {rule.threshold[0]});
        CHECK(bn_forward_infer(at_boundary, p)[0] == doctest::Approx(0.5).epsilon(1e-9));
    }
}

TEST_CASE("fold_conv_bn: identity BN leaves the convolution untouched") {
    Rng rng(7);
    Tensor<double> w = random_tensor(rng, {3, 2, 3, 3});
    Tensor<double> b = random_tensor(rng, {3});
    NormParams<double> p = NormParams<double>::identity({3}, Granularity::channel, 0.0);
    auto [fw, fb] = fold_conv_bn(w, b, p);
    CHECK(max_rel_err(fw, w) < 1e-15);
    CHECK(max_rel_err(fb, b) < 1e-15);
}

TEST_CASE("fold_conv_bn: lambda 2 over std 2 is a unit rescale") {
    Rng rng(8);
    Tensor<double> w = random_tensor(rng, {2, 1, 3, 3});
    Tensor<double> b = random_tensor(rng, {2});
    NormParams<double> p = NormParams<double>::identity({2}, Granularity::channel, 0.0);
    for (auto& v : p.lambda.data) v = 2.0;
    for (auto& v : p.running_var.data) v = 4.0;
    auto [fw, fb] = fold_conv_bn(w, b, p);
    CHECK(max_rel_err(fw, w) < 1e-15);
    CHECK(max_rel_err(fb, b) < 1e-15);
}

TEST_CASE("fold_conv_bn: folded conv equals bn_infer(conv) on 100 random inputs") {
    Rng rng(9);
    Tensor<double> w = random_tensor(rng, {4, 3, 3, 3});
    Tensor<double> b = random_tensor(rng, {4});
    NormParams<double> p = NormParams<double>::identity({4}, Granularity::channel);
    for (auto& v : p.lambda.data) v = 0.5 + rng.uniform() * (rng.coin() ? 1.0 : -2.0);
    for (auto& v : p.beta.data) v = rng.gaussian();
    for (auto& v : p.running_mean.data) v = rng.gaussian();
    for (auto& v : p.running_var.data) v = 0.2 + rng.uniform();
    auto [fw, fb] = fold_conv_bn(w, b, p);
    for (int it = 0; it < 100; ++it) {
        Tensor<double> x = random_tensor(rng, {1, 3, 5, 5});
        Tensor<double> composed = bn_forward_infer(conv2d(x, w, &b, 1, 1), p);
        Tensor<double> folded = conv2d(x, fw, &fb, 1, 1);
        CHECK(max_rel_err(folded, composed, 1e-5) < 1e-5);
    }
}

TEST_CASE("fold_conv_bn refuses element granularity") {
    Tensor<double> w = Tensor<double>::zeros({2, 1, 3, 3});
    Tensor<double> b = Tensor<double>::zeros({2});
    NormParams<double> p = NormParams<double>::identity({2, 4, 4}, Granularity::element);
    CHECK_THROWS_AS(fold_conv_bn(w, b, p), ConfigError);
}

TEST_CASE("fold_model: identity MPBN folds to the scalar baseline threshold") {
    Model<double> m = build_model<double>(parse_arch("c4,c4"), 1, 6, 6, 3,
                                          LifConfig{0.25, 0.5}, MpbnMode::channel, 2, 11);
    FoldedModel<double> folded = fold_model(m);
    CHECK(folded.model.mode == ModelMode::folded);
    CHECK(folded.reports.size() == 2);
    for (const auto& layer : folded.model.layers) {
        const auto* conv = std::get_if<ConvLifLayer<double>>(&layer);
        if (!conv) continue;
        CHECK(!conv->conv_bn.has_value());
        CHECK(!conv->mpbn.has_value());
        REQUIRE(conv->rule.has_value());
        for (double t : conv->rule->threshold.data) CHECK(t == doctest::Approx(0.5));
        for (double d : conv->rule->direction.data) CHECK(d == 1.0);
    }
}

TEST_CASE("fold_model: element-wise MPBN yields per-position thresholds") {
    Model<double> m =
        fixtures::random_model(21, "c3,p,c4", MpbnMode::element, 2, 8, 8, 4, 2, 0.3);
    FoldedModel<double> folded = fold_model(m);
    const auto* first = std::get_if<ConvLifLayer<double>>(&folded.model.layers[0]);
    REQUIRE(first);
    CHECK(first->rule->threshold.shape == Shape{3, 8, 8});
    const auto* third = std::get_if<ConvLifLayer<double>>(&folded.model.layers[2]);
    REQUIRE(third);
    CHECK(third->rule->threshold.shape == Shape{4, 4, 4});
}

TEST_CASE("fold_model: folding preserves conv parameter counts and strips norm parameters") {
    Model<double> m = fixtures::random_model(31, "c4,c4", MpbnMode::channel, 1, 6, 6, 3, 2);
    FoldedModel<double> folded = fold_model(m);
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const auto* a = std::get_if<ConvLifLayer<double>>(&m.layers[i]);
        const auto* b = std::get_if<ConvLifLayer<double>>(&folded.model.layers[i]);
        if (!a) continue;
        CHECK(a->weight.numel() == b->weight.numel());
        CHECK(a->bias.numel() == b->bias.numel());
    }
    CHECK_THROWS_AS(fold_model(folded.model), ConfigError);  // already folded
}

TEST_CASE("fold_model propagates degenerate scales with layer context") {
    Model<double> m = fixtures::random_model(41, "c4,c4", MpbnMode::channel, 1, 6, 6, 3, 2);
    auto* conv = std::get_if<ConvLifLayer<double>>(&m.layers[1]);
    conv->mpbn->lambda[2] = 0.0;
    try {
        fold_model(m);
        FAIL("expected DegenerateScaleError");
    } catch (const DegenerateScaleError& e) {
        const std::string what = e.what();
        CHECK(what.find("layer 1") != std::string::npos);
        CHECK(what.find("unit 2") != std::string::npos);
    }
}

TEST_CASE("fold equivalence on full models: identical spike trains, matching logits") {
    // randomly parameterized models plus one actually trained, both
    // granularities, negative scales included
    struct Setup {
        MpbnMode mode;
        double neg_frac;
        bool train_first;
    };
    const Setup setups[] = {{MpbnMode::channel, 0.0, false},
                            {MpbnMode::channel, 0.4, false},
                            {MpbnMode::element, 0.3, false},
                            {MpbnMode::channel, 0.0, true},
                            {MpbnMode::off, 0.0, false}};
    for (const Setup& setup : setups) {
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            Model<double> m = fixtures::random_model(seed * 7 + 3, "c3,c4", setup.mode, 2, 6, 6,
                                                     3, 4, setup.neg_frac);
            if (setup.train_first) {
                Dataset<double> ds = synthetic<double>(5, 24, 3, 2, 6, 6);
                fixtures::quick_train(m, ds.images, ds.labels, 20, 0.05, 2);
            }
            FoldedModel<double> folded = fold_model(m);

            Tensor<double> x = fixtures::random_images(seed + 100, 64, 2, 6, 6);
            MarginProbe<double> probe;
            std::vector<Tensor<double>> train_spikes, folded_spikes;
            Tensor<double> lt = forward_eval(m, x, 4, nullptr, &probe, &train_spikes);
            Tensor<double> lf = forward_eval(folded.model, x, 4, nullptr, nullptr,
                                             &folded_spikes);

            auto cmp = fixtures::compare_spike_trains(train_spikes, folded_spikes,
                                                      probe.min_margin, 1e-6);
            CHECK(cmp.mismatched_samples == 0);
            CHECK(cmp.samples_checked > 0);

            // identical spike trains force identical classifier input
            const std::size_t k = lt.dim(1);
            for (std::size_t s = 0; s < 64; ++s) {
                if (!(probe.min_margin[s] > 1e-6)) continue;
                for (std::size_t j = 0; j < k; ++j)
                    CHECK(oracles::rel_err(lt[s * k + j], lf[s * k + j]) < 1e-5);
            }
        }
    }
}
