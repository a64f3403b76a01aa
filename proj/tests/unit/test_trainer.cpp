#include "asymbp/dataset.hpp"
#include "asymbp/feedback.hpp"
#include "asymbp/gradcheck.hpp"
#include "asymbp/trainer.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace asymbp;
using testutil::randn;
using testutil::spec;

namespace {

DataSplit blobs(std::size_t n, std::size_t classes, std::size_t dim, double separation, std::uint64_t seed) {
    SyntheticSpec s;
    s.n = n;
    s.classes = classes;
    s.dim = dim;
    s.separation = separation;
    s.seed = seed;
    Dataset d = make_synthetic(s);
    return {d, d};
}

ExperimentConfig config(NetworkSpec net, FeedbackKind kind, UpdateSetting rule, std::size_t epochs, std::size_t bs) {
    ExperimentConfig c;
    c.network = std::move(net);
    c.scheme.kind = kind;
    c.rule.setting = rule;
    c.epochs = epochs;
    c.lr_schedule = compressed_schedule(epochs);
    c.batch_size = bs;
    c.bn_ema_batches = 4;
    return c;
}

} // namespace

TEST_CASE("learning-rate schedules") {
    const auto full = full_schedule();
    CHECK(lr_at(full, 50, 1.0) == 5e-4);
    CHECK(lr_at(full, 51, 10.0) == doctest::Approx(5e-4).epsilon(1e-15));
    CHECK(lr_at(full, 65, 0.01) == doctest::Approx(5e-8).epsilon(1e-15));
    CHECK_THROWS_AS(lr_at(full, 66, 1.0), std::out_of_range);
    CHECK_THROWS_AS(lr_at(full, 0, 1.0), std::out_of_range);

    CHECK(compressed_schedule(65) == full);
    CHECK(compressed_schedule(20) == desk_schedule());
    const auto desk = desk_schedule();
    REQUIRE(desk.size() == 3);
    CHECK(desk[0].last == 15);
    CHECK(desk[1].last == 18);
    CHECK(desk[2].last == 20);
    CHECK(compressed_schedule(1).size() == 1);
}

TEST_CASE("config validation") {
    ExperimentConfig c = config(spec({4}, "fc3"), FeedbackKind::usf, UpdateSetting::sgd, 20, 10);
    CHECK_NOTHROW(c.validate());
    c.epochs = 21;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.epochs = 20;
    c.batch_size_overrides = {{1, 3, 100}, {4, 20, 500}};
    CHECK_NOTHROW(c.validate());
    CHECK(c.batch_size_at(3) == 100);
    CHECK(c.batch_size_at(4) == 500);
    c.lr_multiplier = 0.0;
    CHECK_THROWS(c.validate());
}

TEST_CASE("running statistics") {
    Network net = build_network(spec({3}, "fc4 fc2", true), 1);
    Dataset pool;
    pool.inputs = randn({5, 3}, 2);
    pool.labels = {0, 1, 0, 1, 1};
    pool.classes = 2;
    ForwardTrace trace;
    net.forward(pool.inputs, Mode::train, &trace);
    const auto& t = std::get<BatchNormTrace>(trace.entries[1]);
    const auto& bn = std::get<BatchNorm>(net.layers()[1]);

    SUBCASE("geometric series") {
        Rng rng = make_stream(1, Stream::bn_stats, 1);
        update_bn_running_stats(net, pool, 0.05, 20, 5, rng);
        const double decay = std::pow(0.95, 20);
        for (std::size_t f = 0; f < 4; ++f) {
            CHECK(std::abs(bn.state.running_mean[f] - t.mean[f] * (1 - decay)) < 1e-12);
            CHECK(std::abs(bn.state.running_std[f] - (decay + t.std[f] * (1 - decay))) < 1e-12);
        }
    }
    SUBCASE("alpha 1 copies the batch") {
        Rng rng = make_stream(1, Stream::bn_stats, 1);
        update_bn_running_stats(net, pool, 1.0, 1, 5, rng);
        for (std::size_t f = 0; f < 4; ++f) {
            CHECK(bn.state.running_mean[f] == doctest::Approx(t.mean[f]).epsilon(1e-14));
            CHECK(bn.state.running_std[f] == doctest::Approx(t.std[f]).epsilon(1e-14));
        }
    }
    SUBCASE("no normalization layers is a no-op") {
        Network plain = build_network(spec({3}, "fc4 fc2"), 1);
        const Tensor w = plain.weight(0);
        Rng rng = make_stream(1, Stream::bn_stats, 1);
        CHECK_NOTHROW(update_bn_running_stats(plain, pool, 0.05, 20, 5, rng));
        CHECK(plain.weight(0).bitwise_equal(w));
    }
}

TEST_CASE("evaluate") {
    Network net = build_network(spec({2}, "fc2"), 1);
    auto& d = std::get<Dense>(net.layers()[0]);
    d.weight = Tensor::matrix({{1, 0}, {0, 1}});
    d.bias = Tensor::vector({0, 0});
    Dataset data;
    data.inputs = Tensor::matrix({{1, 0}, {0, 1}, {2, 1}});
    data.labels = {0, 1, 0};
    data.classes = 2;
    CHECK(evaluate(net, data) == 0.0);
    Dataset wrong;
    wrong.inputs = Tensor::matrix({{1, 0}});
    wrong.labels = {1};
    wrong.classes = 2;
    CHECK(evaluate(net, wrong) == 100.0);

    // Untrained 10-class network: chance level.
    Network ten = build_network(spec({20}, "fc32 fc10"), 3);
    Dataset noise;
    noise.inputs = randn({1000, 20}, 4);
    for (std::size_t i = 0; i < 1000; ++i) noise.labels.push_back(static_cast<std::uint32_t>(i % 10));
    noise.classes = 10;
    CHECK(std::abs(evaluate(ten, noise) - 90.0) < 5.0);
    CHECK(evaluate(ten, noise, 7) == evaluate(ten, noise, 1000));
}

TEST_CASE("clamping") {
    Network net = build_network(spec({4}, "fc5 fc4 fc3", true), 1);
    const auto w = net.weighted_layers();
    apply_clamp(net, ClampMode::bottom);
    CHECK_FALSE(net.frozen(w[0]));
    CHECK_FALSE(net.frozen(w[1]));
    CHECK(net.frozen(w[2]));
    apply_clamp(net, ClampMode::top);
    CHECK(net.frozen(w[0]));
    CHECK(net.frozen(w[1]));
    CHECK_FALSE(net.frozen(w[2]));
    apply_clamp(net, ClampMode::none);
    for (auto l : w) CHECK_FALSE(net.frozen(l));
    CHECK(parse_clamp_mode("top") == ClampMode::top);
    CHECK_THROWS(parse_clamp_mode("middle"));
}

TEST_CASE("training") {
    SUBCASE("backprop learns a separable problem") {
        const DataSplit data = blobs(200, 2, 2, 8.0, 5);
        ExperimentConfig c = config(spec({2}, "fc8 fc2"), FeedbackKind::symmetric, UpdateSetting::sgd, 20, 20);
        c.lr_multiplier = 10;
        const RunRecord r = train(c, data);
        CHECK(r.test_error.size() == 20);
        CHECK(r.best_error < 2.0);
        CHECK(r.best_error == *std::min_element(r.test_error.begin(), r.test_error.end()));
        CHECK_FALSE(r.diverged);
        CHECK(r.train_loss.back() < r.train_loss.front());
    }
    SUBCASE("clamp top only moves the last layer") {
        const DataSplit data = blobs(120, 3, 4, 4.0, 6);
        ExperimentConfig c = config(spec({4}, "fc6 fc5 fc3"), FeedbackKind::usf, UpdateSetting::bm1, 3, 20);
        c.clamp = ClampMode::top;
        Network net = build_network(c.network, c.seed);
        const Network before = net;
        train_network(net, c, data);
        const auto w = net.weighted_layers();
        for (std::size_t k = 0; k + 1 < w.size(); ++k) {
            CHECK(net.weight(w[k]).bitwise_equal(before.weight(w[k])));
            CHECK(std::get<Dense>(net.layers()[w[k]]).bias.bitwise_equal(std::get<Dense>(before.layers()[w[k]]).bias));
        }
        CHECK_FALSE(net.weight(w.back()).bitwise_equal(before.weight(w.back())));
    }
    SUBCASE("repeat runs are bitwise identical") {
        const DataSplit data = blobs(90, 3, 5, 3.0, 7);
        ExperimentConfig c = config(spec({5}, "fc7 fc3", true), FeedbackKind::brsf_p, UpdateSetting::bm3, 4, 16);
        c.scheme.p = 0.3;
        const RunRecord a = train(c, data), b = train(c, data);
        CHECK(a.test_error == b.test_error);
        CHECK(a.train_loss == b.train_loss);
        CHECK(a.concordance == b.concordance);
        c.seed = 2;
        CHECK(train(c, data).train_loss != a.train_loss);
    }
    SUBCASE("divergence fills the remaining epochs with chance error") {
        const DataSplit data = blobs(200, 4, 10, 3.0, 8);
        ExperimentConfig c =
            config(spec({10}, "fc128 fc128 fc128 fc128 fc128 fc128 fc4"), FeedbackKind::usf, UpdateSetting::sgd, 6, 20);
        c.lr_multiplier = 100;
        const RunRecord r = train(c, data);
        REQUIRE(r.diverged);
        CHECK(r.diverged_epoch >= 1);
        CHECK(r.test_error.size() == 6);
        for (std::size_t e = r.diverged_epoch - 1; e < 6; ++e) {
            CHECK(r.test_error[e] == 75.0);
            CHECK(std::isnan(r.train_loss[e]));
        }
    }
    SUBCASE("hooks see every batch and epoch") {
        const DataSplit data = blobs(100, 2, 3, 4.0, 9);
        ExperimentConfig c = config(spec({3}, "fc4 fc2"), FeedbackKind::usf, UpdateSetting::bm1, 2, 30);
        std::size_t batches = 0, epochs = 0;
        TrainHooks h;
        h.after_batch = [&](const Network&, std::size_t, std::size_t) { ++batches; };
        h.after_epoch = [&](const Network&, std::size_t e, const RunRecord& r) {
            ++epochs;
            CHECK(r.test_error.size() == e);
        };
        train(c, data, h);
        // 100 samples in batches of 30: 30, 30, 30 and a final 10.
        CHECK(batches == 8);
        CHECK(epochs == 2);
    }
}

TEST_CASE("gradient check") {
    std::vector<std::uint32_t> labels{0, 3, 1, 2};

    Network mlp = build_network(spec({10}, "fc8 fc4"), 3);
    const GradCheckReport ok = gradient_check(mlp, randn({4, 10}, 10), labels, {});
    CHECK(ok.passed);
    CHECK(ok.max_rel_error < 1e-6);
    CHECK(ok.checked == mlp.parameter_count());

    GradCheckOptions bad;
    bad.corrupt_backward = true;
    CHECK_FALSE(gradient_check(mlp, randn({4, 10}, 10), labels, bad).passed);

    Network conv = build_network(spec({2, 6, 6}, "conv3x3x3/1 maxpool2x2/2 fc4", true, true), 4);
    const GradCheckReport c = gradient_check(conv, randn({4, 2, 6, 6}, 11), labels, {});
    CHECK(c.passed);
    CHECK(c.max_rel_error < 1e-6);

    GradCheckOptions tiny;
    tiny.max_parameters = 10;
    CHECK_THROWS_AS(gradient_check(mlp, randn({4, 10}, 10), labels, tiny), parameter_cap_error);
    CHECK(relative_error(1.0, 1.0) == 0.0);
    CHECK(relative_error(0.0, 1e-9) < 1e-5);
}
