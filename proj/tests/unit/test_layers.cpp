#include "asymbp/layers.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace asymbp;
using testutil::randn;

namespace {

Dense dense(Tensor w, Tensor b) {
    Dense d;
    d.weight = std::move(w);
    d.feedback = d.weight;
    d.bias = std::move(b);
    return d;
}

Conv2D conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, std::uint64_t seed,
            std::size_t pad = 0) {
    Conv2D c;
    c.in_channels = cin;
    c.out_channels = cout;
    c.geometry = {k, k, stride, pad, pad, pad, pad};
    c.weight = randn({cin * k * k, cout}, seed);
    c.feedback = c.weight;
    c.bias = randn({cout}, seed + 1);
    return c;
}

// out[n][o][y][x] = b[o] + sum over (c, ky, kx) in im2col row order.
Tensor naive_conv(const Conv2D& l, const Tensor& x) {
    const auto& g = l.geometry;
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = g.out_h(H), OW = g.out_w(W);
    Tensor y({N, l.out_channels, OH, OW});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < l.out_channels; ++o)
            for (std::size_t oy = 0; oy < OH; ++oy)
                for (std::size_t ox = 0; ox < OW; ++ox) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
                            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad_top);
                                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad_left);
                                double v = 0.0;
                                if (iy >= 0 && ix >= 0 && iy < static_cast<long>(H) && ix < static_cast<long>(W))
                                    v = x[((n * C + c) * H + iy) * W + ix];
                                s += l.weight[((c * g.kernel_h + ky) * g.kernel_w + kx) * l.out_channels + o] * v;
                            }
                    y[((n * l.out_channels + o) * OH + oy) * OW + ox] = s + l.bias[o];
                }
    return y;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Central difference of f at every element of x.
Tensor numeric_grad(const std::function<double(const Tensor&)>& f, Tensor x, double h = 1e-5) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

double max_rel(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), 1e-3}));
    return m;
}

} // namespace

TEST_CASE("fully connected forward") {
    CHECK(fc_forward(dense(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0, 0})), Tensor::matrix({{5, 7}})).output ==
          Tensor::matrix({{5, 7}}));
    CHECK(fc_forward(dense(Tensor::matrix({{1}, {1}}), Tensor::vector({1})), Tensor::matrix({{2, 3}})).output ==
          Tensor::matrix({{6}}));
    const Dense d = dense(randn({6, 4}, 3), randn({4}, 4));
    const Tensor x = randn({5, 6}, 5);
    Tensor ref({5, 4});
    for (std::size_t b = 0; b < 5; ++b)
        for (std::size_t j = 0; j < 4; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < 6; ++i) s += d.weight[i * 4 + j] * x[b * 6 + i];
            ref[b * 4 + j] = s + d.bias[j];
        }
    CHECK(fc_forward(d, x).output.bitwise_equal(ref));
}

TEST_CASE("fully connected backward") {
    Dense d = dense(randn({6, 4}, 6), randn({4}, 7));
    const Tensor x = randn({3, 6}, 8), target = randn({3, 4}, 9);
    // Quadratic loss 0.5·|y - target|².
    auto loss = [&](const Tensor& xx) {
        const Tensor y = fc_forward(d, xx).output;
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += 0.5 * (y[i] - target[i]) * (y[i] - target[i]);
        return s;
    };
    const auto fwd = fc_forward(d, x);
    const Tensor dy = fwd.output - target;
    const WeightGrads sym = fc_backward(d, fwd.trace, dy);

    SUBCASE("symmetric input delta matches finite differences") {
        CHECK(max_rel(sym.input_delta, numeric_grad(loss, x)) < 1e-6);
    }
    SUBCASE("weight gradient matches finite differences") {
        auto wloss = [&](const Tensor& w) {
            Dense e = d;
            e.weight = w;
            const Tensor y = fc_forward(e, x).output;
            double s = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) s += 0.5 * (y[i] - target[i]) * (y[i] - target[i]);
            return s;
        };
        CHECK(max_rel(sym.weight, numeric_grad(wloss, d.weight)) < 1e-6);
    }
    SUBCASE("V = 0 zeroes the delta but not the weight gradient") {
        const WeightGrads g = fc_backward(Tensor(d.weight.shape()), fwd.trace, dy);
        CHECK(g.input_delta == Tensor(x.shape()));
        CHECK(g.weight.bitwise_equal(sym.weight));
        CHECK(g.bias.bitwise_equal(sym.bias));
    }
    SUBCASE("V = -W negates the delta exactly") {
        const WeightGrads g = fc_backward(scale(d.weight, -1.0), fwd.trace, dy);
        CHECK(g.input_delta.bitwise_equal(scale(sym.input_delta, -1.0)));
    }
}

TEST_CASE("convolution forward") {
    SUBCASE("ones filter sums the input") {
        Conv2D c = conv(1, 1, 3, 1, 1);
        c.weight.fill(1.0);
        c.bias.fill(0.0);
        const Tensor x = randn({1, 1, 3, 3}, 10);
        double s = 0.0;
        for (double v : x.data()) s += v;
        const Tensor y = conv_forward(c, x).output;
        CHECK(y.shape() == Shape{1, 1, 1, 1});
        CHECK(y[0] == doctest::Approx(s).epsilon(1e-14));
    }
    SUBCASE("impulse filter returns the valid region") {
        Conv2D c = conv(1, 1, 3, 1, 2);
        c.weight.fill(0.0);
        c.weight[4] = 1.0; // centre tap
        c.bias.fill(0.0);
        const Tensor x = randn({1, 1, 5, 5}, 11);
        const Tensor y = conv_forward(c, x).output;
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) CHECK(y[i * 3 + j] == x[(i + 1) * 5 + j + 1]);
    }
    SUBCASE("random cases match the naive loop bitwise") {
        const Conv2D a = conv(3, 4, 5, 1, 12);
        const Tensor x = randn({2, 3, 8, 8}, 13);
        CHECK(conv_forward(a, x).output.bitwise_equal(naive_conv(a, x)));
        const Conv2D b = conv(2, 3, 3, 2, 14, 1);
        const Tensor x2 = randn({2, 2, 7, 6}, 15);
        CHECK(conv_forward(b, x2).output.bitwise_equal(naive_conv(b, x2)));
    }
}

TEST_CASE("convolution backward") {
    const Conv2D c = conv(2, 3, 3, 1, 20, 1);
    const Tensor x = randn({2, 2, 5, 5}, 21);
    const auto fwd = conv_forward(c, x);
    const Tensor probe = randn(fwd.output.shape(), 22);
    const WeightGrads sym = conv_backward(c, fwd.trace, probe);

    SUBCASE("finite differences with V = W") {
        auto loss = [&](const Tensor& xx) { return dot(conv_forward(c, xx).output, probe); };
        CHECK(max_rel(sym.input_delta, numeric_grad(loss, x)) < 1e-6);
        auto wloss = [&](const Tensor& w) {
            Conv2D e = c;
            e.weight = w;
            return dot(conv_forward(e, x).output, probe);
        };
        CHECK(max_rel(sym.weight, numeric_grad(wloss, c.weight)) < 1e-6);
    }
    SUBCASE("V = 2W doubles the delta exactly") {
        const WeightGrads g = conv_backward(c, scale(c.weight, 2.0), fwd.trace, probe);
        CHECK(g.input_delta.bitwise_equal(scale(sym.input_delta, 2.0)));
        CHECK(g.weight.bitwise_equal(sym.weight));
    }
    SUBCASE("1x1 convolution reduces to the dense layer") {
        const Conv2D one = conv(4, 3, 1, 1, 23);
        const Tensor xi = randn({5, 4, 1, 1}, 24);
        const auto cf = conv_forward(one, xi);
        const Dense d = dense(one.weight, one.bias);
        const auto df = fc_forward(d, xi.reshaped({5, 4}));
        CHECK(cf.output.reshaped({5, 3}).bitwise_equal(df.output));
        const Tensor dy = randn({5, 3}, 25);
        const WeightGrads cg = conv_backward(one, cf.trace, dy.reshaped({5, 3, 1, 1}));
        const WeightGrads dg = fc_backward(d, df.trace, dy);
        CHECK(cg.input_delta.reshaped({5, 4}).bitwise_equal(dg.input_delta));
        CHECK(cg.weight.bitwise_equal(dg.weight));
        CHECK(cg.bias.bitwise_equal(dg.bias));
    }
}

TEST_CASE("pooling") {
    Pool maxp{PoolKind::max, {2, 2, 2}};
    Pool avgp{PoolKind::average, {2, 2, 2}};
    const Tensor x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    const auto f = pool_forward(maxp, x);
    CHECK(f.output[0] == 4.0);
    const Tensor one({1, 1, 1, 1}, 1.0);
    CHECK(pool_backward(maxp, f.trace, one) == Tensor({1, 1, 2, 2}, std::vector<double>{0, 0, 0, 1}));
    const auto a = pool_forward(avgp, x);
    CHECK(a.output[0] == 2.5);
    CHECK(pool_backward(avgp, a.trace, one) == Tensor({1, 1, 2, 2}, 0.25));
    const Tensor tie({1, 1, 2, 2}, std::vector<double>{5, 5, 0, 0});
    const auto t = pool_forward(maxp, tie);
    CHECK(pool_backward(maxp, t.trace, one) == Tensor({1, 1, 2, 2}, std::vector<double>{1, 0, 0, 0}));
}

TEST_CASE("relu") {
    const auto f = relu_forward(Tensor::vector({-1, 2}));
    CHECK(f.output == Tensor::vector({0, 2}));
    CHECK(relu_backward(f.trace, Tensor::vector({10, 10})) == Tensor::vector({0, 10}));
    const auto neg = relu_forward(Tensor::vector({-1, -3, -0.5}));
    CHECK(relu_backward(neg.trace, Tensor::vector({1, 2, 3})) == Tensor(Shape{3}));

    // A ReLU MLP slice away from kinks.
    const Dense d = dense(randn({4, 6}, 30), randn({6}, 31));
    const Tensor x = randn({3, 4}, 32), probe = randn({3, 6}, 33);
    auto loss = [&](const Tensor& xx) { return dot(relu_forward(fc_forward(d, xx).output).output, probe); };
    const auto fc = fc_forward(d, x);
    const auto r = relu_forward(fc.output);
    for (double v : fc.output.data()) REQUIRE(std::abs(v) > 1e-3);
    const Tensor dx = fc_backward(d, fc.trace, relu_backward(r.trace, probe)).input_delta;
    CHECK(max_rel(dx, numeric_grad(loss, x)) < 1e-6);
}

TEST_CASE("batch normalization forward") {
    const BatchNorm bn = make_batch_norm(1, false, 1e-8);
    CHECK(batchnorm_forward(bn, Tensor::matrix({{1}, {3}}), Mode::train).output.data()[0] == doctest::Approx(-1.0));
    CHECK(batchnorm_forward(bn, Tensor::matrix({{1}, {3}}), Mode::train).output.data()[1] == doctest::Approx(1.0));
    CHECK(batchnorm_forward(bn, Tensor::matrix({{2}, {2}, {2}}), Mode::train).output == Tensor({3, 1}));
    CHECK_THROWS(batchnorm_forward(bn, Tensor::matrix({{2}}), Mode::train));

    SUBCASE("random batches are standardized per feature and per channel") {
        for (const Shape& s : {Shape{50, 7}, Shape{6, 3, 4, 5}}) {
            const Tensor x = add_scalar(randn(s, 40, 3.0), 2.0);
            const BatchNorm b = make_batch_norm(s[1], false, 1e-8);
            const Tensor y = batchnorm_forward(b, x, Mode::train).output;
            const std::size_t n = s[0], f = s[1], sp = x.size() / (n * f);
            for (std::size_t k = 0; k < f; ++k) {
                double m = 0.0, v = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < sp; ++p) m += y[(i * f + k) * sp + p];
                m /= static_cast<double>(n * sp);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < sp; ++p) v += std::pow(y[(i * f + k) * sp + p] - m, 2);
                CHECK(std::abs(m) < 1e-10);
                CHECK(std::abs(std::sqrt(v / static_cast<double>(n * sp)) - 1.0) < 1e-6);
            }
        }
    }
    SUBCASE("test mode uses the running statistics") {
        BatchNorm b = make_batch_norm(2, false, 1e-300);
        b.state.running_mean = Tensor::vector({1, -1});
        b.state.running_std = Tensor::vector({2, 4});
        CHECK(batchnorm_forward(b, Tensor::matrix({{3, 3}}), Mode::test).output == Tensor::matrix({{1, 1}}));
    }
}

TEST_CASE("batch normalization backward") {
    for (bool learnable : {false, true}) {
        CAPTURE(learnable);
        BatchNorm bn = make_batch_norm(3, learnable, 1e-8);
        if (learnable) {
            bn.state.gamma = randn({3}, 50);
            bn.state.beta = randn({3}, 51);
        }
        const Tensor x = randn({6, 3}, 52), probe = randn({6, 3}, 53);
        auto loss = [&](const Tensor& xx) { return dot(batchnorm_forward(bn, xx, Mode::train).output, probe); };
        const auto f = batchnorm_forward(bn, x, Mode::train);
        const BatchNormGrads g = batchnorm_backward(bn, f.trace, probe);
        CHECK(max_rel(g.input_delta, numeric_grad(loss, x)) < 1e-6);
        CHECK(g.gamma.has_value() == learnable);
        CHECK(g.beta.has_value() == learnable);
    }
    SUBCASE("uniform delta on a centred input sums to zero per feature") {
        const BatchNorm bn = make_batch_norm(2, false, 1e-8);
        const Tensor x = Tensor::matrix({{-1, 2}, {0, -3}, {1, 1}});
        const auto f = batchnorm_forward(bn, x, Mode::train);
        const Tensor dx = batchnorm_backward(bn, f.trace, Tensor({3, 2}, 1.0)).input_delta;
        for (std::size_t k = 0; k < 2; ++k) CHECK(std::abs(dx[k] + dx[2 + k] + dx[4 + k]) < 1e-12);
    }
    SUBCASE("per-channel statistics for 4-d inputs") {
        const BatchNorm bn = make_batch_norm(2, false, 1e-8);
        const Tensor x = randn({3, 2, 2, 2}, 54), probe = randn({3, 2, 2, 2}, 55);
        auto loss = [&](const Tensor& xx) { return dot(batchnorm_forward(bn, xx, Mode::train).output, probe); };
        const auto f = batchnorm_forward(bn, x, Mode::train);
        CHECK(f.trace.mean.size() == 2);
        CHECK(max_rel(batchnorm_backward(bn, f.trace, probe).input_delta, numeric_grad(loss, x)) < 1e-6);
    }
}

TEST_CASE("softmax cross-entropy") {
    const std::vector<std::uint32_t> labels{3, 7};
    const LossResult flat = softmax_xent(Tensor({2, 10}, 0.5), labels);
    CHECK(flat.loss == doctest::Approx(2 * std::log(10.0)).epsilon(1e-12));

    const LossResult sure = softmax_xent(Tensor::matrix({{0, 800, 0}}), std::vector<std::uint32_t>{1});
    CHECK(sure.loss == doctest::Approx(0.0));
    for (double v : sure.delta.data()) CHECK(std::abs(v) < 1e-12);

    const Tensor logits = randn({4, 5}, 60);
    const std::vector<std::uint32_t> y{0, 4, 2, 2};
    auto loss = [&](const Tensor& z) { return softmax_xent(z, y).loss; };
    const Tensor num = numeric_grad(loss, logits, 1e-5);
    CHECK(max_abs_diff(softmax_xent(logits, y).delta, num) < 1e-8);
    CHECK_THROWS(softmax_xent(logits, std::vector<std::uint32_t>{0, 1}));
}
