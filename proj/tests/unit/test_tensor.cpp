#include "asymbp/tensor.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace asymbp;
using testutil::randn;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
    return c;
}

Tensor transposed(const Tensor& a) {
    Tensor t({a.dim(1), a.dim(0)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < a.dim(1); ++j) t[j * a.dim(0) + i] = a[i * a.dim(1) + j];
    return t;
}

} // namespace

TEST_CASE("matmul small hand cases") {
    CHECK(matmul(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{3, 4}, {5, 6}})) ==
          Tensor::matrix({{3, 4}, {5, 6}}));
    CHECK(matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}})) == Tensor::matrix({{11}}));
}

TEST_CASE("matmul is bitwise equal to the naive loop") {
    const Tensor a = randn({5, 7}, 1), b = randn({7, 3}, 2);
    CHECK(matmul(a, b).bitwise_equal(naive_matmul(a, b)));
}

TEST_CASE("blocked gemm paths match the naive loop bitwise") {
    // Sizes straddle the register tile and panel edges, including shapes
    // that take the transposed-output path.
    const std::size_t shapes[][3] = {{1, 1, 1},   {3, 17, 5},   {4, 16, 128}, {37, 9, 300},
                                     {130, 50, 500}, {20, 784, 25}, {64, 65, 129}};
    for (const auto& s : shapes) {
        const std::size_t m = s[0], n = s[1], k = s[2];
        CAPTURE(m);
        CAPTURE(n);
        CAPTURE(k);
        const Tensor a = randn({m, k}, m * 31 + k), b = randn({k, n}, n * 17 + k);
        const Tensor ref = naive_matmul(a, b);
        CHECK(matmul(a, b).bitwise_equal(ref));
        CHECK(matmul_tn(transposed(a), b).bitwise_equal(ref));
        CHECK(matmul_nt(a, transposed(b)).bitwise_equal(ref));
    }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    CHECK_THROWS(matmul(Tensor({2, 3}), Tensor({2, 3})));
}

TEST_CASE("elementwise maps") {
    CHECK(ewise_map(Tensor::vector({-2.5, 0.0, 7.1}), Map::sign) == Tensor::vector({-1, 0, 1}));
    CHECK(ewise_map(Tensor::vector({-1, 2}), Map::relu) == Tensor::vector({0, 2}));
    CHECK(ewise_map(Tensor::vector({-1, 0, 2}), Map::relu_deriv) == Tensor::vector({0, 0, 1}));
    CHECK(sign(std::nan("")) == 0.0);
    CHECK(hadamard(Tensor::vector({1, 2}), Tensor::vector({3, 4})) == Tensor::vector({3, 8}));
    CHECK(scale(Tensor::vector({1, -2}), 3) == Tensor::vector({3, -6}));
}

TEST_CASE("reductions") {
    const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
    CHECK(reduce(m, 0, Reduce::sum) == Tensor::vector({4, 6}));
    CHECK(reduce(m, 1, Reduce::sum) == Tensor::vector({3, 7}));
    CHECK(reduce(Tensor::vector({3, 9, 9, 1}), 0, Reduce::argmax)[0] == 1.0);
    CHECK(reduce(Tensor({100}, 1.0), 0, Reduce::mean)[0] == 1.0);
    CHECK(argmax_rows(Tensor::matrix({{0, 5, 5}, {7, 1, 7}})) == std::vector<std::size_t>{1, 0});
}

TEST_CASE("shape errors and reshape") {
    CHECK_THROWS(Tensor::vector({1, 2}) + Tensor::vector({1, 2, 3}));
    const Tensor t = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
    CHECK_THROWS(t.reshaped({4, 2}));
    CHECK(t.all_finite());
    Tensor bad = t;
    bad[0] = INFINITY;
    CHECK_FALSE(bad.all_finite());
}
