#include "asymbp/dataset.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#ifndef ASYMBP_FIXTURE_DIR
#define ASYMBP_FIXTURE_DIR "tests/fixtures"
#endif

using namespace asymbp;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), {}};
}

const fs::path fixtures = ASYMBP_FIXTURE_DIR;

} // namespace

TEST_CASE("IDX fixtures round trip") {
    const auto img = slurp(fixtures / "two-images-idx3-ubyte");
    const auto lab = slurp(fixtures / "two-labels-idx1-ubyte");
    const Dataset d = parse_idx(img, lab);
    CHECK(d.size() == 2);
    CHECK(d.inputs.shape() == Shape{2, 1, 3, 2});
    CHECK(d.labels == std::vector<std::uint32_t>{4, 9});
    CHECK(d.classes == 10);
    CHECK(d.inputs[1] == 1.0);
    CHECK(d.inputs[2] == 128.0 / 255.0);
    CHECK(encode_idx_inputs(d, IdxPixelFormat::unsigned_byte) == img);
    CHECK(encode_idx_labels(d) == lab);

    const auto feat = slurp(fixtures / "two-features-idx2-double");
    const Dataset f = parse_idx(feat, lab, 12);
    CHECK(f.inputs.shape() == Shape{2, 3});
    CHECK(f.inputs[1] == -1.25);
    CHECK(std::signbit(f.inputs[5]));
    CHECK(f.classes == 12);
    CHECK(encode_idx_inputs(f, IdxPixelFormat::float64) == feat);

    const fs::path dir = fs::temp_directory_path() / "asymbp_idx_test";
    fs::create_directories(dir);
    write_idx(f, dir / "x.idx", dir / "y.idx", IdxPixelFormat::float64);
    const Dataset back = load_idx(dir / "x.idx", dir / "y.idx", 12);
    CHECK(back.inputs.bitwise_equal(f.inputs));
    CHECK(back.labels == f.labels);
    fs::remove_all(dir);
}

TEST_CASE("IDX errors are distinguished") {
    const auto img = slurp(fixtures / "two-images-idx3-ubyte");
    const auto lab = slurp(fixtures / "two-labels-idx1-ubyte");

    auto bad_magic = img;
    bad_magic[2] = 0x07;
    CHECK_THROWS_AS(parse_idx(bad_magic, lab), idx_magic_error);
    CHECK_THROWS_AS(parse_idx(img, img), idx_magic_error);

    const std::vector<std::uint8_t> header_cut(img.begin(), img.begin() + 6);
    CHECK_THROWS_AS(parse_idx(header_cut, lab), idx_truncated_error);
    const std::vector<std::uint8_t> body_cut(img.begin(), img.end() - 1);
    CHECK_THROWS_AS(parse_idx(body_cut, lab), idx_truncated_error);

    auto one_label = lab;
    one_label[7] = 1;
    one_label.pop_back();
    CHECK_THROWS_AS(parse_idx(img, one_label), idx_count_mismatch_error);

    CHECK_THROWS_AS(parse_idx(img, lab, 5), idx_error);
    CHECK_THROWS_AS(load_idx("/nonexistent/file", "/nonexistent/labels"), idx_error);
}

TEST_CASE("bundled MNIST sample") {
    const fs::path root = ASYMBP_FIXTURE_DIR "/../../data/mnist5k";
    if (!fs::exists(root / "images-idx3-ubyte")) return;
    const Dataset d = load_idx(root / "images-idx3-ubyte", root / "labels-idx1-ubyte");
    CHECK(d.size() == 5000);
    CHECK(d.sample_shape() == Shape{1, 28, 28});
    CHECK(d.classes == 10);
    std::vector<std::size_t> counts(10, 0);
    for (auto l : d.labels) ++counts[l];
    for (auto c : counts) CHECK(c == 500);

    const Dataset s = subset(d, 500, 3);
    CHECK(s.size() == 5000);
    const auto idx = subset_indices(d, 500, 3);
    std::vector<std::size_t> sorted = idx;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);

    const DataSplit split = stratified_split(d, 400, 100, 1);
    CHECK(split.train.size() == 4000);
    CHECK(split.test.size() == 1000);
}

TEST_CASE("synthetic blobs") {
    SyntheticSpec s;
    s.n = 3000;
    s.classes = 3;
    s.dim = 5;
    s.separation = 10.0;
    s.seed = 4;
    const Dataset d = make_synthetic(s);
    CHECK(d.inputs.shape() == Shape{3000, 5});
    CHECK(d.labels[0] == 0);
    CHECK(d.labels[4] == 1);
    CHECK(make_synthetic(s).inputs.bitwise_equal(d.inputs));

    // Nearest-centroid with the true centers.
    const Tensor c = blob_centers(s);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t k = 0; k < 3; ++k) {
            double dist = 0.0;
            for (std::size_t j = 0; j < 5; ++j) dist += std::pow(d.inputs[i * 5 + j] - c[k * 5 + j], 2);
            if (dist < best_d) {
                best_d = dist;
                best = k;
            }
        }
        wrong += best != d.labels[i];
    }
    CHECK(static_cast<double>(wrong) / 3000.0 < 0.001);

    // Center distances equal separation · noise.
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = a + 1; b < 3; ++b) {
            double dist = 0.0;
            for (std::size_t j = 0; j < 5; ++j) dist += std::pow(c[a * 5 + j] - c[b * 5 + j], 2);
            CHECK(std::sqrt(dist) == doctest::Approx(10.0));
        }

    s.n = 3001;
    CHECK_THROWS(make_synthetic(s));
}

TEST_CASE("two spirals defeat a linear model") {
    SyntheticSpec s;
    s.kind = SyntheticKind::two_spirals;
    s.n = 1000;
    s.classes = 2;
    s.dim = 2;
    s.separation = 2.0;
    s.noise = 0.1;
    const Dataset d = make_synthetic(s);
    // Logistic regression by plain gradient descent on standardized features.
    double w0 = 0, w1 = 0, b = 0;
    for (int it = 0; it < 3000; ++it) {
        double g0 = 0, g1 = 0, gb = 0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double x0 = d.inputs[2 * i] / 20.0, x1 = d.inputs[2 * i + 1] / 20.0;
            const double p = 1.0 / (1.0 + std::exp(-(w0 * x0 + w1 * x1 + b)));
            const double e = p - d.labels[i];
            g0 += e * x0;
            g1 += e * x1;
            gb += e;
        }
        w0 -= 0.5 * g0 / 1000;
        w1 -= 0.5 * g1 / 1000;
        b -= 0.5 * gb / 1000;
    }
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double z = w0 * d.inputs[2 * i] + w1 * d.inputs[2 * i + 1] + 20.0 * b;
        wrong += (z > 0) != (d.labels[i] == 1);
    }
    CHECK(static_cast<double>(wrong) / 1000.0 > 0.25);
    s.classes = 3;
    s.n = 999;
    CHECK_THROWS(make_synthetic(s));
}

TEST_CASE("subsets") {
    SyntheticSpec s;
    s.n = 2000;
    s.classes = 4;
    s.seed = 2;
    const Dataset d = make_synthetic(s);

    const Dataset sub = subset(d, 50, 1);
    std::vector<std::size_t> counts(4, 0);
    for (auto l : sub.labels) ++counts[l];
    for (auto c : counts) CHECK(c == 50);
    CHECK_THROWS(subset(d, 501, 1));

    // Two seeds of 100/500 per class overlap about 100·100/500 = 20 per class.
    const auto a = subset_indices(d, 100, 1), b = subset_indices(d, 100, 2);
    const std::set<std::size_t> sa(a.begin(), a.end());
    std::size_t both = 0;
    for (auto i : b) both += sa.contains(i);
    CHECK(both > 50);
    CHECK(both < 110);

    const DataSplit split = stratified_split(d, 300, 100, 5);
    CHECK(split.train.size() == 1200);
    CHECK(split.test.size() == 400);
    std::set<std::vector<double>> train_rows;
    for (std::size_t i = 0; i < split.train.size(); ++i)
        train_rows.insert({split.train.inputs[2 * i], split.train.inputs[2 * i + 1]});
    for (std::size_t i = 0; i < split.test.size(); ++i)
        CHECK_FALSE(train_rows.contains({split.test.inputs[2 * i], split.test.inputs[2 * i + 1]}));
    CHECK_THROWS(stratified_split(d, 400, 101, 5));
}
