#include "asymbp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace asymbp {

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace {

void check_shape(const Shape& shape) {
    for (auto d : shape) {
        if (d == 0) throw dimension_error("tensor dimensions must be positive, got " + to_string(shape));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw dimension_error(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                              to_string(b.shape()));
    }
}

} // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, uninitialized_t) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.resize(element_count(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_shape(shape_);
    if (element_count(shape_) != data_.size()) {
        throw dimension_error("tensor shape " + to_string(shape_) + " does not match " +
                              std::to_string(data_.size()) + " elements");
    }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (r.size() != cols) throw dimension_error("ragged matrix literal");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::reshaped(Shape shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
    check_shape(shape);
    if (element_count(shape) != data_.size()) {
        throw dimension_error("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    shape_ = std::move(shape);
    return std::move(*this);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool Tensor::bitwise_equal(const Tensor& other) const noexcept {
    return shape_ == other.shape_ &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

// ---------------------------------------------------------------------------
// gemm: packed panels with a register-blocked micro-kernel. Blocking over k is
// done by accumulating into C between k-blocks, which keeps each element's
// summation order strictly sequential in k.

namespace {

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 16;
constexpr std::size_t kKc = 256;
constexpr std::size_t kNc = 512;

void pack_a(Transpose ta, const double* a, std::size_t lda, std::size_t row0, std::size_t rows, std::size_t k0,
            std::size_t kc, double* out) {
    for (std::size_t p = 0; p < kc; ++p) {
        double* dst = out + p * kMr;
        for (std::size_t r = 0; r < kMr; ++r) {
            if (r >= rows) {
                dst[r] = 0.0;
            } else if (ta == Transpose::no) {
                dst[r] = a[(row0 + r) * lda + k0 + p];
            } else {
                dst[r] = a[(k0 + p) * lda + row0 + r];
            }
        }
    }
}

void pack_b(Transpose tb, const double* b, std::size_t ldb, std::size_t k0, std::size_t kc, std::size_t col0,
            std::size_t nc, double* out) {
    const std::size_t panels = (nc + kNr - 1) / kNr;
    for (std::size_t panel = 0; panel < panels; ++panel) {
        double* dst = out + panel * kc * kNr;
        const std::size_t c0 = panel * kNr;
        const std::size_t width = std::min(kNr, nc - c0);
        if (tb == Transpose::no) {
            for (std::size_t p = 0; p < kc; ++p) {
                const double* src = b + (k0 + p) * ldb + col0 + c0;
                std::size_t s = 0;
                for (; s < width; ++s) dst[p * kNr + s] = src[s];
                for (; s < kNr; ++s) dst[p * kNr + s] = 0.0;
            }
        } else {
            for (std::size_t s = 0; s < kNr; ++s) {
                if (s < width) {
                    const double* src = b + (col0 + c0 + s) * ldb + k0;
                    for (std::size_t p = 0; p < kc; ++p) dst[p * kNr + s] = src[p];
                } else {
                    for (std::size_t p = 0; p < kc; ++p) dst[p * kNr + s] = 0.0;
                }
            }
        }
    }
}

// Accumulators live in vector registers: kMr rows of kNr doubles.
using lane_vec = double __attribute__((vector_size(64)));
constexpr std::size_t kLanes = sizeof(lane_vec) / sizeof(double);
static_assert(kNr % kLanes == 0);
constexpr std::size_t kVecPerRow = kNr / kLanes;

inline lane_vec load_vec(const double* p) {
    lane_vec v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store_vec(double* p, lane_vec v) { std::memcpy(p, &v, sizeof v); }

// Full kMr x kNr tile over one k-block. `acc_io` holds the running sums
// (row-major with stride kNr) and receives the updated ones. The accumulators
// are named locals so they stay in registers across the k loop.
void micro_kernel(std::size_t kc, const double* __restrict ap, const double* __restrict bp,
                  double* __restrict acc_io) {
    static_assert(kMr == 4 && kVecPerRow == 2);
    lane_vec c00 = load_vec(acc_io + 0 * kNr), c01 = load_vec(acc_io + 0 * kNr + kLanes);
    lane_vec c10 = load_vec(acc_io + 1 * kNr), c11 = load_vec(acc_io + 1 * kNr + kLanes);
    lane_vec c20 = load_vec(acc_io + 2 * kNr), c21 = load_vec(acc_io + 2 * kNr + kLanes);
    lane_vec c30 = load_vec(acc_io + 3 * kNr), c31 = load_vec(acc_io + 3 * kNr + kLanes);
    for (std::size_t p = 0; p < kc; ++p) {
        const lane_vec b0 = load_vec(bp + p * kNr), b1 = load_vec(bp + p * kNr + kLanes);
        const double* a = ap + p * kMr;
        c00 += a[0] * b0;
        c01 += a[0] * b1;
        c10 += a[1] * b0;
        c11 += a[1] * b1;
        c20 += a[2] * b0;
        c21 += a[2] * b1;
        c30 += a[3] * b0;
        c31 += a[3] * b1;
    }
    store_vec(acc_io + 0 * kNr, c00);
    store_vec(acc_io + 0 * kNr + kLanes, c01);
    store_vec(acc_io + 1 * kNr, c10);
    store_vec(acc_io + 1 * kNr + kLanes, c11);
    store_vec(acc_io + 2 * kNr, c20);
    store_vec(acc_io + 2 * kNr + kLanes, c21);
    store_vec(acc_io + 3 * kNr, c30);
    store_vec(acc_io + 3 * kNr + kLanes, c31);
}

void tile(std::size_t kc, const double* ap, const double* bp, double* c, std::size_t row_stride,
          std::size_t col_stride, std::size_t rows, std::size_t cols, bool first) {
    alignas(64) double acc[kMr * kNr];
    if (first || rows < kMr || cols < kNr) std::fill(acc, acc + kMr * kNr, 0.0);
    if (!first) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t s = 0; s < cols; ++s) acc[r * kNr + s] = c[r * row_stride + s * col_stride];
    }
    micro_kernel(kc, ap, bp, acc);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t s = 0; s < cols; ++s) c[r * row_stride + s * col_stride] = acc[r * kNr + s];
}

// C (m x n) with element (i, j) at c[i * row_stride + j * col_stride].
void gemm_strided(Transpose trans_a, Transpose trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, std::size_t row_stride, std::size_t col_stride) {
    const std::size_t lda = trans_a == Transpose::no ? k : m;
    const std::size_t ldb = trans_b == Transpose::no ? n : k;

    thread_local std::vector<double> a_pack;
    thread_local std::vector<double> b_pack;
    a_pack.resize(kKc * kMr);
    b_pack.resize(kKc * ((kNc + kNr - 1) / kNr) * kNr);

    for (std::size_t j0 = 0; j0 < n; j0 += kNc) {
        const std::size_t nc = std::min(kNc, n - j0);
        for (std::size_t k0 = 0; k0 < k; k0 += kKc) {
            const std::size_t kc = std::min(kKc, k - k0);
            const bool first = k0 == 0;
            pack_b(trans_b, b, ldb, k0, kc, j0, nc, b_pack.data());
            for (std::size_t i0 = 0; i0 < m; i0 += kMr) {
                const std::size_t rows = std::min(kMr, m - i0);
                pack_a(trans_a, a, lda, i0, rows, k0, kc, a_pack.data());
                for (std::size_t jr = 0; jr < nc; jr += kNr) {
                    const std::size_t cols = std::min(kNr, nc - jr);
                    tile(kc, a_pack.data(), b_pack.data() + (jr / kNr) * kc * kNr,
                         c + i0 * row_stride + (j0 + jr) * col_stride, row_stride, col_stride, rows, cols, first);
                }
            }
        }
    }
}

std::size_t padded_work(std::size_t m, std::size_t n) {
    return (m + kMr - 1) / kMr * kMr * ((n + kNr - 1) / kNr * kNr);
}

Transpose flip(Transpose t) { return t == Transpose::no ? Transpose::yes : Transpose::no; }

} // namespace

void gemm(Transpose trans_a, Transpose trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        std::fill(c, c + m * n, 0.0);
        return;
    }
    // Each element is summed in the same k order either way, so computing
    // C^T = op(B)^T op(A)^T gives identical bits. The transposed store is
    // strided, which only pays off for long k and much less padding.
    if (k >= 128 && padded_work(n, m) * 10 < padded_work(m, n) * 9) {
        gemm_strided(flip(trans_b), flip(trans_a), n, m, k, b, a, c, 1, n);
    } else {
        gemm_strided(trans_a, trans_b, m, n, k, a, b, c, n, 1);
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw dimension_error("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    }
    Tensor c({a.dim(0), b.dim(1)}, uninitialized);
    gemm(Transpose::no, Transpose::no, a.dim(0), b.dim(1), a.dim(1), a.raw(), b.raw(), c.raw());
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
        throw dimension_error("matmul_tn: incompatible shapes " + to_string(a.shape()) + " and " +
                              to_string(b.shape()));
    }
    Tensor c({a.dim(1), b.dim(1)}, uninitialized);
    gemm(Transpose::yes, Transpose::no, a.dim(1), b.dim(1), a.dim(0), a.raw(), b.raw(), c.raw());
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
        throw dimension_error("matmul_nt: incompatible shapes " + to_string(a.shape()) + " and " +
                              to_string(b.shape()));
    }
    Tensor c({a.dim(0), b.dim(0)}, uninitialized);
    gemm(Transpose::no, Transpose::yes, a.dim(0), b.dim(0), a.dim(1), a.raw(), b.raw(), c.raw());
    return c;
}

// ---------------------------------------------------------------------------

Tensor ewise_map(const Tensor& t, Map fn) {
    Tensor out = t;
    auto d = out.data();
    switch (fn) {
    case Map::relu:
        for (auto& v : d) v = relu(v);
        break;
    case Map::relu_deriv:
        for (auto& v : d) v = relu_deriv(v);
        break;
    case Map::sign:
        for (auto& v : d) v = sign(v);
        break;
    case Map::abs:
        for (auto& v : d) v = std::fabs(v);
        break;
    case Map::negate:
        for (auto& v : d) v = -v;
        break;
    case Map::square:
        for (auto& v : d) v = v * v;
        break;
    }
    return out;
}

Tensor scale(const Tensor& t, double factor) {
    Tensor out = t;
    for (auto& v : out.data()) v *= factor;
    return out;
}

Tensor add_scalar(const Tensor& t, double value) {
    Tensor out = t;
    for (auto& v : out.data()) v += value;
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Tensor operator+(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    out += b;
    return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "subtract");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Tensor operator*(double factor, const Tensor& t) { return scale(t, factor); }

Tensor& operator+=(Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

// ---------------------------------------------------------------------------

Tensor reduce(const Tensor& t, std::size_t axis, Reduce kind) {
    if (axis >= t.rank()) {
        throw dimension_error("reduce: axis " + std::to_string(axis) + " out of range for " + to_string(t.shape()));
    }
    const auto& shape = t.shape();
    const std::size_t len = shape[axis];
    if (len == 0) throw dimension_error("reduce: empty axis");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

    Shape out_shape;
    for (std::size_t i = 0; i < shape.size(); ++i)
        if (i != axis) out_shape.push_back(shape[i]);
    if (out_shape.empty()) out_shape.push_back(1);

    Tensor out(out_shape);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const double* base = t.raw() + o * len * inner + in;
            double result = 0.0;
            switch (kind) {
            case Reduce::sum:
            case Reduce::mean: {
                double acc = 0.0;
                for (std::size_t a = 0; a < len; ++a) acc += base[a * inner];
                result = kind == Reduce::mean ? acc / static_cast<double>(len) : acc;
                break;
            }
            case Reduce::max:
            case Reduce::argmax: {
                std::size_t best = 0;
                for (std::size_t a = 1; a < len; ++a)
                    if (base[a * inner] > base[best * inner]) best = a;
                result = kind == Reduce::max ? base[best * inner] : static_cast<double>(best);
                break;
            }
            }
            out[o * inner + in] = result;
        }
    }
    return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& t) {
    if (t.rank() != 2) throw dimension_error("argmax_rows: expected rank 2, got " + to_string(t.shape()));
    std::vector<std::size_t> out(t.dim(0));
    const std::size_t cols = t.dim(1);
    for (std::size_t r = 0; r < out.size(); ++r) {
        const double* row = t.raw() + r * cols;
        std::size_t best = 0;
        for (std::size_t c = 1; c < cols; ++c)
            if (row[c] > row[best]) best = c;
        out[r] = best;
    }
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

} // namespace asymbp
