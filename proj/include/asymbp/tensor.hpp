#ifndef ASYMBP_TENSOR_HPP
#define ASYMBP_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace asymbp {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Raised whenever operand shapes do not agree. The message names both shapes.
class dimension_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Allocator whose value-less construction leaves doubles uninitialized.
template <class T>
struct default_init_allocator : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = default_init_allocator<U>;
    };
    using std::allocator<T>::allocator;
    template <class U>
    void construct(U* p) noexcept {
        ::new (static_cast<void*>(p)) U;
    }
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

struct uninitialized_t {};
/// Tag for tensors whose every element is written before being read.
inline constexpr uninitialized_t uninitialized{};

/// Dense row-major array of doubles. Every dimension is positive and the
/// element count always equals the product of the shape.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, uninitialized_t);
    Tensor(Shape shape, std::vector<double> data);

    /// 1-D tensor from a list of values.
    static Tensor vector(std::initializer_list<double> values);
    /// 2-D tensor from nested rows; all rows must have equal length.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double* raw() noexcept { return data_.data(); }
    const double* raw() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    // 2-D element access; no bounds check beyond the flat index.
    double& at(std::size_t row, std::size_t col) { return data_[row * shape_.back() + col]; }
    double at(std::size_t row, std::size_t col) const { return data_[row * shape_.back() + col]; }

    /// Same data viewed with a new shape of equal element count.
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    void fill(double value);
    bool all_finite() const noexcept;

    /// Bitwise comparison of shape and contents (distinguishes -0.0 from 0.0 and compares NaN payloads).
    bool bitwise_equal(const Tensor& other) const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<double, default_init_allocator<double>> data_;
};

// ---------------------------------------------------------------------------
// Matrix products. Every element accumulates its k-terms strictly in order
// k = 0, 1, ..., K-1 starting from +0.0, so results are bitwise identical to a
// naive triple loop (the build disables floating-point contraction).

/// a[m×k] · b[k×n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// aᵀ · b, with a stored as [k×m].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a · bᵀ, with b stored as [n×k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

enum class Transpose { no, yes };

/// c[m×n] = op(a) · op(b) over raw row-major storage. `a` is [m×k] (or [k×m]
/// when transposed) and `b` is [k×n] (or [n×k]). c is overwritten.
void gemm(Transpose trans_a, Transpose trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c);

// ---------------------------------------------------------------------------
// Elementwise maps

/// -1 for negative, +1 for positive, 0 for zero (and NaN maps to 0).
constexpr double sign(double x) noexcept { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
constexpr double relu(double x) noexcept { return x > 0.0 ? x : 0.0; }
constexpr double relu_deriv(double x) noexcept { return x > 0.0 ? 1.0 : 0.0; }

enum class Map { relu, relu_deriv, sign, abs, negate, square };

Tensor ewise_map(const Tensor& t, Map fn);
Tensor scale(const Tensor& t, double factor);
Tensor add_scalar(const Tensor& t, double value);
Tensor hadamard(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double factor, const Tensor& t);
Tensor& operator+=(Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Reductions. Sums accumulate left to right along the reduced axis.

enum class Reduce { sum, mean, max, argmax };

/// Reduces `axis`, dropping it from the shape (a rank-1 input yields shape {1}).
/// argmax returns indices stored as doubles; ties resolve to the lowest index.
Tensor reduce(const Tensor& t, std::size_t axis, Reduce kind);

/// Row-wise argmax of a 2-D tensor, lowest index on ties.
std::vector<std::size_t> argmax_rows(const Tensor& t);

double max_abs_diff(const Tensor& a, const Tensor& b);

} // namespace asymbp

#endif // ASYMBP_TENSOR_HPP
