#pragma once

// Dense row-major tensors over one scalar kind.
//
// In binary16 mode every product and every partial sum is rounded to
// binary16; there are no wide accumulators. Reductions run in ascending index
// order from a +0 accumulator, so results do not depend on the thread count.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stable16/scalar.hpp"

namespace stable16 {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

template <TensorScalar T>
class Tensor {
public:
    using value_type = T;
    using ops = Scalar<T>;
    static constexpr ScalarKind kind = Scalar<T>::kind;

    Tensor() = default;

    /// Zero-filled tensor.
    explicit Tensor(Shape shape);

    Tensor(Shape shape, std::vector<T> data);

    static Tensor filled(Shape shape, T value);

    /// Builds a tensor from real values, rounding each to T.
    static Tensor from_reals(Shape shape, std::span<const double> values);
    static Tensor from_reals(Shape shape, std::initializer_list<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.size() > 1 ? shape_[1] : 1; }

    std::span<const T> data() const { return data_; }
    std::span<T> data() { return data_; }

    const T& operator[](std::size_t i) const { return data_[i]; }
    T& operator[](std::size_t i) { return data_[i]; }

    const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

    double real(std::size_t i) const { return ops::to_double(ops::load(data_[i])); }
    std::vector<double> reals() const;

    /// Bitwise equality (distinguishes -0 from +0 and compares NaNs by bits).
    bool bit_equal(const Tensor& other) const;

private:
    Shape shape_;
    std::vector<T> data_;
};

/// Number of worker threads the kernels may use (default 1). Results are
/// identical for every setting.
void set_kernel_threads(unsigned threads);
unsigned kernel_threads();

/// Wᵀ·X for W n×k and X n×m, giving k×m.
template <TensorScalar T>
Tensor<T> matmul_t(const Tensor<T>& w, const Tensor<T>& x);

/// A·B for A n×r and B r×m.
template <TensorScalar T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// A·Bᵀ for A n×r and B m×r, giving n×m.
template <TensorScalar T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <TensorScalar T>
Tensor<T> transpose(const Tensor<T>& a);

/// Adds bias b (length k) to every column of Z (k×m).
template <TensorScalar T>
Tensor<T> affine(const Tensor<T>& z, const Tensor<T>& bias);

template <TensorScalar T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <TensorScalar T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise product.
template <TensorScalar T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b);

/// Multiplies every element by s (s rounded to T first).
template <TensorScalar T>
Tensor<T> scale(const Tensor<T>& a, double s);

/// Sum over columns of a k×m matrix, giving k.
template <TensorScalar T>
Tensor<T> row_sums(const Tensor<T>& a);

/// max(z, +0) with NaN propagation.
template <TensorScalar T>
Tensor<T> relu(const Tensor<T>& z);

/// Passes upstream where z > 0, zero where z <= 0, NaN where z is NaN.
template <TensorScalar T>
Tensor<T> relu_backward(const Tensor<T>& upstream, const Tensor<T>& z);

/// Valid (no padding), stride-1 2-D convolution: I H×W, F h×w.
template <TensorScalar T>
Tensor<T> conv2d_valid(const Tensor<T>& input, const Tensor<T>& filter);

/// 2×2 max pooling with stride 2; both input dimensions must be even.
template <TensorScalar T>
Tensor<T> maxpool2(const Tensor<T>& input);

/// Converts between scalar kinds by rounding each real value once.
template <TensorScalar To, TensorScalar From>
Tensor<To> cast(const Tensor<From>& a) {
    std::vector<To> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = Scalar<To>::store(Scalar<To>::from_double(a.real(i)));
    }
    return Tensor<To>(a.shape(), std::move(out));
}

}  // namespace stable16
