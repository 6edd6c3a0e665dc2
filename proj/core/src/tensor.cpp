#include "stable16/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <functional>
#include <sstream>
#include <thread>

namespace stable16 {

std::string_view to_string(ScalarKind kind) {
    switch (kind) {
        case ScalarKind::f16: return "fp16";
        case ScalarKind::f32: return "fp32";
        case ScalarKind::f64: return "fp64";
    }
    return "?";
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::atomic<unsigned> g_threads{1};

// Runs fn(begin, end) over [0, n) in contiguous chunks, chunk boundaries
// aligned to `align`.
void parallel_rows(std::size_t n, std::size_t align, const std::function<void(std::size_t, std::size_t)>& fn) {
    const unsigned threads = g_threads.load(std::memory_order_relaxed);
    const std::size_t blocks = (n + align - 1) / align;
    if (threads <= 1 || blocks < 2) {
        fn(0, n);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(threads, blocks);
    const std::size_t per = (blocks + workers - 1) / workers;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = std::min(n, w * per * align);
        const std::size_t end = std::min(n, (w + 1) * per * align);
        if (begin < end) {
            pool.emplace_back([&fn, begin, end] { fn(begin, end); });
        }
    }
}

template <class T>
using Compute = typename Scalar<T>::Compute;

template <class T>
std::vector<Compute<T>> load_all(const Tensor<T>& t) {
    std::vector<Compute<T>> out(t.size());
    const auto data = t.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = Scalar<T>::load(data[i]);
    }
    return out;
}

template <class T>
Tensor<T> store_all(Shape shape, const std::vector<Compute<T>>& values) {
    std::vector<T> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = Scalar<T>::store(values[i]);
    }
    return Tensor<T>(std::move(shape), std::move(out));
}

template <class C>
std::vector<C> transposed(const std::vector<C>& a, std::size_t rows, std::size_t cols) {
    std::vector<C> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    return out;
}

template <class C>
std::size_t count_zeros(const std::vector<C>& a) {
    return static_cast<std::size_t>(std::count(a.begin(), a.end(), C(0)));
}

constexpr std::size_t kRowBlock = 4;

// out[i, :] = sum over r of a[i, r] * b[r, :], r ascending, from +0.
//
// The accumulator starts at +0 and x + (-x) rounds to +0, so it never holds
// -0. A zero a[i, r] against a finite row b[r, :] adds only signed zeros and
// the term can be skipped without changing any bit.
template <class T>
std::vector<Compute<T>> accumulate_rows(const std::vector<Compute<T>>& a, const std::vector<Compute<T>>& b,
                                        std::size_t rows, std::size_t inner, std::size_t cols) {
    using C = Compute<T>;
    using Ops = Scalar<T>;
    std::vector<C> out(rows * cols, C(0));
    std::vector<unsigned char> row_finite(inner);
    for (std::size_t r = 0; r < inner; ++r) {
        const C* br = b.data() + r * cols;
        row_finite[r] = std::all_of(br, br + cols, [](C v) { return is_finite(v); }) ? 1 : 0;
    }
    parallel_rows(rows, kRowBlock, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i0 = begin; i0 < end; i0 += kRowBlock) {
            const std::size_t i1 = std::min(end, i0 + kRowBlock);
            for (std::size_t r = 0; r < inner; ++r) {
                const C* br = b.data() + r * cols;
                for (std::size_t i = i0; i < i1; ++i) {
                    const C air = a[i * inner + r];
                    if (air == C(0) && row_finite[r]) {
                        continue;
                    }
                    C* o = out.data() + i * cols;
                    for (std::size_t j = 0; j < cols; ++j) {
                        o[j] = Ops::add(o[j], Ops::mul(air, br[j]));
                    }
                }
            }
        }
    });
    return out;
}

// left (n×r) times right (r×m). Multiplication commutes exactly, so the
// product can be formed as (rightᵀ·leftᵀ)ᵀ with the same reduction order;
// the operand with more zeros drives the skip.
template <class T>
std::vector<Compute<T>> product(const std::vector<Compute<T>>& left, const std::vector<Compute<T>>& right,
                                std::size_t n, std::size_t r, std::size_t m) {
    if (count_zeros(right) > count_zeros(left)) {
        const auto out_t = accumulate_rows<T>(transposed(right, r, m), transposed(left, n, r), m, r, n);
        return transposed(out_t, m, n);
    }
    return accumulate_rows<T>(left, right, n, r, m);
}

template <class T>
void require_rank2(const Tensor<T>& t, const char* what) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(what) + ": expected a matrix, got " + shape_string(t.shape()));
    }
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

template <class T, class F>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, F f) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = Scalar<T>::store(f(Scalar<T>::load(a[i]), Scalar<T>::load(b[i])));
    }
    return Tensor<T>(a.shape(), std::move(out));
}

}  // namespace

void set_kernel_threads(unsigned threads) { g_threads.store(std::max(1u, threads)); }
unsigned kernel_threads() { return g_threads.load(); }

template <TensorScalar T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)), data_(element_count(shape_)) {
    std::fill(data_.begin(), data_.end(), Scalar<T>::store(0));
}

template <TensorScalar T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
        throw ShapeError("tensor: shape " + shape_string(shape_) + " does not hold " + std::to_string(data_.size()) +
                         " elements");
    }
}

template <TensorScalar T>
Tensor<T> Tensor<T>::filled(Shape shape, T value) {
    const std::size_t n = element_count(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <TensorScalar T>
Tensor<T> Tensor<T>::from_reals(Shape shape, std::span<const double> values) {
    std::vector<T> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = Scalar<T>::store(Scalar<T>::from_double(values[i]));
    }
    return Tensor(std::move(shape), std::move(out));
}

template <TensorScalar T>
Tensor<T> Tensor<T>::from_reals(Shape shape, std::initializer_list<double> values) {
    return from_reals(std::move(shape), std::span<const double>(values.begin(), values.size()));
}

template <TensorScalar T>
std::vector<double> Tensor<T>::reals() const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) {
        out[i] = real(i);
    }
    return out;
}

template <TensorScalar T>
bool Tensor<T>::bit_equal(const Tensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0);
}

template <TensorScalar T>
Tensor<T> matmul_t(const Tensor<T>& w, const Tensor<T>& x) {
    require_rank2(w, "matmul_t");
    require_rank2(x, "matmul_t");
    if (w.rows() != x.rows()) {
        throw ShapeError("matmul_t: inner dimensions differ, W " + shape_string(w.shape()) + " X " +
                         shape_string(x.shape()));
    }
    const std::size_t n = w.rows(), k = w.cols(), m = x.cols();
    const auto wt = transposed(load_all(w), n, k);
    return store_all<T>({k, m}, product<T>(wt, load_all(x), k, n, m));
}

template <TensorScalar T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()));
    }
    const std::size_t n = a.rows(), r = a.cols(), m = b.cols();
    return store_all<T>({n, m}, product<T>(load_all(a), load_all(b), n, r, m));
}

template <TensorScalar T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: inner dimensions differ, " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()) + "ᵀ");
    }
    const std::size_t n = a.rows(), r = a.cols(), m = b.rows();
    const auto bt = transposed(load_all(b), m, r);
    return store_all<T>({n, m}, product<T>(load_all(a), bt, n, r, m));
}

template <TensorScalar T>
Tensor<T> transpose(const Tensor<T>& a) {
    require_rank2(a, "transpose");
    std::vector<T> out(a.size());
    const std::size_t rows = a.rows(), cols = a.cols();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    return Tensor<T>({cols, rows}, std::move(out));
}

template <TensorScalar T>
Tensor<T> affine(const Tensor<T>& z, const Tensor<T>& bias) {
    require_rank2(z, "affine");
    if (bias.size() != z.rows()) {
        throw ShapeError("affine: bias " + shape_string(bias.shape()) + " does not match rows of " +
                         shape_string(z.shape()));
    }
    using Ops = Scalar<T>;
    std::vector<T> out(z.size());
    const std::size_t cols = z.cols();
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto b = Ops::load(bias[i]);
        for (std::size_t j = 0; j < cols; ++j) {
            out[i * cols + j] = Ops::store(Ops::add(Ops::load(z[i * cols + j]), b));
        }
    }
    return Tensor<T>(z.shape(), std::move(out));
}

template <TensorScalar T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    return elementwise(a, b, [](auto x, auto y) { return Scalar<T>::add(x, y); });
}

template <TensorScalar T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "sub");
    return elementwise(a, b, [](auto x, auto y) { return Scalar<T>::sub(x, y); });
}

template <TensorScalar T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "hadamard");
    return elementwise(a, b, [](auto x, auto y) { return Scalar<T>::mul(x, y); });
}

template <TensorScalar T>
Tensor<T> scale(const Tensor<T>& a, double s) {
    using Ops = Scalar<T>;
    const auto factor = Ops::from_double(s);
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = Ops::store(Ops::mul(Ops::load(a[i]), factor));
    }
    return Tensor<T>(a.shape(), std::move(out));
}

template <TensorScalar T>
Tensor<T> row_sums(const Tensor<T>& a) {
    require_rank2(a, "row_sums");
    using Ops = Scalar<T>;
    using C = Compute<T>;
    std::vector<T> out(a.rows());
    const std::size_t cols = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        C acc(0);
        for (std::size_t j = 0; j < cols; ++j) {
            acc = Ops::add(acc, Ops::load(a[i * cols + j]));
        }
        out[i] = Ops::store(acc);
    }
    return Tensor<T>({a.rows()}, std::move(out));
}

template <TensorScalar T>
Tensor<T> relu(const Tensor<T>& z) {
    using Ops = Scalar<T>;
    using C = Compute<T>;
    std::vector<T> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = Ops::store(max_propagate(Ops::load(z[i]), C(0)));
    }
    return Tensor<T>(z.shape(), std::move(out));
}

template <TensorScalar T>
Tensor<T> relu_backward(const Tensor<T>& upstream, const Tensor<T>& z) {
    require_same_shape(upstream, z, "relu_backward");
    using Ops = Scalar<T>;
    using C = Compute<T>;
    std::vector<T> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const C zi = Ops::load(z[i]);
        C g = C(0);
        if (is_nan(zi)) {
            g = std::numeric_limits<C>::quiet_NaN();
        } else if (zi > C(0)) {
            g = Ops::load(upstream[i]);
        }
        out[i] = Ops::store(g);
    }
    return Tensor<T>(z.shape(), std::move(out));
}

template <TensorScalar T>
Tensor<T> conv2d_valid(const Tensor<T>& input, const Tensor<T>& filter) {
    require_rank2(input, "conv2d_valid");
    require_rank2(filter, "conv2d_valid");
    const std::size_t h = input.rows(), w = input.cols(), fh = filter.rows(), fw = filter.cols();
    if (fh > h || fw > w || fh == 0 || fw == 0) {
        throw ShapeError("conv2d_valid: filter " + shape_string(filter.shape()) + " does not fit input " +
                         shape_string(input.shape()));
    }
    using Ops = Scalar<T>;
    using C = Compute<T>;
    const auto in = load_all(input);
    const auto f = load_all(filter);
    const std::size_t oh = h - fh + 1, ow = w - fw + 1;
    std::vector<T> out(oh * ow);
    for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
            C acc(0);
            for (std::size_t u = 0; u < fh; ++u) {
                for (std::size_t v = 0; v < fw; ++v) {
                    acc = Ops::add(acc, Ops::mul(in[(i + u) * w + (j + v)], f[u * fw + v]));
                }
            }
            out[i * ow + j] = Ops::store(acc);
        }
    }
    return Tensor<T>({oh, ow}, std::move(out));
}

template <TensorScalar T>
Tensor<T> maxpool2(const Tensor<T>& input) {
    require_rank2(input, "maxpool2");
    const std::size_t h = input.rows(), w = input.cols();
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("maxpool2: odd dimension in " + shape_string(input.shape()));
    }
    using Ops = Scalar<T>;
    std::vector<T> out((h / 2) * (w / 2));
    for (std::size_t i = 0; i < h / 2; ++i) {
        for (std::size_t j = 0; j < w / 2; ++j) {
            auto m = Ops::load(input[(2 * i) * w + 2 * j]);
            m = max_propagate(m, Ops::load(input[(2 * i) * w + 2 * j + 1]));
            m = max_propagate(m, Ops::load(input[(2 * i + 1) * w + 2 * j]));
            m = max_propagate(m, Ops::load(input[(2 * i + 1) * w + 2 * j + 1]));
            out[i * (w / 2) + j] = Ops::store(m);
        }
    }
    return Tensor<T>({h / 2, w / 2}, std::move(out));
}

#define STABLE16_INSTANTIATE(T)                                                   \
    template class Tensor<T>;                                                     \
    template Tensor<T> matmul_t(const Tensor<T>&, const Tensor<T>&);              \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                \
    template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);             \
    template Tensor<T> transpose(const Tensor<T>&);                               \
    template Tensor<T> affine(const Tensor<T>&, const Tensor<T>&);                \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> hadamard(const Tensor<T>&, const Tensor<T>&);              \
    template Tensor<T> scale(const Tensor<T>&, double);                           \
    template Tensor<T> row_sums(const Tensor<T>&);                                \
    template Tensor<T> relu(const Tensor<T>&);                                    \
    template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);         \
    template Tensor<T> conv2d_valid(const Tensor<T>&, const Tensor<T>&);          \
    template Tensor<T> maxpool2(const Tensor<T>&);

STABLE16_INSTANTIATE(F16)
STABLE16_INSTANTIATE(float)
STABLE16_INSTANTIATE(double)

#undef STABLE16_INSTANTIATE

}  // namespace stable16
