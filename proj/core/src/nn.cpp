#include "stable16/nn.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "stable16/rng.hpp"

namespace stable16 {

namespace {

template <class T>
using Compute = typename Scalar<T>::Compute;

// One representable step toward zero.
template <class T>
T toward_zero(T x) {
    if constexpr (std::is_same_v<T, F16>) {
        return iszero(x) ? x : F16::from_bits(static_cast<std::uint16_t>(x.bits() - 1));
    } else {
        return std::nextafter(x, T(0));
    }
}

template <class T>
double magnitude(T x) {
    return std::fabs(Scalar<T>::to_double(Scalar<T>::load(x)));
}

template <class T>
void check_chain(const ParamSet<T>& params) {
    if (params.empty() || params.size() % 2 != 0) {
        throw ModelError("model: expected W/b pairs, got " + std::to_string(params.size()) + " tensors");
    }
    for (std::size_t l = 0; l < params.size() / 2; ++l) {
        const Tensor<T>& w = params[2 * l];
        const Tensor<T>& b = params[2 * l + 1];
        if (w.rank() != 2 || b.rank() != 1 || b.size() != w.cols()) {
            throw ModelError("model: layer " + std::to_string(l) + " has W " + shape_string(w.shape()) + " and b " +
                             shape_string(b.shape()));
        }
        if (l > 0 && params[2 * l - 2].cols() != w.rows()) {
            throw ModelError("model: layer " + std::to_string(l) + " input " + std::to_string(w.rows()) +
                             " does not match previous output " + std::to_string(params[2 * l - 2].cols()));
        }
    }
}

template <class T>
void write_le(std::ostream& out, T value) {
    std::array<char, sizeof(T)> buf;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        buf[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
    }
    out.write(buf.data(), buf.size());
}

template <class T>
T read_le(std::istream& in) {
    std::array<unsigned char, sizeof(T)> buf{};
    in.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (!in) {
        throw CheckpointError("checkpoint: truncated");
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    }
    return static_cast<T>(v);
}

template <class T>
auto element_bits(T x) {
    if constexpr (std::is_same_v<T, F16>) {
        return x.bits();
    } else if constexpr (std::is_same_v<T, float>) {
        return std::bit_cast<std::uint32_t>(x);
    } else {
        return std::bit_cast<std::uint64_t>(x);
    }
}

template <class T>
T element_from_bits(std::istream& in) {
    if constexpr (std::is_same_v<T, F16>) {
        return F16::from_bits(read_le<std::uint16_t>(in));
    } else if constexpr (std::is_same_v<T, float>) {
        return std::bit_cast<float>(read_le<std::uint32_t>(in));
    } else {
        return std::bit_cast<double>(read_le<std::uint64_t>(in));
    }
}

}  // namespace

template <TensorScalar T>
MlpModel<T>::MlpModel(ParamSet<T> params) : params_(std::move(params)) {
    check_chain(params_);
}

template <TensorScalar T>
MlpModel<T> MlpModel<T>::init(std::uint64_t seed, const std::vector<std::size_t>& dims) {
    if (dims.size() < 2) {
        throw ModelError("model: need at least an input and an output size");
    }
    if (std::find(dims.begin(), dims.end(), std::size_t{0}) != dims.end()) {
        throw ModelError("model: layer sizes must be positive");
    }
    using Ops = Scalar<T>;
    ParamSet<T> params;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const std::size_t n = dims[l], k = dims[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(n + k));
        Xoshiro256 rng(derive_seed(seed, l));
        std::vector<T> w(n * k);
        for (auto& x : w) {
            T v = Ops::store(Ops::from_double(bound * (2.0 * rng.uniform() - 1.0)));
            while (magnitude(v) > bound) {
                v = toward_zero(v);
            }
            x = v;
        }
        params.emplace_back(Shape{n, k}, std::move(w));
        params.emplace_back(Shape{k});
    }
    return MlpModel(std::move(params));
}

template <TensorScalar T>
std::vector<std::size_t> MlpModel<T>::dims() const {
    std::vector<std::size_t> out;
    if (params_.empty()) {
        return out;
    }
    out.push_back(params_[0].rows());
    for (std::size_t l = 0; l < layer_count(); ++l) {
        out.push_back(weight(l).cols());
    }
    return out;
}

template <TensorScalar T>
std::size_t MlpModel<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.size();
    }
    return n;
}

template <TensorScalar T>
ForwardCache<T> forward(const MlpModel<T>& model, const Tensor<T>& x) {
    if (model.layer_count() == 0) {
        throw ModelError("forward: empty model");
    }
    if (x.rank() != 2 || x.rows() != model.weight(0).rows()) {
        throw ModelError("forward: input " + shape_string(x.shape()) + " does not match input size " +
                         std::to_string(model.weight(0).rows()));
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!is_finite(Scalar<T>::load(x[i]))) {
            throw ModelError("forward: non-finite input at element " + std::to_string(i));
        }
    }
    ForwardCache<T> cache;
    cache.a.push_back(x);
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        cache.z.push_back(affine(matmul_t(model.weight(l), cache.a.back()), model.bias(l)));
        if (l + 1 < model.layer_count()) {
            cache.a.push_back(relu(cache.z.back()));
        }
    }
    return cache;
}

template <TensorScalar T>
double Gradients<T>::overall_abs_max() const {
    return abs_max.empty() ? 0.0 : *std::max_element(abs_max.begin(), abs_max.end());
}

template <TensorScalar T>
double Gradients<T>::overall_abs_min_nonzero() const {
    double best = 0.0;
    for (double v : abs_min_nonzero) {
        if (v > 0.0 && (best == 0.0 || v < best)) {
            best = v;
        }
    }
    return best;
}

template <TensorScalar T>
void fill_magnitudes(Gradients<T>& g) {
    g.abs_max.assign(g.tensors.size(), 0.0);
    g.abs_min_nonzero.assign(g.tensors.size(), 0.0);
    for (std::size_t t = 0; t < g.tensors.size(); ++t) {
        double hi = 0.0, lo = std::numeric_limits<double>::infinity();
        for (T x : g.tensors[t].data()) {
            const double v = magnitude(x);
            if (!std::isfinite(v)) {
                continue;
            }
            hi = std::max(hi, v);
            if (v > 0.0) {
                lo = std::min(lo, v);
            }
        }
        g.abs_max[t] = hi;
        g.abs_min_nonzero[t] = std::isfinite(lo) ? lo : 0.0;
    }
}

template <TensorScalar T>
Tensor<T> softmax_columns(const Tensor<T>& logits) {
    if (logits.rank() != 2) {
        throw ShapeError("softmax: expected a matrix, got " + shape_string(logits.shape()));
    }
    using Ops = Scalar<T>;
    using C = Compute<T>;
    const std::size_t k = logits.rows(), m = logits.cols();
    std::vector<T> out(k * m);
    std::vector<C> e(k);
    for (std::size_t j = 0; j < m; ++j) {
        C peak = Ops::load(logits[j]);
        for (std::size_t i = 1; i < k; ++i) {
            peak = max_propagate(peak, Ops::load(logits[i * m + j]));
        }
        C sum(0);
        for (std::size_t i = 0; i < k; ++i) {
            e[i] = Ops::exp(Ops::sub(Ops::load(logits[i * m + j]), peak));
            sum = Ops::add(sum, e[i]);
        }
        for (std::size_t i = 0; i < k; ++i) {
            out[i * m + j] = Ops::store(Ops::div(e[i], sum));
        }
    }
    return Tensor<T>(logits.shape(), std::move(out));
}

template <TensorScalar T>
LossAndGradients<T> loss_and_backward(const MlpModel<T>& model, const Tensor<T>& x,
                                      std::span<const std::uint8_t> labels, double loss_scale) {
    using Ops = Scalar<T>;
    using C = Compute<T>;
    const auto cache = forward(model, x);
    const Tensor<T>& logits = cache.logits();
    const std::size_t k = logits.rows(), m = logits.cols();
    if (labels.size() != m) {
        throw ModelError("loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(m) + " examples");
    }
    for (std::size_t j = 0; j < m; ++j) {
        if (labels[j] >= k) {
            throw ModelError("loss: label " + std::to_string(labels[j]) + " outside [0, " + std::to_string(k) + ")");
        }
    }

    const Tensor<T> p = softmax_columns(logits);
    const C floor = Ops::from_double(Ops::min_normal());
    const C count = Ops::from_double(static_cast<double>(m));
    const C scale = Ops::from_double(loss_scale);

    C total(0);
    for (std::size_t j = 0; j < m; ++j) {
        const C py = Ops::load(p[labels[j] * m + j]);
        total = Ops::sub(total, Ops::log(max_propagate(py, floor)));
    }

    std::vector<T> dz(k * m);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            C d = Ops::load(p[i * m + j]);
            if (labels[j] == i) {
                d = Ops::sub(d, C(1));
            }
            if (loss_scale != 1.0) {
                d = Ops::mul(d, scale);
            }
            dz[i * m + j] = Ops::store(Ops::div(d, count));
        }
    }

    const std::size_t layers = model.layer_count();
    C loss = Ops::div(total, count);
    if (loss_scale != 1.0) {
        loss = Ops::mul(loss, scale);
    }
    LossAndGradients<T> result{Ops::store(loss), {}};
    result.grads.tensors.resize(2 * layers);
    Tensor<T> delta(logits.shape(), std::move(dz));
    for (std::size_t l = layers; l-- > 0;) {
        result.grads.tensors[2 * l] = matmul_nt(cache.a[l], delta);
        result.grads.tensors[2 * l + 1] = row_sums(delta);
        if (l > 0) {
            delta = relu_backward(matmul(model.weight(l), delta), cache.z[l - 1]);
        }
    }
    fill_magnitudes(result.grads);
    return result;
}

template <TensorScalar T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
    using Ops = Scalar<T>;
    const std::size_t k = logits.rows(), m = logits.cols();
    if (labels.size() != m) {
        throw ModelError("evaluate: " + std::to_string(labels.size()) + " labels for " + std::to_string(m) +
                         " examples");
    }
    std::size_t correct = 0;
    for (std::size_t j = 0; j < m; ++j) {
        bool poisoned = false;
        std::size_t best = 0;
        auto best_value = Ops::load(logits[j]);
        for (std::size_t i = 0; i < k; ++i) {
            const auto v = Ops::load(logits[i * m + j]);
            if (is_nan(v)) {
                poisoned = true;
                break;
            }
            if (v > best_value) {
                best_value = v;
                best = i;
            }
        }
        if (!poisoned && best == labels[j]) {
            ++correct;
        }
    }
    return correct;
}

template <TensorScalar T>
double evaluate(const MlpModel<T>& model, const Tensor<T>& x, std::span<const std::uint8_t> labels) {
    if (labels.empty()) {
        return 0.0;
    }
    const auto cache = forward(model, x);
    return static_cast<double>(count_correct(cache.logits(), labels)) / static_cast<double>(labels.size());
}

template <TensorScalar T>
void save_checkpoint(const MlpModel<T>& model, std::ostream& out) {
    out.write("S16M", 4);
    write_le<std::uint16_t>(out, kCheckpointVersion);
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(Scalar<T>::kind));
    const auto dims = model.dims();
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.layer_count()));
    for (std::size_t d : dims) {
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    for (const auto& p : model.parameters()) {
        for (T x : p.data()) {
            write_le(out, element_bits(x));
        }
    }
    if (!out) {
        throw CheckpointError("checkpoint: write failed");
    }
}

template <TensorScalar T>
MlpModel<T> load_checkpoint(std::istream& in) {
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "S16M", 4) != 0) {
        throw CheckpointError("checkpoint: bad magic");
    }
    const auto version = read_le<std::uint16_t>(in);
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    }
    const auto kind = read_le<std::uint8_t>(in);
    if (kind != static_cast<std::uint8_t>(Scalar<T>::kind)) {
        throw CheckpointError("checkpoint: stored precision " + std::string(to_string(static_cast<ScalarKind>(kind))) +
                              " does not match requested " + std::string(to_string(Scalar<T>::kind)));
    }
    const auto layers = read_le<std::uint32_t>(in);
    if (layers == 0 || layers > 1024) {
        throw CheckpointError("checkpoint: implausible layer count " + std::to_string(layers));
    }
    std::vector<std::size_t> dims(layers + 1);
    for (auto& d : dims) {
        d = read_le<std::uint32_t>(in);
        if (d == 0) {
            throw CheckpointError("checkpoint: zero layer size");
        }
    }
    ParamSet<T> params;
    for (std::size_t l = 0; l < layers; ++l) {
        std::vector<T> w(dims[l] * dims[l + 1]);
        for (auto& x : w) x = element_from_bits<T>(in);
        std::vector<T> b(dims[l + 1]);
        for (auto& x : b) x = element_from_bits<T>(in);
        params.emplace_back(Shape{dims[l], dims[l + 1]}, std::move(w));
        params.emplace_back(Shape{dims[l + 1]}, std::move(b));
    }
    return MlpModel<T>(std::move(params));
}

#define STABLE16_INSTANTIATE(T)                                                                              \
    template class MlpModel<T>;                                                                              \
    template struct Gradients<T>;                                                                            \
    template ForwardCache<T> forward(const MlpModel<T>&, const Tensor<T>&);                                  \
    template void fill_magnitudes(Gradients<T>&);                                                            \
    template Tensor<T> softmax_columns(const Tensor<T>&);                                                    \
    template LossAndGradients<T> loss_and_backward(const MlpModel<T>&, const Tensor<T>&,                     \
                                                   std::span<const std::uint8_t>, double);                   \
    template std::size_t count_correct(const Tensor<T>&, std::span<const std::uint8_t>);                     \
    template double evaluate(const MlpModel<T>&, const Tensor<T>&, std::span<const std::uint8_t>);           \
    template void save_checkpoint(const MlpModel<T>&, std::ostream&);                                        \
    template MlpModel<T> load_checkpoint(std::istream&);

STABLE16_INSTANTIATE(F16)
STABLE16_INSTANTIATE(float)
STABLE16_INSTANTIATE(double)

#undef STABLE16_INSTANTIATE

}  // namespace stable16
