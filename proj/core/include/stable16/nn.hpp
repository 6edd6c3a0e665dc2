#pragma once

// Fully connected ReLU classifier with softmax cross-entropy and cache-based
// reverse-mode gradients. Column j of an input batch is example j.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "stable16/tensor.hpp"

namespace stable16 {

class ModelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parameters laid out W0, b0, W1, b1, ... (W_l is n_l×k_l, b_l has k_l).
template <TensorScalar T>
using ParamSet = std::vector<Tensor<T>>;

template <TensorScalar T>
class MlpModel {
public:
    MlpModel() = default;

    /// Takes W/b pairs; throws ModelError if the shapes do not chain.
    explicit MlpModel(ParamSet<T> params);

    /// Glorot-uniform weights drawn in binary64 and rounded to T, zero biases.
    static MlpModel init(std::uint64_t seed, const std::vector<std::size_t>& dims);

    std::size_t layer_count() const { return params_.size() / 2; }
    std::vector<std::size_t> dims() const;
    std::size_t parameter_count() const;

    const Tensor<T>& weight(std::size_t layer) const { return params_.at(2 * layer); }
    const Tensor<T>& bias(std::size_t layer) const { return params_.at(2 * layer + 1); }

    const ParamSet<T>& parameters() const { return params_; }
    MlpModel with_parameters(ParamSet<T> params) const { return MlpModel(std::move(params)); }

private:
    ParamSet<T> params_;
};

template <TensorScalar T>
struct ForwardCache {
    std::vector<Tensor<T>> z;  // pre-activations per layer; z.back() are the logits
    std::vector<Tensor<T>> a;  // a[0] is the input, a[l + 1] = relu(z[l])

    const Tensor<T>& logits() const { return z.back(); }
};

/// Throws ModelError on a shape mismatch or a non-finite input element.
template <TensorScalar T>
ForwardCache<T> forward(const MlpModel<T>& model, const Tensor<T>& x);

template <TensorScalar T>
struct Gradients {
    ParamSet<T> tensors;                 // congruent with the model parameters
    std::vector<double> abs_max;         // per tensor, over finite elements
    std::vector<double> abs_min_nonzero; // per tensor, 0 if no finite nonzero

    double overall_abs_max() const;
    double overall_abs_min_nonzero() const;
};

/// Per-tensor magnitude statistics over finite elements.
template <TensorScalar T>
void fill_magnitudes(Gradients<T>& g);

template <TensorScalar T>
struct LossAndGradients {
    T loss;
    Gradients<T> grads;

    double loss_real() const { return Scalar<T>::to_double(Scalar<T>::load(loss)); }
};

/// Column-wise softmax with max subtraction; sums run by ascending row.
template <TensorScalar T>
Tensor<T> softmax_columns(const Tensor<T>& logits);

/// loss_scale times the mean cross-entropy, and its gradient
/// dlogits = loss_scale·(p − onehot)/m. The multiplies are skipped when
/// loss_scale is 1. Throws ModelError on a label outside [0, k).
template <TensorScalar T>
LossAndGradients<T> loss_and_backward(const MlpModel<T>& model, const Tensor<T>& x,
                                      std::span<const std::uint8_t> labels, double loss_scale = 1.0);

/// Fraction of columns whose argmax matches the label. Ties go to the lowest
/// class index; a column containing NaN counts as wrong.
template <TensorScalar T>
double evaluate(const MlpModel<T>& model, const Tensor<T>& x, std::span<const std::uint8_t> labels);

/// Number of correct predictions (same rule as evaluate).
template <TensorScalar T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const std::uint8_t> labels);

// Checkpoint: "S16M", u16 version, u8 scalar kind, u32 layer count,
// u32 dims[layer count + 1], then each parameter tensor's little-endian bits.
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <TensorScalar T>
void save_checkpoint(const MlpModel<T>& model, std::ostream& out);

template <TensorScalar T>
MlpModel<T> load_checkpoint(std::istream& in);

}  // namespace stable16
