#pragma once

// SGD, RMSProp and Adam as pure transitions (params, grads, state) ->
// (params', state'), with optional max-guarded denominators and a loss-scaling
// wrapper. All arithmetic is in the model's scalar kind; every operation is
// rounded, in the order written in the element kernels below.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string_view>

#include "stable16/nn.hpp"

namespace stable16 {

enum class OptimizerKind : std::uint8_t { sgd, rmsprop, adam };

std::string_view to_string(OptimizerKind kind);
/// Parses "sgd", "rmsprop" or "adam"; throws std::invalid_argument otherwise.
OptimizerKind parse_optimizer(std::string_view name);

struct HyperParams {
    double eta = 1e-3;
    double beta1 = 0.9;
    std::optional<double> beta2;  // unset: 0.999 for Adam, 0.9 for RMSProp
    double epsilon = 1e-7;
    double loss_scale = 1.0;
    bool guard = false;
    std::optional<double> guard_floor;  // unset: epsilon

    double beta2_for(OptimizerKind kind) const { return beta2.value_or(kind == OptimizerKind::adam ? 0.999 : 0.9); }
    double floor() const { return guard_floor.value_or(epsilon); }

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

template <TensorScalar T>
struct OptimState {
    ParamSet<T> m;  // Adam only
    ParamSet<T> v;  // RMSProp and Adam
    std::uint64_t t = 0;

    /// Zero moments shaped like params (m only allocated for Adam).
    static OptimState zeros_like(const ParamSet<T>& params, OptimizerKind kind);
};

/// Intermediate values of one element's update, as reals. Every value is
/// exactly representable in the scalar kind that produced it.
struct ElementTrace {
    double w = 0;       // w_{t-1}
    double g = 0;       // g_t
    double m = 0;       // m_t
    double v = 0;       // v_t
    double m_hat = 0;
    double v_hat = 0;
    double den = 0;     // sqrt(v) + eps, or sqrt(max(v, floor)) when guarded
    double update = 0;  // eta * g / den (the term subtracted from w)
    double w_new = 0;
};

/// Hyperparameters rounded to the compute kind, plus the bias corrections for
/// step t. beta^t is evaluated in binary64 from the rounded beta and rounded
/// once; 1 - beta^t is then computed in the compute kind.
template <class Ops>
struct StepConstants {
    using C = typename Ops::Compute;
    C eta, beta1, one_minus_beta1, beta2, one_minus_beta2, bias1, bias2, eps, floor;
    bool guard;

    static StepConstants make(const HyperParams& hp, OptimizerKind kind, std::uint64_t t) {
        StepConstants k{};
        const C one = Ops::from_double(1.0);
        k.eta = Ops::from_double(hp.eta);
        k.beta1 = Ops::from_double(hp.beta1);
        k.beta2 = Ops::from_double(hp.beta2_for(kind));
        k.one_minus_beta1 = Ops::sub(one, k.beta1);
        k.one_minus_beta2 = Ops::sub(one, k.beta2);
        const double td = static_cast<double>(t);
        k.bias1 = Ops::sub(one, Ops::from_double(std::pow(Ops::to_double(k.beta1), td)));
        k.bias2 = Ops::sub(one, Ops::from_double(std::pow(Ops::to_double(k.beta2), td)));
        k.eps = Ops::from_double(hp.epsilon);
        k.floor = Ops::from_double(hp.floor());
        k.guard = hp.guard;
        return k;
    }
};

// Element kernels. `Ops` is a Scalar<T>-like policy; the same code runs in
// binary16 and in the binary64 shadow used by the diagnostics.

template <class Ops>
typename Ops::Compute sgd_element(typename Ops::Compute w, typename Ops::Compute g,
                                  const StepConstants<Ops>& k, ElementTrace* trace = nullptr) {
    const auto update = Ops::mul(k.eta, g);
    const auto w_new = Ops::sub(w, update);
    if (trace) {
        *trace = ElementTrace{};
        trace->w = Ops::to_double(w);
        trace->g = Ops::to_double(g);
        trace->update = Ops::to_double(update);
        trace->w_new = Ops::to_double(w_new);
    }
    return w_new;
}

/// Denominator for an already-formed second moment: sqrt(v) + eps, or
/// sqrt(max2(v, floor)) when guarded.
template <class Ops>
typename Ops::Compute denominator(typename Ops::Compute v, const StepConstants<Ops>& k) {
    return k.guard ? Ops::sqrt(max_propagate(v, k.floor)) : Ops::add(Ops::sqrt(v), k.eps);
}

/// The weight update for given (numerator, second moment):
/// w - eta * (num / den). The ratio is formed first, so num/eps can overflow
/// regardless of eta.
template <class Ops>
typename Ops::Compute adaptive_update(typename Ops::Compute w, typename Ops::Compute num, typename Ops::Compute v,
                                      const StepConstants<Ops>& k, typename Ops::Compute* den_out = nullptr,
                                      typename Ops::Compute* update_out = nullptr) {
    const auto den = denominator(v, k);
    const auto update = Ops::mul(k.eta, Ops::div(num, den));
    if (den_out) *den_out = den;
    if (update_out) *update_out = update;
    return Ops::sub(w, update);
}

template <class Ops>
typename Ops::Compute rmsprop_element(typename Ops::Compute w, typename Ops::Compute g, typename Ops::Compute& v,
                                      const StepConstants<Ops>& k, ElementTrace* trace = nullptr) {
    v = Ops::add(Ops::mul(k.beta2, v), Ops::mul(k.one_minus_beta2, Ops::mul(g, g)));
    typename Ops::Compute den{}, update{};
    const auto w_new = adaptive_update<Ops>(w, g, v, k, &den, &update);
    if (trace) {
        *trace = ElementTrace{};
        trace->w = Ops::to_double(w);
        trace->g = Ops::to_double(g);
        trace->v = Ops::to_double(v);
        trace->v_hat = trace->v;
        trace->den = Ops::to_double(den);
        trace->update = Ops::to_double(update);
        trace->w_new = Ops::to_double(w_new);
    }
    return w_new;
}

template <class Ops>
typename Ops::Compute adam_element(typename Ops::Compute w, typename Ops::Compute g, typename Ops::Compute& m,
                                   typename Ops::Compute& v, const StepConstants<Ops>& k,
                                   ElementTrace* trace = nullptr) {
    m = Ops::add(Ops::mul(k.beta1, m), Ops::mul(k.one_minus_beta1, g));
    v = Ops::add(Ops::mul(k.beta2, v), Ops::mul(k.one_minus_beta2, Ops::mul(g, g)));
    const auto m_hat = Ops::div(m, k.bias1);
    const auto v_hat = Ops::div(v, k.bias2);
    typename Ops::Compute den{}, update{};
    const auto w_new = adaptive_update<Ops>(w, m_hat, v_hat, k, &den, &update);
    if (trace) {
        trace->w = Ops::to_double(w);
        trace->g = Ops::to_double(g);
        trace->m = Ops::to_double(m);
        trace->v = Ops::to_double(v);
        trace->m_hat = Ops::to_double(m_hat);
        trace->v_hat = Ops::to_double(v_hat);
        trace->den = Ops::to_double(den);
        trace->update = Ops::to_double(update);
        trace->w_new = Ops::to_double(w_new);
    }
    return w_new;
}

template <TensorScalar T>
struct StepResult {
    ParamSet<T> params;
    OptimState<T> state;
};

/// Called once per element with (tensor index, element index, trace).
using StepObserver = std::function<void(std::size_t, std::size_t, const ElementTrace&)>;

struct StepOptions {
    const StepObserver* observer = nullptr;
    /// Counts operations whose exact result is nonzero but rounds to zero.
    /// Doubles the cost of the step. Null disables the count.
    std::uint64_t* underflow_count = nullptr;
};

/// Shape checks shared by the steps; throws ShapeError.
template <TensorScalar T>
void check_congruent(const ParamSet<T>& params, const ParamSet<T>& other, const char* what);

template <TensorScalar T>
ParamSet<T> sgd_step(const ParamSet<T>& params, const ParamSet<T>& grads, const HyperParams& hp,
                     const StepOptions& options = {});

template <TensorScalar T>
StepResult<T> rmsprop_step(const ParamSet<T>& params, const ParamSet<T>& grads, const OptimState<T>& state,
                           const HyperParams& hp, const StepOptions& options = {});

template <TensorScalar T>
StepResult<T> adam_step(const ParamSet<T>& params, const ParamSet<T>& grads, const OptimState<T>& state,
                        const HyperParams& hp, const StepOptions& options = {});

/// Dispatches on kind; for SGD the state is returned with t incremented.
template <TensorScalar T>
StepResult<T> optimizer_step(OptimizerKind kind, const ParamSet<T>& params, const ParamSet<T>& grads,
                             const OptimState<T>& state, const HyperParams& hp, const StepOptions& options = {});

/// Runs backward(loss_scale) and multiplies every gradient (and the loss) by
/// 1/loss_scale in T. With loss_scale == 1 the result of backward is returned
/// untouched.
template <TensorScalar T, class Backward>
LossAndGradients<T> scaled_backward(double loss_scale, Backward&& backward) {
    if (!(loss_scale >= 1.0)) {
        throw std::invalid_argument("loss_scale must be >= 1");
    }
    LossAndGradients<T> out = backward(loss_scale);
    if (loss_scale == 1.0) {
        return out;
    }
    using Ops = Scalar<T>;
    const auto inv = Ops::from_double(1.0 / loss_scale);
    for (auto& g : out.grads.tensors) {
        for (auto& x : g.data()) {
            x = Ops::store(Ops::mul(Ops::load(x), inv));
        }
    }
    out.loss = Ops::store(Ops::mul(Ops::load(out.loss), inv));
    fill_magnitudes(out.grads);
    return out;
}

/// Scaled loss and gradients of the model on one batch.
template <TensorScalar T>
LossAndGradients<T> scaled_loss_and_backward(const MlpModel<T>& model, const Tensor<T>& x,
                                             std::span<const std::uint8_t> labels, double loss_scale) {
    return scaled_backward<T>(loss_scale,
                              [&](double s) { return loss_and_backward(model, x, labels, s); });
}

}  // namespace stable16
