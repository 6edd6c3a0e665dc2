#include "stable16/optim.hpp"

#include <string>

namespace stable16 {

std::string_view to_string(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::rmsprop: return "rmsprop";
        case OptimizerKind::adam: return "adam";
    }
    return "?";
}

OptimizerKind parse_optimizer(std::string_view name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "rmsprop") return OptimizerKind::rmsprop;
    if (name == "adam") return OptimizerKind::adam;
    throw std::invalid_argument("unknown optimizer '" + std::string(name) + "' (expected sgd, rmsprop or adam)");
}

void HyperParams::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("hyperparameters: " + msg); };
    if (!(eta > 0.0) || !std::isfinite(eta)) fail("eta must be positive, got " + std::to_string(eta));
    if (!(beta1 > 0.0 && beta1 < 1.0)) fail("beta1 must lie in (0, 1), got " + std::to_string(beta1));
    if (beta2 && !(*beta2 > 0.0 && *beta2 < 1.0)) fail("beta2 must lie in (0, 1), got " + std::to_string(*beta2));
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) fail("epsilon must be positive, got " + std::to_string(epsilon));
    if (!(loss_scale >= 1.0) || !std::isfinite(loss_scale)) {
        fail("loss_scale must be >= 1, got " + std::to_string(loss_scale));
    }
    if (guard_floor && (!(*guard_floor > 0.0) || !std::isfinite(*guard_floor))) {
        fail("guard_floor must be positive, got " + std::to_string(*guard_floor));
    }
}

template <TensorScalar T>
OptimState<T> OptimState<T>::zeros_like(const ParamSet<T>& params, OptimizerKind kind) {
    OptimState s;
    for (const auto& p : params) {
        if (kind == OptimizerKind::adam) s.m.emplace_back(p.shape());
        if (kind != OptimizerKind::sgd) s.v.emplace_back(p.shape());
    }
    return s;
}

namespace {

// Scalar policy that counts operations whose exact result is nonzero but
// whose rounded result is zero. The exact-result test is done on the real
// operands (a + b = 0 iff b = -a, a * b = 0 iff a factor is 0, and so on),
// which is what a binary64 shadow of the same operation reports for every
// kind here.
template <class Base>
struct UnderflowProbe : Base {
    using C = typename Base::Compute;
    static inline thread_local std::uint64_t* counter = nullptr;

    static void note(C result, bool exact_nonzero) {
        if (result == C(0) && exact_nonzero) ++*counter;
    }
    static bool finite_nonzero(C x) { return x != C(0) && is_finite(x); }

    static C add(C a, C b) {
        const C r = Base::add(a, b);
        note(r, !(a == -b));
        return r;
    }
    static C sub(C a, C b) {
        const C r = Base::sub(a, b);
        note(r, !(a == b));
        return r;
    }
    static C mul(C a, C b) {
        const C r = Base::mul(a, b);
        note(r, finite_nonzero(a) && finite_nonzero(b));
        return r;
    }
    static C div(C a, C b) {
        const C r = Base::div(a, b);
        note(r, finite_nonzero(a) && is_finite(b));
        return r;
    }
    static C sqrt(C a) {
        const C r = Base::sqrt(a);
        note(r, a > C(0));
        return r;
    }
};

template <class T>
struct StepTensors {
    const ParamSet<T>& params;
    const ParamSet<T>& grads;
    ParamSet<T> out;
    ParamSet<T> m;
    ParamSet<T> v;
};

template <class Ops, class T>
void run_sgd(StepTensors<T>& s, const StepConstants<Ops>& k, const StepObserver* observer) {
    for (std::size_t p = 0; p < s.params.size(); ++p) {
        const auto w = s.params[p].data();
        const auto g = s.grads[p].data();
        auto out = s.out[p].data();
        ElementTrace trace;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const auto r = sgd_element<Ops>(Ops::load(w[i]), Ops::load(g[i]), k, observer ? &trace : nullptr);
            out[i] = Ops::store(r);
            if (observer) (*observer)(p, i, trace);
        }
    }
}

template <class Ops, class T>
void run_rmsprop(StepTensors<T>& s, const StepConstants<Ops>& k, const StepObserver* observer) {
    for (std::size_t p = 0; p < s.params.size(); ++p) {
        const auto w = s.params[p].data();
        const auto g = s.grads[p].data();
        auto out = s.out[p].data();
        auto v = s.v[p].data();
        ElementTrace trace;
        for (std::size_t i = 0; i < w.size(); ++i) {
            auto vi = Ops::load(v[i]);
            const auto r = rmsprop_element<Ops>(Ops::load(w[i]), Ops::load(g[i]), vi, k, observer ? &trace : nullptr);
            out[i] = Ops::store(r);
            v[i] = Ops::store(vi);
            if (observer) (*observer)(p, i, trace);
        }
    }
}

template <class Ops, class T>
void run_adam(StepTensors<T>& s, const StepConstants<Ops>& k, const StepObserver* observer) {
    for (std::size_t p = 0; p < s.params.size(); ++p) {
        const auto w = s.params[p].data();
        const auto g = s.grads[p].data();
        auto out = s.out[p].data();
        auto m = s.m[p].data();
        auto v = s.v[p].data();
        ElementTrace trace;
        for (std::size_t i = 0; i < w.size(); ++i) {
            auto mi = Ops::load(m[i]);
            auto vi = Ops::load(v[i]);
            const auto r =
                adam_element<Ops>(Ops::load(w[i]), Ops::load(g[i]), mi, vi, k, observer ? &trace : nullptr);
            out[i] = Ops::store(r);
            m[i] = Ops::store(mi);
            v[i] = Ops::store(vi);
            if (observer) (*observer)(p, i, trace);
        }
    }
}

// Runs `body` with either the plain or the counting policy.
template <class T, class Body>
void with_policy(const StepOptions& options, Body&& body) {
    if (options.underflow_count) {
        using Probe = UnderflowProbe<Scalar<T>>;
        Probe::counter = options.underflow_count;
        body(static_cast<Probe*>(nullptr));
        Probe::counter = nullptr;
    } else {
        body(static_cast<Scalar<T>*>(nullptr));
    }
}

}  // namespace

template <TensorScalar T>
void check_congruent(const ParamSet<T>& params, const ParamSet<T>& other, const char* what) {
    if (params.size() != other.size()) {
        throw ShapeError(std::string(what) + ": " + std::to_string(other.size()) + " tensors for " +
                         std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape() != other[i].shape()) {
            throw ShapeError(std::string(what) + ": tensor " + std::to_string(i) + " is " +
                             shape_string(other[i].shape()) + ", parameter is " + shape_string(params[i].shape()));
        }
    }
}

template <TensorScalar T>
ParamSet<T> sgd_step(const ParamSet<T>& params, const ParamSet<T>& grads, const HyperParams& hp,
                     const StepOptions& options) {
    check_congruent(params, grads, "sgd_step: grads");
    StepTensors<T> s{params, grads, params, {}, {}};
    with_policy<T>(options, [&](auto* policy) {
        using Ops = std::remove_pointer_t<decltype(policy)>;
        run_sgd<Ops>(s, StepConstants<Ops>::make(hp, OptimizerKind::sgd, 1), options.observer);
    });
    return std::move(s.out);
}

template <TensorScalar T>
StepResult<T> rmsprop_step(const ParamSet<T>& params, const ParamSet<T>& grads, const OptimState<T>& state,
                           const HyperParams& hp, const StepOptions& options) {
    check_congruent(params, grads, "rmsprop_step: grads");
    check_congruent(params, state.v, "rmsprop_step: v");
    StepTensors<T> s{params, grads, params, state.m, state.v};
    const std::uint64_t t = state.t + 1;
    with_policy<T>(options, [&](auto* policy) {
        using Ops = std::remove_pointer_t<decltype(policy)>;
        run_rmsprop<Ops>(s, StepConstants<Ops>::make(hp, OptimizerKind::rmsprop, t), options.observer);
    });
    return StepResult<T>{std::move(s.out), OptimState<T>{std::move(s.m), std::move(s.v), t}};
}

template <TensorScalar T>
StepResult<T> adam_step(const ParamSet<T>& params, const ParamSet<T>& grads, const OptimState<T>& state,
                        const HyperParams& hp, const StepOptions& options) {
    check_congruent(params, grads, "adam_step: grads");
    check_congruent(params, state.m, "adam_step: m");
    check_congruent(params, state.v, "adam_step: v");
    StepTensors<T> s{params, grads, params, state.m, state.v};
    const std::uint64_t t = state.t + 1;
    with_policy<T>(options, [&](auto* policy) {
        using Ops = std::remove_pointer_t<decltype(policy)>;
        run_adam<Ops>(s, StepConstants<Ops>::make(hp, OptimizerKind::adam, t), options.observer);
    });
    return StepResult<T>{std::move(s.out), OptimState<T>{std::move(s.m), std::move(s.v), t}};
}

template <TensorScalar T>
StepResult<T> optimizer_step(OptimizerKind kind, const ParamSet<T>& params, const ParamSet<T>& grads,
                             const OptimState<T>& state, const HyperParams& hp, const StepOptions& options) {
    switch (kind) {
        case OptimizerKind::sgd:
            return StepResult<T>{sgd_step(params, grads, hp, options), OptimState<T>{state.m, state.v, state.t + 1}};
        case OptimizerKind::rmsprop: return rmsprop_step(params, grads, state, hp, options);
        case OptimizerKind::adam: return adam_step(params, grads, state, hp, options);
    }
    throw std::invalid_argument("optimizer_step: unknown optimizer");
}

#define STABLE16_INSTANTIATE(T)                                                                                   \
    template struct OptimState<T>;                                                                                \
    template void check_congruent(const ParamSet<T>&, const ParamSet<T>&, const char*);                           \
    template ParamSet<T> sgd_step(const ParamSet<T>&, const ParamSet<T>&, const HyperParams&, const StepOptions&); \
    template StepResult<T> rmsprop_step(const ParamSet<T>&, const ParamSet<T>&, const OptimState<T>&,             \
                                        const HyperParams&, const StepOptions&);                                  \
    template StepResult<T> adam_step(const ParamSet<T>&, const ParamSet<T>&, const OptimState<T>&,                \
                                     const HyperParams&, const StepOptions&);                                     \
    template StepResult<T> optimizer_step(OptimizerKind, const ParamSet<T>&, const ParamSet<T>&,                  \
                                          const OptimState<T>&, const HyperParams&, const StepOptions&);

STABLE16_INSTANTIATE(F16)
STABLE16_INSTANTIATE(float)
STABLE16_INSTANTIATE(double)

#undef STABLE16_INSTANTIATE

}  // namespace stable16
