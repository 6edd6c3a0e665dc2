#include "stable16/stability.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

namespace stable16 {

std::string_view to_string(Assumption which) {
    switch (which) {
        case Assumption::a3_1: return "A3.1";
        case Assumption::a3_2: return "A3.2";
        case Assumption::a3_3: return "A3.3";
    }
    return "?";
}

Assumption parse_assumption(std::string_view name) {
    if (name == "A3.1") return Assumption::a3_1;
    if (name == "A3.2") return Assumption::a3_2;
    if (name == "A3.3") return Assumption::a3_3;
    throw std::invalid_argument("unknown assumption '" + std::string(name) + "'");
}

Assumption assumption_for(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::sgd: return Assumption::a3_1;
        case OptimizerKind::rmsprop: return Assumption::a3_2;
        case OptimizerKind::adam: return Assumption::a3_3;
    }
    return Assumption::a3_1;
}

namespace {

std::optional<std::string> range_violation(double x, const char* name, const PredicateLimits& limits) {
    if (!std::isfinite(x)) return std::string(name) + " not finite";
    if (std::fabs(x) >= limits.max) return std::string(name) + " ≥ fp16_max";
    if (x != 0.0 && std::fabs(x) <= limits.min) return std::string(name) + " ≤ fp16_min";
    return std::nullopt;
}

// The two disjuncts shared by A3.2 and A3.3, for second moment `v` and
// numerator `num`.
std::optional<std::string> moment_violation(double v, double num, double epsilon, const char* v_name,
                                            const char* overflow_reason, const PredicateLimits& limits) {
    if (!std::isfinite(v) || v < 0.0) return std::string(v_name) + " not finite";
    if (v != 0.0) {
        if (v < limits.min) return std::string(v_name) + " below fp16_min";
        const double den = std::sqrt(v) + epsilon;
        if (!(den > limits.min && den < limits.max)) return std::string("√") + v_name + "+ε out of range";
        return std::nullopt;
    }
    if (!(std::fabs(num) / epsilon < limits.max)) return std::string(overflow_reason);
    return std::nullopt;
}

std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

std::string hex16(std::uint64_t bits, int digits) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%0*llx", digits, static_cast<unsigned long long>(bits));
    return buf;
}

int hex_digits(std::string_view precision) {
    if (precision == "fp16") return 4;
    if (precision == "fp32") return 8;
    return 16;
}

std::uint64_t bits_for_precision(std::string_view precision, double x) {
    if (precision == "fp16") return bits_of_real<F16>(x);
    if (precision == "fp32") return bits_of_real<float>(x);
    return bits_of_real<double>(x);
}

}  // namespace

std::optional<std::string> element_violation(Assumption which, const ElementTrace& e, double epsilon,
                                             const PredicateLimits& limits) {
    if (auto r = range_violation(e.g, "g", limits)) return r;
    if (!std::isfinite(e.w)) return std::string("w not finite");
    switch (which) {
        case Assumption::a3_1:
            if (!std::isfinite(e.update) || std::fabs(e.update) >= limits.max) return std::string("η·g overflow");
            return std::nullopt;
        case Assumption::a3_2:
            return moment_violation(e.v, e.g, epsilon, "v_t", "g·ε⁻¹ overflow", limits);
        case Assumption::a3_3:
            if (auto r = range_violation(e.m, "m_t", limits)) return r;
            if (!std::isfinite(e.m_hat)) return std::string("m̂_t not finite");
            return moment_violation(e.v_hat, e.m_hat, epsilon, "v̂_t", "m̂·ε⁻¹ overflow", limits);
    }
    return std::nullopt;
}

template <TensorScalar T>
std::uint64_t bits_of_real(double x) {
    if constexpr (std::is_same_v<T, F16>) {
        return from_real(x).bits();
    } else if constexpr (std::is_same_v<T, float>) {
        return std::bit_cast<std::uint32_t>(static_cast<float>(x));
    } else {
        return std::bit_cast<std::uint64_t>(x);
    }
}

template <TensorScalar T>
Snapshot take_snapshot(OptimizerKind kind, const ParamSet<T>& params, const ParamSet<T>& grads,
                       const OptimState<T>& state, const HyperParams& hp) {
    Snapshot snap;
    snap.kind = kind;
    snap.hp = hp;
    snap.precision = Scalar<T>::kind;
    std::size_t total = 0;
    for (const auto& p : params) total += p.size();
    snap.elements.reserve(total);
    const StepObserver observer = [&](std::size_t t, std::size_t i, const ElementTrace& e) {
        snap.elements.push_back(ElementRecord{t, i, e});
    };
    StepOptions options;
    options.observer = &observer;
    optimizer_step(kind, params, grads, state, hp, options);
    return snap;
}

AssumptionResult check_assumption(Assumption which, const Snapshot& snapshot, const PredicateLimits& limits) {
    if (assumption_for(snapshot.kind) != which) {
        throw SnapshotError(std::string(to_string(which)) + " does not apply to a " +
                            std::string(to_string(snapshot.kind)) + " snapshot");
    }
    const double eps = [&] {
        switch (snapshot.precision) {
            case ScalarKind::f16: return round_to<F16>(snapshot.hp.epsilon);
            case ScalarKind::f32: return round_to<float>(snapshot.hp.epsilon);
            case ScalarKind::f64: return snapshot.hp.epsilon;
        }
        return snapshot.hp.epsilon;
    }();
    AssumptionResult result;
    for (const auto& rec : snapshot.elements) {
        if (auto reason = element_violation(which, rec.trace, eps, limits)) {
            ++result.violating_elements;
            if (!result.violation) {
                result.violation = Violation{which, rec.tensor, rec.index, std::move(*reason), rec.trace};
            }
        }
    }
    result.holds = result.violating_elements == 0;
    return result;
}

template <TensorScalar T>
EventCounts scan_tensors(const ParamSet<T>& tensors) {
    EventCounts c;
    double lo = INFINITY;
    for (const auto& t : tensors) {
        for (T x : t.data()) {
            ++c.elements;
            const double v = Scalar<T>::to_double(Scalar<T>::load(x));
            switch (classify(from_real(v))) {
                case FpClass::zero: ++c.zero; break;
                case FpClass::subnormal: ++c.subnormal; break;
                case FpClass::inf: ++c.inf; break;
                case FpClass::nan: ++c.nan; break;
                case FpClass::normal: break;
            }
            if (std::isfinite(v)) {
                c.finite_abs_max = std::max(c.finite_abs_max, std::fabs(v));
                if (v != 0.0) lo = std::min(lo, std::fabs(v));
            }
        }
    }
    c.finite_abs_min_nonzero = std::isfinite(lo) ? lo : 0.0;
    return c;
}

template <TensorScalar T>
SpecialDelta count_new_specials(const ParamSet<T>& before, const ParamSet<T>& after) {
    check_congruent(before, after, "count_new_specials");
    SpecialDelta d;
    for (std::size_t t = 0; t < before.size(); ++t) {
        const auto b = before[t].data();
        const auto a = after[t].data();
        for (std::size_t i = 0; i < b.size(); ++i) {
            const auto vb = Scalar<T>::load(b[i]);
            const auto va = Scalar<T>::load(a[i]);
            bool event = false;
            if (is_nan(va) && !is_nan(vb)) {
                ++d.nan_created;
                event = true;
            } else if (!is_nan(va) && !is_finite(va) && is_finite(vb)) {
                ++d.overflow_to_inf;
                event = true;
            }
            if (event && !d.first_tensor) {
                d.first_tensor = t;
                d.first_index = i;
            }
        }
    }
    return d;
}

namespace {

void add_delta(SpecialDelta& total, const SpecialDelta& d) {
    total.overflow_to_inf += d.overflow_to_inf;
    total.nan_created += d.nan_created;
    if (!total.first_tensor && d.first_tensor) {
        total.first_tensor = d.first_tensor;
        total.first_index = d.first_index;
    }
}

}  // namespace

template <TensorScalar T>
Observation predict_then_observe(OptimizerKind kind, const ParamSet<T>& params, const ParamSet<T>& grads,
                                 const OptimState<T>& state, const HyperParams& hp, const PredicateLimits& limits,
                                 std::size_t max_counterexamples) {
    Observation obs;
    obs.which = assumption_for(kind);
    const Snapshot snap = take_snapshot(kind, params, grads, state, hp);
    const AssumptionResult predicted = check_assumption(obs.which, snap, limits);
    obs.predicted_safe = predicted.holds;
    obs.violation = predicted.violation;

    const StepResult<T> result = optimizer_step(kind, params, grads, state, hp);
    obs.observed = count_new_specials(params, result.params);
    if (!state.m.empty()) add_delta(obs.observed, count_new_specials(state.m, result.state.m));
    if (!state.v.empty()) add_delta(obs.observed, count_new_specials(state.v, result.state.v));

    if (!obs.consistent()) {
        for (const auto& rec : snap.elements) {
            if (obs.counterexamples.size() >= max_counterexamples) break;
            const double after = Scalar<T>::to_double(Scalar<T>::load(result.params[rec.tensor][rec.index]));
            const ElementTrace& e = rec.trace;
            const bool created = (std::isnan(after) && !std::isnan(e.w)) || (std::isinf(after) && std::isfinite(e.w)) ||
                                 !std::isfinite(e.m) || !std::isfinite(e.v);
            if (created) {
                obs.counterexamples.push_back(ElementBits{rec.tensor, rec.index, bits_of_real<T>(e.w),
                                                          bits_of_real<T>(e.g), bits_of_real<T>(e.m),
                                                          bits_of_real<T>(e.v), bits_of_real<T>(after)});
            }
        }
    }
    return obs;
}

// ---------------------------------------------------------------------------
// Monitor

template <TensorScalar T>
StabilityMonitor<T>::StabilityMonitor(OptimizerKind kind, const HyperParams& hp, PredicateLimits limits,
                                      bool diagnostic)
    : kind_(kind), hp_(hp), limits_(limits), which_(assumption_for(kind)), epsilon_(round_to<T>(hp.epsilon)) {
    report_.precision = std::string(to_string(Scalar<T>::kind));
    report_.optimizer = std::string(to_string(kind));
    report_.guard = hp.guard;
    report_.epsilon = hp.epsilon;
    report_.diagnostic = diagnostic;
    report_.fp16_min = limits.min >= f16::kMinNormalValue ? "normal" : "subnormal";
    report_.assumption = std::string(to_string(which_));
    observer_ = [this](std::size_t t, std::size_t i, const ElementTrace& e) {
        if (!violated_this_step_) {
            if (auto reason = element_violation(which_, e, epsilon_, limits_)) {
                violated_this_step_ = true;
                if (!report_.first_violation) {
                    pending_violation_ = Violation{which_, t, i, std::move(*reason), e};
                }
            }
        }
        if (!pending_inf_ && std::isfinite(e.w) && std::isinf(e.w_new)) pending_inf_ = ElementRecord{t, i, e};
        if (!pending_nan_ && !std::isnan(e.w) && std::isnan(e.w_new)) pending_nan_ = ElementRecord{t, i, e};
    };
}

template <TensorScalar T>
StepOptions StabilityMonitor<T>::options() {
    violated_this_step_ = false;
    pending_violation_.reset();
    pending_inf_.reset();
    pending_nan_.reset();
    underflow_step_ = 0;
    StepOptions o;
    o.observer = &observer_;
    o.underflow_count = report_.diagnostic ? &underflow_step_ : nullptr;
    return o;
}

template <TensorScalar T>
void StabilityMonitor<T>::record_events(const char* buffer, const ParamSet<T>& before, const ParamSet<T>& after) {
    const std::uint64_t step = report_.steps;
    for (std::size_t t = 0; t < before.size(); ++t) {
        const auto b = before[t].data();
        const auto a = after[t].data();
        for (std::size_t i = 0; i < b.size(); ++i) {
            const auto vb = Scalar<T>::load(b[i]);
            const auto va = Scalar<T>::load(a[i]);
            std::optional<EventRecord>* slot = nullptr;
            const ElementRecord* pending = nullptr;
            if (is_nan(va) && !is_nan(vb)) {
                ++report_.nan_created;
                ++epoch_.nan_created;
                slot = &report_.first_nan_event;
                pending = pending_nan_ ? &*pending_nan_ : nullptr;
            } else if (!is_nan(va) && !is_finite(va) && is_finite(vb)) {
                ++report_.overflow_to_inf;
                ++epoch_.overflow_to_inf;
                slot = &report_.first_inf_event;
                pending = pending_inf_ ? &*pending_inf_ : nullptr;
            } else {
                continue;
            }
            if (slot == &report_.first_nan_event && !report_.first_nan_step) report_.first_nan_step = step;
            if (slot == &report_.first_inf_event && !report_.first_inf_step) report_.first_inf_step = step;
            if (!slot->has_value()) {
                EventRecord ev;
                ev.step = step;
                ev.buffer = buffer;
                ev.tensor = t;
                ev.index = i;
                ev.bits_before = bits_of_real<T>(Scalar<T>::to_double(vb));
                ev.bits_after = bits_of_real<T>(Scalar<T>::to_double(va));
                if (pending && std::string_view(buffer) == "w" && pending->tensor == t && pending->index == i) {
                    ev.trace = pending->trace;
                }
                *slot = ev;
            }
        }
    }
}

template <TensorScalar T>
void StabilityMonitor<T>::after_step(const ParamSet<T>& params_before, const OptimState<T>& state_before,
                                     const StepResult<T>& result, const Gradients<T>& grads) {
    ++report_.steps;
    report_.underflow_to_zero += underflow_step_;
    epoch_.underflow_to_zero += underflow_step_;
    underflow_step_ = 0;
    if (violated_this_step_) {
        ++report_.violating_steps;
        if (!report_.first_violation && pending_violation_) {
            report_.first_violation = ViolationRecord{report_.steps, *pending_violation_};
        }
    }
    record_events("w", params_before, result.params);
    if (!state_before.m.empty()) record_events("m", state_before.m, result.state.m);
    if (!state_before.v.empty()) record_events("v", state_before.v, result.state.v);

    const double hi = grads.overall_abs_max();
    const double lo = grads.overall_abs_min_nonzero();
    if (!epoch_has_grads_) {
        epoch_.grad_abs_max = hi;
        epoch_.grad_abs_min_nonzero = lo;
        epoch_has_grads_ = true;
    } else {
        epoch_.grad_abs_max = std::max(epoch_.grad_abs_max, hi);
        if (lo > 0.0 && (epoch_.grad_abs_min_nonzero == 0.0 || lo < epoch_.grad_abs_min_nonzero)) {
            epoch_.grad_abs_min_nonzero = lo;
        }
    }
}

template <TensorScalar T>
EpochStats StabilityMonitor<T>::end_epoch(int epoch, double train_loss, double test_accuracy,
                                          const ParamSet<T>& params) {
    std::uint64_t nan = 0, total = 0;
    for (const auto& p : params) {
        for (T x : p.data()) {
            ++total;
            if (is_nan(Scalar<T>::load(x))) ++nan;
        }
    }
    epoch_.epoch = epoch;
    epoch_.train_loss = train_loss;
    epoch_.test_accuracy = test_accuracy;
    epoch_.weight_nan_fraction = total ? static_cast<double>(nan) / static_cast<double>(total) : 0.0;
    report_.epochs.push_back(epoch_);
    EpochStats done = epoch_;
    epoch_ = EpochStats{};
    epoch_has_grads_ = false;
    return done;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using nlohmann::json;

// JSON has no inf/NaN; those are written as strings.
json real(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    return x;
}

double real_from(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "nan") return NAN;
        if (s == "inf") return INFINITY;
        if (s == "-inf") return -INFINITY;
    }
    throw ReportError("report: expected a number, got " + j.dump());
}

template <class V>
json optional_json(const std::optional<V>& v) {
    return v ? json(*v) : json(nullptr);
}

json trace_json(const ElementTrace& e) {
    return json{{"w", real(e.w)},       {"g", real(e.g)},         {"m", real(e.m)},
                {"v", real(e.v)},       {"m_hat", real(e.m_hat)}, {"v_hat", real(e.v_hat)},
                {"den", real(e.den)},   {"update", real(e.update)}, {"w_new", real(e.w_new)}};
}

ElementTrace trace_from(const json& j) {
    ElementTrace e;
    e.w = real_from(j.at("w"));
    e.g = real_from(j.at("g"));
    e.m = real_from(j.at("m"));
    e.v = real_from(j.at("v"));
    e.m_hat = real_from(j.at("m_hat"));
    e.v_hat = real_from(j.at("v_hat"));
    e.den = real_from(j.at("den"));
    e.update = real_from(j.at("update"));
    e.w_new = real_from(j.at("w_new"));
    return e;
}

json event_json(const std::optional<EventRecord>& ev) {
    if (!ev) return nullptr;
    json j{{"step", ev->step},
           {"buffer", ev->buffer},
           {"tensor", ev->tensor},
           {"index", ev->index},
           {"bits_before", ev->bits_before},
           {"bits_after", ev->bits_after}};
    j["trace"] = ev->trace ? trace_json(*ev->trace) : json(nullptr);
    return j;
}

std::optional<EventRecord> event_from(const json& j) {
    if (j.is_null()) return std::nullopt;
    EventRecord ev;
    ev.step = j.at("step").get<std::uint64_t>();
    ev.buffer = j.at("buffer").get<std::string>();
    ev.tensor = j.at("tensor").get<std::size_t>();
    ev.index = j.at("index").get<std::size_t>();
    ev.bits_before = j.at("bits_before").get<std::uint64_t>();
    ev.bits_after = j.at("bits_after").get<std::uint64_t>();
    if (!j.at("trace").is_null()) ev.trace = trace_from(j.at("trace"));
    return ev;
}

template <class V>
std::optional<V> optional_from(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<V>();
}

}  // namespace

std::string to_json(const StabilityReport& r, int indent) {
    json j;
    j["precision"] = r.precision;
    j["optimizer"] = r.optimizer;
    j["guard"] = r.guard;
    j["epsilon"] = real(r.epsilon);
    j["diagnostic"] = r.diagnostic;
    j["fp16_min"] = r.fp16_min;
    j["steps"] = r.steps;
    j["counts"] = {{"underflow_to_zero", r.diagnostic ? json(r.underflow_to_zero) : json(nullptr)},
                   {"overflow_to_inf", r.overflow_to_inf},
                   {"nan_created", r.nan_created}};
    j["first_nan_step"] = optional_json(r.first_nan_step);
    j["first_inf_step"] = optional_json(r.first_inf_step);
    j["first_inf_event"] = event_json(r.first_inf_event);
    j["first_nan_event"] = event_json(r.first_nan_event);
    j["assumption"] = r.assumption;
    j["violating_steps"] = r.violating_steps;
    if (r.first_violation) {
        const Violation& v = r.first_violation->violation;
        j["first_violation"] = {{"step", r.first_violation->step},
                                {"assumption", std::string(to_string(v.which))},
                                {"tensor", v.tensor},
                                {"index", v.index},
                                {"reason", v.reason},
                                {"trace", trace_json(v.trace)}};
    } else {
        j["first_violation"] = nullptr;
    }
    json epochs = json::array();
    for (const auto& e : r.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", real(e.train_loss)},
                          {"test_accuracy", real(e.test_accuracy)},
                          {"grad_abs_max", real(e.grad_abs_max)},
                          {"grad_abs_min_nonzero", real(e.grad_abs_min_nonzero)},
                          {"weight_nan_fraction", real(e.weight_nan_fraction)},
                          {"nan_created", e.nan_created},
                          {"overflow_to_inf", e.overflow_to_inf},
                          {"underflow_to_zero", r.diagnostic ? json(e.underflow_to_zero) : json(nullptr)}});
    }
    j["epochs"] = std::move(epochs);
    return j.dump(indent);
}

StabilityReport report_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ReportError(std::string("report: not valid JSON: ") + e.what());
    }
    try {
        StabilityReport r;
        r.precision = j.at("precision").get<std::string>();
        r.optimizer = j.at("optimizer").get<std::string>();
        r.guard = j.at("guard").get<bool>();
        r.epsilon = real_from(j.at("epsilon"));
        r.diagnostic = j.at("diagnostic").get<bool>();
        r.fp16_min = j.value("fp16_min", std::string("subnormal"));
        r.steps = j.at("steps").get<std::uint64_t>();
        const json& c = j.at("counts");
        r.underflow_to_zero = c.at("underflow_to_zero").is_null() ? 0 : c.at("underflow_to_zero").get<std::uint64_t>();
        r.overflow_to_inf = c.at("overflow_to_inf").get<std::uint64_t>();
        r.nan_created = c.at("nan_created").get<std::uint64_t>();
        r.first_nan_step = optional_from<std::uint64_t>(j.at("first_nan_step"));
        r.first_inf_step = optional_from<std::uint64_t>(j.at("first_inf_step"));
        r.first_inf_event = event_from(j.at("first_inf_event"));
        r.first_nan_event = event_from(j.at("first_nan_event"));
        r.assumption = j.at("assumption").get<std::string>();
        r.violating_steps = j.at("violating_steps").get<std::uint64_t>();
        const json& fv = j.at("first_violation");
        if (!fv.is_null()) {
            ViolationRecord rec;
            rec.step = fv.at("step").get<std::uint64_t>();
            rec.violation.which = parse_assumption(fv.at("assumption").get<std::string>());
            rec.violation.tensor = fv.at("tensor").get<std::size_t>();
            rec.violation.index = fv.at("index").get<std::size_t>();
            rec.violation.reason = fv.at("reason").get<std::string>();
            rec.violation.trace = trace_from(fv.at("trace"));
            r.first_violation = rec;
        }
        for (const auto& e : j.at("epochs")) {
            EpochStats s;
            s.epoch = e.at("epoch").get<int>();
            s.train_loss = real_from(e.at("train_loss"));
            s.test_accuracy = real_from(e.at("test_accuracy"));
            s.grad_abs_max = real_from(e.at("grad_abs_max"));
            s.grad_abs_min_nonzero = real_from(e.at("grad_abs_min_nonzero"));
            s.weight_nan_fraction = real_from(e.at("weight_nan_fraction"));
            s.nan_created = e.at("nan_created").get<std::uint64_t>();
            s.overflow_to_inf = e.at("overflow_to_inf").get<std::uint64_t>();
            s.underflow_to_zero = e.at("underflow_to_zero").is_null() ? 0 : e.at("underflow_to_zero").get<std::uint64_t>();
            r.epochs.push_back(s);
        }
        return r;
    } catch (const json::exception& e) {
        throw ReportError(std::string("report: malformed: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ReportError(std::string("report: malformed: ") + e.what());
    }
}

std::string analyze(const StabilityReport& r) {
    std::ostringstream os;
    const int digits = hex_digits(r.precision);
    os << "run: " << r.precision << " " << r.optimizer << " guard=" << (r.guard ? "on" : "off")
       << " epsilon=" << format_double(r.epsilon) << ", " << r.steps << " steps, " << r.epochs.size() << " epochs\n";

    const bool clean = r.nan_created == 0 && r.overflow_to_inf == 0 && !r.first_violation;
    if (clean) {
        os << "no instability events";
        if (r.diagnostic) os << " (underflow_to_zero " << r.underflow_to_zero << ")";
        os << "\n";
    } else {
        os << "events: overflow_to_inf " << r.overflow_to_inf << ", nan_created " << r.nan_created
           << ", underflow_to_zero " << (r.diagnostic ? std::to_string(r.underflow_to_zero) : "not counted") << "\n";
    }

    auto describe = [&](const char* label, const std::optional<EventRecord>& ev) {
        if (!ev) return;
        os << label << ": step " << ev->step << ", " << ev->buffer << "[tensor " << ev->tensor << "][" << ev->index
           << "] " << hex16(ev->bits_before, digits) << " -> " << hex16(ev->bits_after, digits) << "\n";
        if (ev->trace) {
            const ElementTrace& e = *ev->trace;
            os << "  w=" << format_double(e.w) << " g=" << format_double(e.g) << " m_hat=" << format_double(e.m_hat)
               << " v_hat=" << format_double(e.v_hat) << " den=" << format_double(e.den)
               << " update=" << format_double(e.update) << "\n";
        }
    };
    describe("first inf", r.first_inf_event);
    describe("first NaN", r.first_nan_event);

    if (r.first_inf_step && r.first_nan_step) {
        const char* rel = *r.first_inf_step < *r.first_nan_step   ? " < "
                          : *r.first_inf_step == *r.first_nan_step ? " = "
                                                                   : " > ";
        os << "ordering: first_inf_step " << *r.first_inf_step << rel << "first_nan_step " << *r.first_nan_step
           << "\n";
    } else if (r.first_nan_step) {
        os << "ordering: NaN at step " << *r.first_nan_step << " with no preceding inf in parameters or moments\n";
    } else if (r.first_inf_step) {
        os << "ordering: inf at step " << *r.first_inf_step << ", no NaN\n";
    }

    if (r.first_violation) {
        const Violation& v = r.first_violation->violation;
        const ElementTrace& e = v.trace;
        os << to_string(v.which) << " violated: " << v.reason << " (first at step " << r.first_violation->step
           << ", tensor " << v.tensor << " element " << v.index << "; " << r.violating_steps << " of " << r.steps
           << " steps violated)\n";
        os << "  g=" << format_double(e.g) << " (" << hex16(bits_for_precision(r.precision, e.g), digits) << ")"
           << " m_hat=" << format_double(e.m_hat) << " (" << hex16(bits_for_precision(r.precision, e.m_hat), digits)
           << ")"
           << " v_hat=" << format_double(e.v_hat) << " (" << hex16(bits_for_precision(r.precision, e.v_hat), digits)
           << ")"
           << " update=" << format_double(e.update) << "\n";
    } else if (!r.assumption.empty()) {
        os << r.assumption << " held on every step\n";
    }

    if (!r.epochs.empty()) {
        const EpochStats& last = r.epochs.back();
        os << "final epoch " << last.epoch << ": test_accuracy " << format_double(last.test_accuracy)
           << ", weight_nan_fraction " << format_double(last.weight_nan_fraction) << "\n";
    }
    return os.str();
}

#define STABLE16_INSTANTIATE(T)                                                                                  \
    template std::uint64_t bits_of_real<T>(double);                                                              \
    template Snapshot take_snapshot(OptimizerKind, const ParamSet<T>&, const ParamSet<T>&, const OptimState<T>&, \
                                    const HyperParams&);                                                         \
    template EventCounts scan_tensors(const ParamSet<T>&);                                                       \
    template SpecialDelta count_new_specials(const ParamSet<T>&, const ParamSet<T>&);                            \
    template Observation predict_then_observe(OptimizerKind, const ParamSet<T>&, const ParamSet<T>&,             \
                                              const OptimState<T>&, const HyperParams&, const PredicateLimits&,  \
                                              std::size_t);                                                      \
    template class StabilityMonitor<T>;

STABLE16_INSTANTIATE(F16)
STABLE16_INSTANTIATE(float)
STABLE16_INSTANTIATE(double)

#undef STABLE16_INSTANTIATE

}  // namespace stable16
