#pragma once

// Detection and classification of numerical events during training, and the
// sufficiency conditions A3.1 (SGD), A3.2 (RMSProp) and A3.3 (Adam) evaluated
// as predicates over optimizer state.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stable16/optim.hpp"

namespace stable16 {

enum class Assumption : std::uint8_t { a3_1, a3_2, a3_3 };

std::string_view to_string(Assumption which);
Assumption parse_assumption(std::string_view name);
Assumption assumption_for(OptimizerKind kind);

/// The fp16_min / fp16_max pair used by the predicates.
struct PredicateLimits {
    double min = f16::kMinSubnormalValue;
    double max = f16::kMaxFiniteValue;

    static PredicateLimits fp16(bool use_min_normal = false) {
        return {use_min_normal ? f16::kMinNormalValue : f16::kMinSubnormalValue, f16::kMaxFiniteValue};
    }
    template <TensorScalar T>
    static PredicateLimits of(bool use_min_normal = false) {
        return {use_min_normal ? Scalar<T>::min_normal() : Scalar<T>::min_subnormal(), Scalar<T>::max_finite()};
    }
};

/// Element-level predicate. Returns the reason for the first failed condition,
/// or nothing when the assumption holds for this element. Zero gradients and
/// zero moments are exempt from the fp16_min lower bounds. g·ε⁻¹ (m̂·ε⁻¹) is
/// compared as the exact real |g|/ε against fp16_max, with ε already rounded
/// to the run's precision.
std::optional<std::string> element_violation(Assumption which, const ElementTrace& e, double epsilon,
                                             const PredicateLimits& limits);

struct ElementRecord {
    std::size_t tensor = 0;
    std::size_t index = 0;
    ElementTrace trace;
};

/// Optimizer inputs and the intermediates the predicates need, for every
/// element, produced by a dry run of the step kernels.
struct Snapshot {
    OptimizerKind kind = OptimizerKind::sgd;
    HyperParams hp;
    ScalarKind precision = ScalarKind::f16;
    std::vector<ElementRecord> elements;
};

template <TensorScalar T>
Snapshot take_snapshot(OptimizerKind kind, const ParamSet<T>& params, const ParamSet<T>& grads,
                       const OptimState<T>& state, const HyperParams& hp);

class SnapshotError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Violation {
    Assumption which = Assumption::a3_1;
    std::size_t tensor = 0;
    std::size_t index = 0;
    std::string reason;
    ElementTrace trace;
};

struct AssumptionResult {
    bool holds = true;
    std::optional<Violation> violation;  // first offending element
    std::size_t violating_elements = 0;
};

/// Throws SnapshotError when the snapshot's optimizer does not match the
/// assumption (A3.1 needs SGD, A3.2 RMSProp, A3.3 Adam).
AssumptionResult check_assumption(Assumption which, const Snapshot& snapshot, const PredicateLimits& limits = {});

struct EventCounts {
    std::uint64_t elements = 0;
    std::uint64_t zero = 0;
    std::uint64_t subnormal = 0;
    std::uint64_t inf = 0;
    std::uint64_t nan = 0;
    double finite_abs_max = 0.0;
    double finite_abs_min_nonzero = 0.0;  // 0 when there is no finite nonzero
};

/// Classifies every element as binary16 would (values are rounded to binary16
/// first for wider kinds) and records |x| range over finite elements.
template <TensorScalar T>
EventCounts scan_tensors(const ParamSet<T>& tensors);

struct SpecialDelta {
    std::uint64_t overflow_to_inf = 0;  // finite before, ±inf after
    std::uint64_t nan_created = 0;      // not NaN before, NaN after
    std::optional<std::size_t> first_tensor;
    std::optional<std::size_t> first_index;

    bool any() const { return overflow_to_inf + nan_created > 0; }
};

/// Element-wise comparison of tensors before and after a transition. Each
/// element contributes to at most one counter.
template <TensorScalar T>
SpecialDelta count_new_specials(const ParamSet<T>& before, const ParamSet<T>& after);

/// Raw bits of one element, for verbatim counterexamples.
struct ElementBits {
    std::size_t tensor = 0;
    std::size_t index = 0;
    std::uint64_t w = 0, g = 0, m = 0, v = 0, w_new = 0;
};

struct Observation {
    Assumption which = Assumption::a3_1;
    bool predicted_safe = true;
    std::optional<Violation> violation;
    SpecialDelta observed;
    std::vector<ElementBits> counterexamples;  // filled only when inconsistent

    /// The sufficiency claim: predicate holds implies no new specials.
    bool consistent() const { return !predicted_safe || !observed.any(); }
};

/// Evaluates the optimizer's assumption on the snapshot the step is about to
/// see, runs the real step, and checks the claim against the outcome.
template <TensorScalar T>
Observation predict_then_observe(OptimizerKind kind, const ParamSet<T>& params, const ParamSet<T>& grads,
                                 const OptimState<T>& state, const HyperParams& hp,
                                 const PredicateLimits& limits = {}, std::size_t max_counterexamples = 8);

// ---------------------------------------------------------------------------
// Run-level report.

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
    double grad_abs_max = 0.0;
    double grad_abs_min_nonzero = 0.0;
    double weight_nan_fraction = 0.0;
    std::uint64_t nan_created = 0;
    std::uint64_t overflow_to_inf = 0;
    std::uint64_t underflow_to_zero = 0;
};

/// One element-level event, with the bits of the values involved.
struct EventRecord {
    std::uint64_t step = 0;
    std::string buffer;  // "w", "m" or "v"
    std::size_t tensor = 0;
    std::size_t index = 0;
    std::uint64_t bits_before = 0;
    std::uint64_t bits_after = 0;
    std::optional<ElementTrace> trace;
};

struct ViolationRecord {
    std::uint64_t step = 0;
    Violation violation;
};

struct StabilityReport {
    std::string precision;
    std::string optimizer;
    bool guard = false;
    double epsilon = 0.0;
    bool diagnostic = false;
    std::string fp16_min = "subnormal";

    std::uint64_t steps = 0;
    std::uint64_t underflow_to_zero = 0;
    std::uint64_t overflow_to_inf = 0;
    std::uint64_t nan_created = 0;
    std::optional<std::uint64_t> first_nan_step;
    std::optional<std::uint64_t> first_inf_step;
    std::optional<EventRecord> first_inf_event;
    std::optional<EventRecord> first_nan_event;

    std::string assumption;  // "A3.1", "A3.2" or "A3.3"
    std::uint64_t violating_steps = 0;
    std::optional<ViolationRecord> first_violation;

    std::vector<EpochStats> epochs;
};

class ReportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string to_json(const StabilityReport& report, int indent = 2);
/// Throws ReportError on malformed input.
StabilityReport report_from_json(std::string_view text);

/// Human-readable account of a report: onset steps, first failed predicate,
/// the offending element's bits.
std::string analyze(const StabilityReport& report);

/// Tracks a training run: install options() on every optimizer step, then
/// call after_step() with the step's input and output.
template <TensorScalar T>
class StabilityMonitor {
public:
    StabilityMonitor(OptimizerKind kind, const HyperParams& hp, PredicateLimits limits, bool diagnostic);
    StabilityMonitor(const StabilityMonitor&) = delete;
    StabilityMonitor& operator=(const StabilityMonitor&) = delete;

    StepOptions options();

    void after_step(const ParamSet<T>& params_before, const OptimState<T>& state_before,
                    const StepResult<T>& result, const Gradients<T>& grads);

    EpochStats end_epoch(int epoch, double train_loss, double test_accuracy, const ParamSet<T>& params);

    const StabilityReport& report() const { return report_; }

private:
    void record_events(const char* buffer, const ParamSet<T>& before, const ParamSet<T>& after);

    OptimizerKind kind_;
    HyperParams hp_;
    PredicateLimits limits_;
    Assumption which_;
    double epsilon_;  // rounded to T
    StabilityReport report_;
    StepObserver observer_;
    std::uint64_t underflow_step_ = 0;
    bool violated_this_step_ = false;
    std::optional<Violation> pending_violation_;
    std::optional<ElementRecord> pending_inf_, pending_nan_;
    EpochStats epoch_;
    bool epoch_has_grads_ = false;
};

/// Bits of a value of kind T stored in a trace (exactly representable).
template <TensorScalar T>
std::uint64_t bits_of_real(double x);

}  // namespace stable16
