#include "stable16/conformance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "stable16/rng.hpp"

namespace stable16::conformance {

F16 oracle_round(double x) {
    if (std::isnan(x)) {
        return f16::kQuietNaN;
    }
    const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0;
    const double ax = std::fabs(x);
    if (std::isinf(x) || ax >= f16::kOverflowThreshold) {
        return F16::from_bits(sign | 0x7C00);
    }
    if (ax == 0.0) {
        return F16::from_bits(sign);
    }
    int e = 0;
    std::frexp(ax, &e);  // ax in [2^(e-1), 2^e)
    int q = std::max(e - 1 - 10, -24);
    double n = std::nearbyint(std::ldexp(ax, -q));  // default mode is ties-to-even
    if (n == 0.0) {
        return F16::from_bits(sign);
    }
    if (n == 2048.0) {
        n = 1024.0;
        ++q;
    }
    const auto mant = static_cast<std::uint16_t>(n);
    if (q == -24 && mant < 1024) {
        return F16::from_bits(sign | mant);
    }
    const int biased = q + 25;
    if (biased >= 31) {
        return F16::from_bits(sign | 0x7C00);
    }
    return F16::from_bits(static_cast<std::uint16_t>(sign | (biased << 10) | (mant - 1024)));
}

double oracle_decode(F16 a) {
    const std::uint16_t b = a.bits();
    const int e = (b >> 10) & 0x1F;
    const int m = b & 0x3FF;
    const double s = (b & 0x8000) != 0 ? -1.0 : 1.0;
    if (e == 31) {
        return m == 0 ? s * INFINITY : NAN;
    }
    if (e == 0) {
        return s * std::ldexp(m, -24);
    }
    return s * std::ldexp(1024 + m, e - 25);
}

Implementation softfloat() {
    return Implementation{
        .add = &stable16::add,
        .sub = &stable16::sub,
        .mul = &stable16::mul,
        .div = &stable16::div,
        .sqrt = &stable16::sqrt,
        .neg = [](F16 a) { return stable16::neg(a); },
        .abs = [](F16 a) { return stable16::abs(a); },
        .classify = &stable16::classify,
    };
}

Implementation grid_path() {
    return Implementation{
        .add = [](F16 a, F16 b) { return grid::encode(grid::add(grid::decode(a), grid::decode(b))); },
        .sub = [](F16 a, F16 b) { return grid::encode(grid::sub(grid::decode(a), grid::decode(b))); },
        .mul = [](F16 a, F16 b) { return grid::encode(grid::mul(grid::decode(a), grid::decode(b))); },
        .div = [](F16 a, F16 b) { return grid::encode(grid::div(grid::decode(a), grid::decode(b))); },
        .sqrt = [](F16 a) { return grid::encode(grid::sqrt(grid::decode(a))); },
        .neg = [](F16 a) { return stable16::neg(a); },
        .abs = [](F16 a) { return stable16::abs(a); },
        .classify = &stable16::classify,
    };
}

std::uint64_t Report::total_mismatches() const {
    std::uint64_t total = 0;
    for (const auto& op : ops) {
        total += op.mismatches;
    }
    return total;
}

namespace {

FpClass oracle_classify(F16 a) {
    const double v = oracle_decode(a);
    if (std::isnan(v)) return FpClass::nan;
    if (std::isinf(v)) return FpClass::inf;
    if (v == 0.0) return FpClass::zero;
    return std::fabs(v) < f16::kMinNormalValue ? FpClass::subnormal : FpClass::normal;
}

// Pass-through sign ops keep NaN payloads; the oracle mirrors that.
F16 oracle_sign_op(F16 a, bool negate) {
    const double v = oracle_decode(a);
    if (std::isnan(v)) {
        const std::uint16_t b = a.bits();
        return F16::from_bits(negate ? b ^ 0x8000 : b & 0x7FFF);
    }
    return oracle_round(negate ? -v : std::fabs(v));
}

class Recorder {
public:
    Recorder(Report& report, std::size_t max_samples) : report_(report), max_samples_(max_samples) {}

    void begin(const char* op) { report_.ops.push_back(OpSummary{op, 0, 0}); }

    void check(F16 a, F16 b, F16 expected, F16 actual) {
        OpSummary& s = report_.ops.back();
        ++s.cases;
        if (expected.bits() != actual.bits()) {
            ++s.mismatches;
            if (report_.samples.size() < max_samples_) {
                report_.samples.push_back(Mismatch{s.op, a.bits(), b.bits(), expected.bits(), actual.bits()});
            }
        }
    }

private:
    Report& report_;
    std::size_t max_samples_;
};

// Half the pairs are uniform bit patterns; the rest put b within two binades
// of a to exercise cancellation and ties.
std::pair<F16, F16> draw_pair(Xoshiro256& rng) {
    const auto a = static_cast<std::uint16_t>(rng.next() & 0xFFFF);
    std::uint16_t b = static_cast<std::uint16_t>(rng.next() & 0xFFFF);
    if ((rng.next() & 1) != 0) {
        const int ea = (a >> 10) & 0x1F;
        const int eb = std::clamp(ea + static_cast<int>(rng.below(5)) - 2, 0, 30);
        b = static_cast<std::uint16_t>((b & 0x83FF) | (eb << 10));
    }
    return {F16::from_bits(a), F16::from_bits(b)};
}

}  // namespace

Report run(const Implementation& impl, const Options& options) {
    Report report;
    Recorder rec(report, options.max_samples);

    rec.begin("sqrt");
    for (std::uint32_t bits = 0; bits < 65536; ++bits) {
        const F16 a = F16::from_bits(static_cast<std::uint16_t>(bits));
        rec.check(a, F16{}, oracle_round(std::sqrt(oracle_decode(a))), impl.sqrt(a));
    }
    rec.begin("neg");
    for (std::uint32_t bits = 0; bits < 65536; ++bits) {
        const F16 a = F16::from_bits(static_cast<std::uint16_t>(bits));
        rec.check(a, F16{}, oracle_sign_op(a, true), impl.neg(a));
    }
    rec.begin("abs");
    for (std::uint32_t bits = 0; bits < 65536; ++bits) {
        const F16 a = F16::from_bits(static_cast<std::uint16_t>(bits));
        rec.check(a, F16{}, oracle_sign_op(a, false), impl.abs(a));
    }
    rec.begin("classify");
    for (std::uint32_t bits = 0; bits < 65536; ++bits) {
        const F16 a = F16::from_bits(static_cast<std::uint16_t>(bits));
        const auto expected = static_cast<std::uint16_t>(oracle_classify(a));
        const auto actual = static_cast<std::uint16_t>(impl.classify(a));
        rec.check(a, F16{}, F16::from_bits(expected), F16::from_bits(actual));
    }

    struct BinaryCase {
        const char* name;
        BinaryFn fn;
        double (*oracle)(double, double);
    };
    const BinaryCase cases[] = {
        {"add", impl.add, [](double x, double y) { return x + y; }},
        {"sub", impl.sub, [](double x, double y) { return x - y; }},
        {"mul", impl.mul, [](double x, double y) { return x * y; }},
        {"div", impl.div, [](double x, double y) { return x / y; }},
    };
    for (std::size_t k = 0; k < std::size(cases); ++k) {
        const BinaryCase& c = cases[k];
        Xoshiro256 rng(derive_seed(options.seed, k));
        rec.begin(c.name);
        for (std::uint64_t i = 0; i < options.random_cases; ++i) {
            const auto [a, b] = draw_pair(rng);
            const F16 expected = oracle_round(c.oracle(oracle_decode(a), oracle_decode(b)));
            rec.check(a, b, expected, c.fn(a, b));
        }
    }
    return report;
}

}  // namespace stable16::conformance
