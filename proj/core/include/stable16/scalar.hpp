#pragma once

// Per-precision arithmetic used by every kernel. Each Scalar<T> names a
// compute type C that holds T values exactly and rounds after every
// operation to T's precision.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string_view>

#include "stable16/binary16.hpp"

namespace stable16 {

enum class ScalarKind : std::uint8_t { f16 = 0, f32 = 1, f64 = 2 };

std::string_view to_string(ScalarKind kind);

template <class T>
struct Scalar;

template <>
struct Scalar<F16> {
    using Compute = float;
    static constexpr ScalarKind kind = ScalarKind::f16;

    static float load(F16 x) { return grid::decode(x); }
    static F16 store(float x) { return grid::encode(x); }
    static float from_double(double x) { return grid::decode(stable16::from_real(x)); }
    static double to_double(float x) { return x; }

    static float add(float a, float b) { return grid::add(a, b); }
    static float sub(float a, float b) { return grid::sub(a, b); }
    static float mul(float a, float b) { return grid::mul(a, b); }
    static float div(float a, float b) { return grid::div(a, b); }
    static float sqrt(float a) { return grid::sqrt(a); }
    static float exp(float a) { return from_double(std::exp(static_cast<double>(a))); }
    static float log(float a) { return from_double(std::log(static_cast<double>(a))); }

    static constexpr double max_finite() { return f16::kMaxFiniteValue; }
    static constexpr double min_normal() { return f16::kMinNormalValue; }
    static constexpr double min_subnormal() { return f16::kMinSubnormalValue; }
};

namespace detail {
template <class T>
struct NativeScalar {
    using Compute = T;

    static T load(T x) { return x; }
    static T store(T x) { return x; }
    static T from_double(double x) { return static_cast<T>(x); }
    static double to_double(T x) { return static_cast<double>(x); }

    static T add(T a, T b) { return a + b; }
    static T sub(T a, T b) { return a - b; }
    static T mul(T a, T b) { return a * b; }
    static T div(T a, T b) { return a / b; }
    static T sqrt(T a) { return std::sqrt(a); }
    static T exp(T a) { return std::exp(a); }
    static T log(T a) { return std::log(a); }

    static constexpr double max_finite() { return std::numeric_limits<T>::max(); }
    static constexpr double min_normal() { return std::numeric_limits<T>::min(); }
    static constexpr double min_subnormal() { return std::numeric_limits<T>::denorm_min(); }
};
}  // namespace detail

template <>
struct Scalar<float> : detail::NativeScalar<float> {
    static constexpr ScalarKind kind = ScalarKind::f32;
};

template <>
struct Scalar<double> : detail::NativeScalar<double> {
    static constexpr ScalarKind kind = ScalarKind::f64;
};

template <class T>
concept TensorScalar = requires { Scalar<T>::kind; };

// Helpers on compute-type values shared by the kernels.
template <class C>
inline bool is_nan(C x) {
    return x != x;
}

template <class C>
inline bool is_finite(C x) {
    return std::isfinite(x);
}

/// max with NaN propagation; first operand wins on equality.
template <class C>
inline C max_propagate(C a, C b) {
    if (is_nan(a) || is_nan(b)) {
        return std::numeric_limits<C>::quiet_NaN();
    }
    return a < b ? b : a;
}

/// Rounds a real value to T and back to double.
template <class T>
inline double round_to(double x) {
    return Scalar<T>::to_double(Scalar<T>::from_double(x));
}

}  // namespace stable16
