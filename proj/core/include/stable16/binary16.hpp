#pragma once

// IEEE-754 binary16 arithmetic in software.
//
// Every operation rounds to nearest, ties to even. Subnormals are kept.
// Arithmetic that produces a NaN always returns the canonical quiet NaN
// (0x7E00). Sign-bit operations (neg, abs) leave NaN payloads alone.

#include <bit>
#include <compare>
#include <cstdint>

namespace stable16 {

class F16 {
public:
    constexpr F16() = default;

    static constexpr F16 from_bits(std::uint16_t bits) {
        F16 h;
        h.bits_ = bits;
        return h;
    }

    constexpr std::uint16_t bits() const { return bits_; }

private:
    std::uint16_t bits_ = 0;
};

enum class FpClass : std::uint8_t { zero, subnormal, normal, inf, nan };

const char* to_string(FpClass c);

namespace f16 {

inline constexpr std::uint16_t kSignBit = 0x8000;
inline constexpr std::uint16_t kExpMask = 0x7C00;
inline constexpr std::uint16_t kMantMask = 0x03FF;
inline constexpr std::uint16_t kQuietNaNBits = 0x7E00;
inline constexpr std::uint16_t kInfBits = 0x7C00;

inline constexpr F16 kZero = F16::from_bits(0x0000);
inline constexpr F16 kOne = F16::from_bits(0x3C00);
inline constexpr F16 kMaxFinite = F16::from_bits(0x7BFF);   // 65504
inline constexpr F16 kMinNormal = F16::from_bits(0x0400);   // 2^-14
inline constexpr F16 kMinSubnormal = F16::from_bits(0x0001);  // 2^-24
inline constexpr F16 kInf = F16::from_bits(kInfBits);
inline constexpr F16 kQuietNaN = F16::from_bits(kQuietNaNBits);

inline constexpr double kMaxFiniteValue = 65504.0;
inline constexpr double kMinNormalValue = 0.00006103515625;            // 2^-14
inline constexpr double kMinSubnormalValue = 5.9604644775390625e-08;   // 2^-24
// Magnitudes at or above this round to infinity.
inline constexpr double kOverflowThreshold = 65520.0;

}  // namespace f16

/// Nearest binary16 (round-to-nearest-even). Total: NaN maps to the canonical quiet NaN.
F16 from_real(double x);
double to_double(F16 a);
float to_float(F16 a);

F16 add(F16 a, F16 b);
F16 sub(F16 a, F16 b);
F16 mul(F16 a, F16 b);
F16 div(F16 a, F16 b);
F16 sqrt(F16 a);

constexpr F16 neg(F16 a) { return F16::from_bits(a.bits() ^ f16::kSignBit); }
constexpr F16 abs(F16 a) { return F16::from_bits(a.bits() & static_cast<std::uint16_t>(~f16::kSignBit)); }

/// Larger operand; the first operand wins on equality. NaN in either operand
/// yields NaN, unlike IEEE maxNum.
F16 max2(F16 a, F16 b);

constexpr bool isnan(F16 a) { return (a.bits() & 0x7FFF) > f16::kInfBits; }
constexpr bool isinf(F16 a) { return (a.bits() & 0x7FFF) == f16::kInfBits; }
constexpr bool isfinite(F16 a) { return (a.bits() & f16::kExpMask) != f16::kExpMask; }
constexpr bool signbit(F16 a) { return (a.bits() & f16::kSignBit) != 0; }
constexpr bool iszero(F16 a) { return (a.bits() & 0x7FFF) == 0; }

FpClass classify(F16 a);

/// IEEE comparison: NaN is unordered with everything, +0 equals -0.
std::partial_ordering compare(F16 a, F16 b);

inline std::partial_ordering operator<=>(F16 a, F16 b) { return compare(a, b); }
inline bool operator==(F16 a, F16 b) { return compare(a, b) == std::partial_ordering::equivalent; }

inline F16 operator+(F16 a, F16 b) { return add(a, b); }
inline F16 operator-(F16 a, F16 b) { return sub(a, b); }
inline F16 operator*(F16 a, F16 b) { return mul(a, b); }
inline F16 operator/(F16 a, F16 b) { return div(a, b); }
inline F16 operator-(F16 a) { return neg(a); }

constexpr bool same_bits(F16 a, F16 b) { return a.bits() == b.bits(); }

// Binary16 values carried in binary32 registers.
//
// A float holding a binary16 value is exact, and float arithmetic on two such
// values followed by one rounding to the binary16 grid is correctly rounded:
// 24 >= 2*11 + 2, so the intermediate float rounding is innocuous for
// + - * / and sqrt. The tensor kernels use this path; the conformance suite
// checks it against the integer implementation above.
namespace grid {

/// Nearest binary16 value of x, returned as a float. NaN stays NaN.
inline float round(float x) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(x);
    const std::uint32_t sign = u & 0x80000000u;
    const std::uint32_t mag = u ^ sign;
    const std::uint32_t lsb = (mag >> 13) & 1u;
    std::uint32_t rounded = (mag + 0x0FFFu + lsb) & ~0x1FFFu;
    // Selects are spelled as masks so loops over round() vectorize.
    const std::uint32_t overflow = 0u - static_cast<std::uint32_t>(rounded > 0x477FE000u);
    rounded = (rounded & ~overflow) | (0x7F800000u & overflow);
    // |x| < 2^-14: adding 0.5 puts the binary16 subnormal quantum (2^-24) at
    // the float ulp, so hardware RNE does the rounding.
    const std::uint32_t tiny = std::bit_cast<std::uint32_t>((std::bit_cast<float>(mag) + 0.5f) - 0.5f);
    const std::uint32_t small = 0u - static_cast<std::uint32_t>(mag < 0x38800000u);
    const std::uint32_t special = 0u - static_cast<std::uint32_t>(mag >= 0x7F800000u);
    std::uint32_t out = (tiny & small) | (rounded & ~small);
    out = (mag & special) | (out & ~special);
    return std::bit_cast<float>(out | sign);
}

/// Exact float value of a binary16 (table lookup).
float decode(F16 a);

/// Bits of a float that already lies on the binary16 grid. Any NaN becomes
/// the canonical quiet NaN.
F16 encode(float on_grid);

inline float add(float a, float b) { return round(a + b); }
inline float sub(float a, float b) { return round(a - b); }
inline float mul(float a, float b) { return round(a * b); }
inline float div(float a, float b) { return round(a / b); }
float sqrt(float a);

}  // namespace grid

}  // namespace stable16
