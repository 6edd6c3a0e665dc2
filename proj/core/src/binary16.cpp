#include "stable16/binary16.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>

namespace stable16 {

const char* to_string(FpClass c) {
    switch (c) {
        case FpClass::zero: return "zero";
        case FpClass::subnormal: return "subnormal";
        case FpClass::normal: return "normal";
        case FpClass::inf: return "inf";
        case FpClass::nan: return "nan";
    }
    return "?";
}

namespace {

using f16::kInfBits;
using f16::kQuietNaNBits;
using f16::kSignBit;

// Finite binary16 magnitude as sig * 2^exp with sig < 2^11.
struct Unpacked {
    bool negative;
    int exp;
    std::uint32_t sig;
};

Unpacked unpack(F16 a) {
    const std::uint16_t b = a.bits();
    const int e = (b >> 10) & 0x1F;
    const std::uint32_t m = b & f16::kMantMask;
    if (e == 0) {
        return {signbit(a), -24, m};
    }
    return {signbit(a), e - 25, m | 0x400u};
}

F16 signed_zero(bool negative) { return F16::from_bits(negative ? kSignBit : 0); }
F16 signed_inf(bool negative) { return F16::from_bits(static_cast<std::uint16_t>((negative ? kSignBit : 0) | kInfBits)); }

// Rounds sig * 2^exp (plus a sticky fraction below sig's last bit when
// `sticky`) to binary16. sig must be nonzero.
F16 round_pack(bool negative, int exp, std::uint64_t sig, bool sticky = false) {
    const int msb = 63 - std::countl_zero(sig);
    const int top = exp + msb;  // floor(log2 |value|)
    const int quantum = std::max(top - 10, -24);
    const int shift = quantum - exp;

    std::uint64_t n = 0;
    if (shift <= 0) {
        n = sig << -shift;
    } else if (shift <= 64) {
        const unsigned __int128 wide = sig;
        const unsigned __int128 one = 1;
        const unsigned __int128 rem = wide & ((one << shift) - 1);
        const unsigned __int128 half = one << (shift - 1);
        n = static_cast<std::uint64_t>(wide >> shift);
        if (rem > half || (rem == half && (sticky || (n & 1u) != 0))) {
            ++n;
        }
    }
    // shift > 64 leaves |value| below half the smallest quantum: n = 0.

    // (quantum + 24) << 10 plus n yields the bit pattern for subnormals,
    // normals, and a rounding carry into the next binade alike.
    const std::uint64_t mag = (static_cast<std::uint64_t>(quantum + 24) << 10) + n;
    if (mag >= kInfBits) {
        return signed_inf(negative);
    }
    return F16::from_bits(static_cast<std::uint16_t>((negative ? kSignBit : 0) | mag));
}

std::uint64_t isqrt(std::uint64_t v, std::uint64_t& remainder) {
    std::uint64_t root = 0;
    std::uint64_t bit = std::uint64_t{1} << 62;
    while (bit > v) {
        bit >>= 2;
    }
    while (bit != 0) {
        if (v >= root + bit) {
            v -= root + bit;
            root = (root >> 1) + bit;
        } else {
            root >>= 1;
        }
        bit >>= 2;
    }
    remainder = v;
    return root;
}

}  // namespace

F16 from_real(double x) {
    const std::uint64_t u = std::bit_cast<std::uint64_t>(x);
    const bool negative = (u >> 63) != 0;
    const int e = static_cast<int>((u >> 52) & 0x7FF);
    const std::uint64_t m = u & ((std::uint64_t{1} << 52) - 1);
    if (e == 0x7FF) {
        return m != 0 ? f16::kQuietNaN : signed_inf(negative);
    }
    if (e == 0) {
        if (m == 0) {
            return signed_zero(negative);
        }
        return round_pack(negative, -1074, m);
    }
    return round_pack(negative, e - 1075, m | (std::uint64_t{1} << 52));
}

double to_double(F16 a) {
    if (isnan(a)) {
        return std::nan("");
    }
    if (isinf(a)) {
        return signbit(a) ? -INFINITY : INFINITY;
    }
    const Unpacked p = unpack(a);
    const double mag = std::ldexp(static_cast<double>(p.sig), p.exp);
    return p.negative ? -mag : mag;
}

float to_float(F16 a) { return static_cast<float>(to_double(a)); }

F16 add(F16 a, F16 b) {
    if (isnan(a) || isnan(b)) {
        return f16::kQuietNaN;
    }
    if (isinf(a) || isinf(b)) {
        if (isinf(a) && isinf(b) && signbit(a) != signbit(b)) {
            return f16::kQuietNaN;
        }
        return isinf(a) ? a : b;
    }
    // Every finite binary16 is an integer multiple of 2^-24 below 2^40, so the
    // sum is exact in 64-bit integers and rounds once.
    const Unpacked pa = unpack(a);
    const Unpacked pb = unpack(b);
    const std::int64_t ia = static_cast<std::int64_t>(pa.sig) << (pa.exp + 24);
    const std::int64_t ib = static_cast<std::int64_t>(pb.sig) << (pb.exp + 24);
    const std::int64_t sum = (pa.negative ? -ia : ia) + (pb.negative ? -ib : ib);
    if (sum == 0) {
        return signed_zero(pa.negative && pb.negative);
    }
    const bool negative = sum < 0;
    return round_pack(negative, -24, static_cast<std::uint64_t>(negative ? -sum : sum));
}

F16 sub(F16 a, F16 b) { return add(a, neg(b)); }

F16 mul(F16 a, F16 b) {
    if (isnan(a) || isnan(b)) {
        return f16::kQuietNaN;
    }
    const bool negative = signbit(a) != signbit(b);
    if (isinf(a) || isinf(b)) {
        if (iszero(a) || iszero(b)) {
            return f16::kQuietNaN;
        }
        return signed_inf(negative);
    }
    if (iszero(a) || iszero(b)) {
        return signed_zero(negative);
    }
    const Unpacked pa = unpack(a);
    const Unpacked pb = unpack(b);
    return round_pack(negative, pa.exp + pb.exp, std::uint64_t{pa.sig} * pb.sig);
}

F16 div(F16 a, F16 b) {
    if (isnan(a) || isnan(b)) {
        return f16::kQuietNaN;
    }
    const bool negative = signbit(a) != signbit(b);
    if (isinf(a)) {
        return isinf(b) ? f16::kQuietNaN : signed_inf(negative);
    }
    if (isinf(b)) {
        return signed_zero(negative);
    }
    if (iszero(b)) {
        return iszero(a) ? f16::kQuietNaN : signed_inf(negative);
    }
    if (iszero(a)) {
        return signed_zero(negative);
    }
    const Unpacked pa = unpack(a);
    const Unpacked pb = unpack(b);
    const std::uint64_t num = std::uint64_t{pa.sig} << 40;
    const std::uint64_t q = num / pb.sig;
    const bool sticky = (num % pb.sig) != 0;
    return round_pack(negative, pa.exp - pb.exp - 40, q, sticky);
}

F16 sqrt(F16 a) {
    if (isnan(a)) {
        return f16::kQuietNaN;
    }
    if (iszero(a)) {
        return a;
    }
    if (signbit(a)) {
        return f16::kQuietNaN;
    }
    if (isinf(a)) {
        return a;
    }
    const Unpacked p = unpack(a);
    std::uint64_t sig = p.sig;
    int exp = p.exp;
    if ((exp & 1) != 0) {
        sig <<= 1;
        exp -= 1;
    }
    sig <<= 40;
    exp -= 40;
    std::uint64_t rem = 0;
    const std::uint64_t root = isqrt(sig, rem);
    return round_pack(false, exp / 2, root, rem != 0);
}

F16 max2(F16 a, F16 b) {
    if (isnan(a) || isnan(b)) {
        return f16::kQuietNaN;
    }
    return compare(a, b) == std::partial_ordering::less ? b : a;
}

FpClass classify(F16 a) {
    const std::uint16_t mag = a.bits() & 0x7FFF;
    if (mag == 0) return FpClass::zero;
    if (mag < 0x0400) return FpClass::subnormal;
    if (mag < kInfBits) return FpClass::normal;
    if (mag == kInfBits) return FpClass::inf;
    return FpClass::nan;
}

std::partial_ordering compare(F16 a, F16 b) {
    if (isnan(a) || isnan(b)) {
        return std::partial_ordering::unordered;
    }
    // Map sign-magnitude onto a monotone signed key; both zeros map to 0.
    auto key = [](F16 h) {
        const int mag = h.bits() & 0x7FFF;
        return signbit(h) ? -mag : mag;
    };
    return key(a) <=> key(b);
}

namespace grid {

namespace {
const std::array<float, 65536>& decode_table() {
    static const std::array<float, 65536> table = [] {
        std::array<float, 65536> t{};
        for (std::uint32_t b = 0; b < 65536; ++b) {
            t[b] = to_float(F16::from_bits(static_cast<std::uint16_t>(b)));
        }
        return t;
    }();
    return table;
}
}  // namespace

float decode(F16 a) { return decode_table()[a.bits()]; }

F16 encode(float on_grid) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(on_grid);
    const std::uint16_t sign = static_cast<std::uint16_t>((u >> 16) & kSignBit);
    const std::uint32_t mag = u & 0x7FFFFFFFu;
    if (mag > 0x7F800000u) {
        return f16::kQuietNaN;
    }
    if (mag >= 0x477FF000u) {  // anything past the largest finite
        return F16::from_bits(static_cast<std::uint16_t>(sign | kInfBits));
    }
    if (mag < 0x38800000u) {  // below 2^-14: subnormal or zero, k * 2^-24
        const float scaled = std::bit_cast<float>(mag) * 16777216.0f;
        return F16::from_bits(static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(scaled)));
    }
    const std::uint32_t bits = (mag >> 13) - ((127u - 15u) << 10);
    return F16::from_bits(static_cast<std::uint16_t>(sign | bits));
}

float sqrt(float a) { return round(std::sqrt(a)); }

}  // namespace grid

}  // namespace stable16
