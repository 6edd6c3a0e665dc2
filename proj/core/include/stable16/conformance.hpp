#pragma once

// Binary16 conformance suite: compares an implementation against an oracle
// that evaluates in binary64 and rounds once to binary16.

#include <cstdint>
#include <string>
#include <vector>

#include "stable16/binary16.hpp"

namespace stable16::conformance {

/// Oracle rounding of a binary64 value to binary16 via frexp/nearbyint.
/// Kept independent of the integer rounding used by from_real().
F16 oracle_round(double x);

/// Oracle decoding of a binary16 bit pattern.
double oracle_decode(F16 a);

using BinaryFn = F16 (*)(F16, F16);
using UnaryFn = F16 (*)(F16);
using ClassifyFn = FpClass (*)(F16);

/// The operations under test. Swap entries to inject faults.
struct Implementation {
    BinaryFn add;
    BinaryFn sub;
    BinaryFn mul;
    BinaryFn div;
    UnaryFn sqrt;
    UnaryFn neg;
    UnaryFn abs;
    ClassifyFn classify;
};

/// The integer softfloat operations exported by binary16.hpp.
Implementation softfloat();
/// The float-register grid path used by the tensor kernels.
Implementation grid_path();

struct Mismatch {
    std::string op;
    std::uint16_t a = 0;
    std::uint16_t b = 0;
    std::uint16_t expected = 0;
    std::uint16_t actual = 0;
};

struct OpSummary {
    std::string op;
    std::uint64_t cases = 0;
    std::uint64_t mismatches = 0;
};

struct Options {
    std::uint64_t random_cases = 1'000'000;  // per binary op
    std::uint64_t seed = 0x5EED16;
    std::size_t max_samples = 16;  // mismatches kept verbatim
};

struct Report {
    std::vector<OpSummary> ops;
    std::vector<Mismatch> samples;

    std::uint64_t total_mismatches() const;
    bool passed() const { return total_mismatches() == 0; }
};

Report run(const Implementation& impl, const Options& options = {});

}  // namespace stable16::conformance
