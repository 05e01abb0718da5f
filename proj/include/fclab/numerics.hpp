#pragma once

#include "fclab/dyadic.hpp"
#include "fclab/errors.hpp"

#include <cstdint>
#include <vector>

namespace fclab {

// Signed fixed-point format: values raw * 2^-fracBits with raw stored in
// p = intBits + fracBits + 1 bits, two's complement.
struct FixedFormat {
    int int_bits = 0;
    int frac_bits = 0;

    int total_bits() const { return int_bits + frac_bits + 1; }

    BigInt raw_max() const { return shl(BigInt(1), int_bits + frac_bits) - 1; }
    BigInt raw_min() const { return -shl(BigInt(1), int_bits + frac_bits); }

    bool operator==(const FixedFormat& o) const {
        return int_bits == o.int_bits && frac_bits == o.frac_bits;
    }
};

// Sticky saturation flag owned by one computation (a forward pass, a
// quantization batch); never global.
struct SatFlag {
    bool saturated = false;
};

// One fixed-point value. The format is carried by the surrounding
// structure (vector/matrix/spec); scalars hold only the raw mantissa.
using FixedRaw = BigInt;

// Round-to-nearest-even at the format resolution, then saturate to the
// representable range (setting the sticky flag instead of throwing).
FixedRaw quantize(const BigRat& value, const FixedFormat& fmt, SatFlag& flag);
FixedRaw quantize(const Dyadic& value, const FixedFormat& fmt, SatFlag& flag);

inline Dyadic fixed_value(const FixedRaw& raw, const FixedFormat& fmt) {
    return Dyadic(raw, -fmt.frac_bits);
}

// e^u with guaranteed relative error <= 2^-guard_bits, deterministic.
// Derivation: u = k*ln2 + r with k = floor(u/ln2) and r in [0, ln2).
// e^r in [1,2) is computed by its power series in scale-2^-W integers
// (W = guard_bits + 32) with floor rounding per step; ln2 is computed
// once per precision from 2*atanh(1/3). The accumulated error is below
// (terms + 8) * 2^-W, far under 2^-guard_bits; exp_dyadic(0) == 1 exactly.
Dyadic exp_dyadic(const Dyadic& u, int guard_bits);

// ln(v) for v > 0 with absolute error <= 2^-guard_bits, deterministic.
// v = u * 2^e with u in [1,2); ln u from the atanh series in
// z = (u-1)/(u+1) <= 1/3; ln2 as above. log_dyadic(1) == 0 exactly.
Dyadic log_dyadic(const Dyadic& v, int guard_bits);

// Softmax over exact scores. Each returned weight carries relative error
// at most 2^-(frac_bits+8) versus the true softmax and the row sums to 1
// exactly (the approximated exponentials are normalized by their exact
// sum). Intended for moderate score ranges; cost grows with the spread
// between the largest and smallest score.
std::vector<BigRat> softmax_row(const std::vector<BigRat>& scores, int frac_bits);

}  // namespace fclab
