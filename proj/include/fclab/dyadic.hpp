#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <string>

namespace fclab {

using BigInt = boost::multiprecision::cpp_int;
using BigRat = boost::multiprecision::cpp_rational;

// Shift helpers with explicit floor semantics for negative values.
// boost cpp_int's >> is documented as arithmetic for negatives, but we do
// not rely on that: these are the only shift paths used for signed values.
inline BigInt shl(const BigInt& v, std::int64_t k) {
    if (k <= 0) return v;
    return v << static_cast<unsigned>(k);
}

// floor(v / 2^k), k >= 0.
inline BigInt shr_floor(const BigInt& v, std::int64_t k) {
    if (k <= 0) return v;
    if (v >= 0) return v >> static_cast<unsigned>(k);
    // floor division for negatives: -ceil(|v| / 2^k)
    BigInt a = -v;
    BigInt q = a >> static_cast<unsigned>(k);
    if ((q << static_cast<unsigned>(k)) != a) ++q;
    return -q;
}

// Exact value mant * 2^exp2. Not kept normalized; normalize() strips
// trailing zero bits when mantissas need shrinking.
struct Dyadic {
    BigInt mant;
    std::int64_t exp2 = 0;

    Dyadic() = default;
    Dyadic(BigInt m, std::int64_t e) : mant(std::move(m)), exp2(e) {}
    static Dyadic from_int(const BigInt& v) { return Dyadic(v, 0); }
    static Dyadic zero() { return Dyadic(BigInt(0), 0); }

    bool is_zero() const { return mant == 0; }
    int sign() const { return mant == 0 ? 0 : (mant < 0 ? -1 : 1); }

    Dyadic neg() const { return Dyadic(-mant, exp2); }

    void normalize() {
        if (mant == 0) {
            exp2 = 0;
            return;
        }
        unsigned tz = boost::multiprecision::lsb(boost::multiprecision::abs(mant));
        if (tz > 0) {
            mant >>= tz;
            exp2 += tz;
        }
    }

    BigRat to_rational() const {
        BigRat r(mant);
        if (exp2 >= 0) return r * BigRat(shl(BigInt(1), exp2));
        return r / BigRat(shl(BigInt(1), -exp2));
    }

    double to_double() const { return static_cast<double>(to_rational()); }
};

inline Dyadic add(const Dyadic& a, const Dyadic& b) {
    if (a.is_zero()) return b;
    if (b.is_zero()) return a;
    if (a.exp2 == b.exp2) return Dyadic(a.mant + b.mant, a.exp2);
    if (a.exp2 < b.exp2) return Dyadic(a.mant + shl(b.mant, b.exp2 - a.exp2), a.exp2);
    return Dyadic(shl(a.mant, a.exp2 - b.exp2) + b.mant, b.exp2);
}

inline Dyadic sub(const Dyadic& a, const Dyadic& b) { return add(a, b.neg()); }

inline Dyadic mul(const Dyadic& a, const Dyadic& b) {
    if (a.is_zero() || b.is_zero()) return Dyadic::zero();
    return Dyadic(a.mant * b.mant, a.exp2 + b.exp2);
}

// sign of (a - b)
inline int cmp(const Dyadic& a, const Dyadic& b) {
    Dyadic d = sub(a, b);
    return d.sign();
}

// Round to an integer multiple of 2^scale, floor.
inline Dyadic floor_to_scale(const Dyadic& v, std::int64_t scale) {
    if (v.is_zero()) return Dyadic(BigInt(0), scale);
    if (v.exp2 >= scale) return Dyadic(shl(v.mant, v.exp2 - scale), scale);
    return Dyadic(shr_floor(v.mant, scale - v.exp2), scale);
}

// Round to an integer multiple of 2^scale, nearest, ties to even multiple.
// Returned dyadic has exp2 == scale.
inline Dyadic round_half_even_to_scale(const Dyadic& v, std::int64_t scale) {
    if (v.is_zero()) return Dyadic(BigInt(0), scale);
    if (v.exp2 >= scale) return Dyadic(shl(v.mant, v.exp2 - scale), scale);
    std::int64_t k = scale - v.exp2;  // k >= 1 bits to drop
    BigInt q = shr_floor(v.mant, k);
    BigInt rem = v.mant - shl(q, k);          // 0 <= rem < 2^k
    BigInt half = shl(BigInt(1), k - 1);
    if (rem > half || (rem == half && boost::multiprecision::bit_test(q, 0))) ++q;
    return Dyadic(q, scale);
}

// Round-half-even of an exact rational onto multiples of 2^scale.
// Returns the integer multiplier q such that result = q * 2^scale.
inline BigInt round_rational_half_even(const BigRat& v, std::int64_t scale) {
    BigInt num = boost::multiprecision::numerator(v);
    BigInt den = boost::multiprecision::denominator(v);  // > 0 canonical
    if (scale >= 0) {
        den = den * shl(BigInt(1), scale);
    } else {
        num = shl(num, -scale);
    }
    // q = round_half_even(num / den), floor first.
    BigInt q = num / den;                       // trunc toward zero
    BigInt rem = num - q * den;
    if (rem < 0) {  // fix to floor
        --q;
        rem += den;
    }
    BigInt twice = rem * 2;
    if (twice > den || (twice == den && boost::multiprecision::bit_test(q, 0))) ++q;
    return q;
}

// Exact decimal string of a dyadic (terminating since the base is 2).
inline std::string to_decimal_string(const Dyadic& v) {
    if (v.mant == 0) return "0";
    if (v.exp2 >= 0) return BigInt(shl(v.mant, v.exp2)).str();
    BigInt pow5 = boost::multiprecision::pow(BigInt(5), static_cast<unsigned>(-v.exp2));
    BigInt scaled = v.mant * pow5;  // value = scaled * 10^exp2
    bool negative = scaled < 0;
    std::string digits = BigInt(boost::multiprecision::abs(scaled)).str();
    std::size_t frac = static_cast<std::size_t>(-v.exp2);
    if (digits.size() <= frac) digits.insert(0, frac - digits.size() + 1, '0');
    digits.insert(digits.size() - frac, ".");
    // trim trailing zeros but keep at least one fractional digit
    while (digits.back() == '0' && digits[digits.size() - 2] != '.') digits.pop_back();
    return (negative ? "-" : "") + digits;
}

inline std::string to_string(const BigRat& v) {
    BigInt num = boost::multiprecision::numerator(v);
    BigInt den = boost::multiprecision::denominator(v);
    if (den == 1) return num.str();
    return num.str() + "/" + den.str();
}

}  // namespace fclab
