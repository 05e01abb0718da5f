#include "fclab/numerics.hpp"

#include <algorithm>
#include <map>
#include <mutex>

namespace fclab {

FixedRaw quantize(const BigRat& value, const FixedFormat& fmt, SatFlag& flag) {
    BigInt raw = round_rational_half_even(value, -fmt.frac_bits);
    if (raw > fmt.raw_max()) {
        flag.saturated = true;
        return fmt.raw_max();
    }
    if (raw < fmt.raw_min()) {
        flag.saturated = true;
        return fmt.raw_min();
    }
    return raw;
}

FixedRaw quantize(const Dyadic& value, const FixedFormat& fmt, SatFlag& flag) {
    Dyadic r = round_half_even_to_scale(value, -fmt.frac_bits);
    if (r.mant > fmt.raw_max()) {
        flag.saturated = true;
        return fmt.raw_max();
    }
    if (r.mant < fmt.raw_min()) {
        flag.saturated = true;
        return fmt.raw_min();
    }
    return r.mant;
}

namespace {

// ln2 * 2^prec rounded down, memoized per precision (thread-safe; the
// value is a pure function of prec, so races cannot change results).
// Precisions are bucketed to multiples of 64 bits by the callers.
BigInt ln2_scaled(std::int64_t prec) {
    static std::mutex mu;
    static std::map<std::int64_t, BigInt> cache;
    {
        std::lock_guard<std::mutex> lock(mu);
        auto it = cache.find(prec);
        if (it != cache.end()) return it->second;
    }
    // ln2 = 2*atanh(1/3) = 2 * sum_{i>=0} (1/3)^(2i+1) / (2i+1).
    // Work at prec+16 guard bits; the dropped tail is geometric (< 1/9 ratio).
    std::int64_t w = prec + 16;
    BigInt acc = 0;
    BigInt pow = shl(BigInt(1), w) / 3;  // (1/3)^(2i+1) scaled, floor
    std::int64_t i = 0;
    while (pow != 0) {
        acc += pow / (2 * i + 1);
        pow = pow / 9;
        ++i;
    }
    BigInt result = shr_floor(acc * 2, w - prec);
    std::lock_guard<std::mutex> lock(mu);
    cache.emplace(prec, result);
    return result;
}

}  // namespace

Dyadic exp_dyadic(const Dyadic& u, int guard_bits) {
    if (u.is_zero()) return Dyadic(BigInt(1), 0);
    const std::int64_t W = guard_bits + 32;

    // k = floor(u / ln2). Scale numerator so the division is exact enough:
    // error in k being off by one is harmless (r stays within [0, 2ln2),
    // the series still converges and the bound below is computed for r < 1.4).
    std::int64_t mant_bits = static_cast<std::int64_t>(
        boost::multiprecision::msb(boost::multiprecision::abs(u.mant))) + 1;
    std::int64_t val_bits = std::max<std::int64_t>(mant_bits + u.exp2, 1);
    if (val_bits > 56) throw ValidationError("exp_dyadic: argument magnitude out of range");
    std::int64_t lnprec = ((W + val_bits + 8 + 63) / 64) * 64;
    BigInt ln2s = ln2_scaled(lnprec);

    // u scaled to 2^-lnprec: u.mant * 2^(u.exp2 + lnprec)
    BigInt unum;
    std::int64_t shift = u.exp2 + lnprec;
    if (shift >= 0)
        unum = shl(u.mant, shift);
    else
        unum = shr_floor(u.mant, -shift);
    // floor division (ln2s > 0)
    BigInt k = unum / ln2s;
    if (k * ln2s > unum) --k;  // fix toward floor for negative unum

    // r = u - k*ln2, computed at scale 2^-W; 0 <= r < ln2 (+- rounding slack).
    BigInt r = shr_floor(unum - k * ln2s, lnprec - W);
    if (r < 0) r = 0;  // clamp rounding slack; keeps certified bound valid

    // e^r by power series in scale-2^-W integers, floor each term.
    BigInt one = shl(BigInt(1), W);
    BigInt term = one;
    BigInt sum = one;
    for (std::int64_t i = 1; term != 0 && i < 8 * W; ++i) {
        term = (term * r) >> static_cast<unsigned>(W);
        term = term / i;
        sum += term;
    }

    return Dyadic(sum, k.convert_to<std::int64_t>() - W);
}

Dyadic log_dyadic(const Dyadic& v, int guard_bits) {
    if (v.sign() <= 0) throw ValidationError("log_dyadic: argument must be positive");
    Dyadic x = v;
    x.normalize();
    // x.mant > 0; write value = u * 2^e with u = mant/2^(bits-1) in [1,2).
    std::int64_t bits = static_cast<std::int64_t>(boost::multiprecision::msb(x.mant)) + 1;
    std::int64_t e = x.exp2 + bits - 1;
    if (x.mant == 1 && e == 0) return Dyadic::zero();

    const std::int64_t W = guard_bits + 48;
    // u scaled to 2^-W (mantissas wider than W bits are floor-truncated,
    // an error below 2^-W on u and so within the certified bound on ln u)
    std::int64_t sh = W - (bits - 1);
    BigInt u = sh >= 0 ? shl(x.mant, sh) : shr_floor(x.mant, -sh);
    BigInt one = shl(BigInt(1), W);
    // z = (u-1)/(u+1) in [0, 1/3], scaled 2^-W, floor
    BigInt z = shl(u - one, W) / (u + one);
    // ln u = 2 * sum z^(2i+1)/(2i+1)
    BigInt zsq = (z * z) >> static_cast<unsigned>(W);
    BigInt pow = z;
    BigInt acc = 0;
    for (std::int64_t i = 0; pow != 0 && i < 4 * W; ++i) {
        acc += pow / (2 * i + 1);
        pow = (pow * zsq) >> static_cast<unsigned>(W);
    }
    acc *= 2;

    if (e != 0) {
        BigInt ln2s = ln2_scaled(((W + 63) / 64) * 64);
        acc += BigInt(e) * shr_floor(ln2s, ((W + 63) / 64) * 64 - W);
    }
    return Dyadic(acc, -W);
}

std::vector<BigRat> softmax_row(const std::vector<BigRat>& scores, int frac_bits) {
    if (scores.empty()) throw ValidationError("softmax_row: empty score list");

    const BigRat* mx = &scores[0];
    for (const auto& s : scores)
        if (s > *mx) mx = &s;

    // Work in dyadics: represent each score difference exactly. Rational
    // scores are rounded to a common fine grid first (2^-(frac_bits+64)),
    // which perturbs each weight by a relative 2^-(frac_bits+60) at most;
    // fixed-point callers hit the grid exactly.
    const std::int64_t grid = -(static_cast<std::int64_t>(frac_bits) + 64);
    const int guard = frac_bits + 80;

    std::vector<Dyadic> w(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        BigRat diff = scores[i] - *mx;  // <= 0
        Dyadic d(round_rational_half_even(diff, grid), grid);
        w[i] = exp_dyadic(d, guard);
    }
    BigRat den(0);
    std::vector<BigRat> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = w[i].to_rational();
        den += out[i];
    }
    for (auto& o : out) o /= den;
    return out;
}

}  // namespace fclab
