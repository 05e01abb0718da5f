#include "fclab/schedule.hpp"

#include <sstream>

namespace fclab {

Schedule compute_schedule(const ModelDims& dims) {
    dims.validate();
    const int L = dims.L;

    BigInt base = BigInt(dims.H) * dims.d * dims.p * dims.L;
    Schedule s;
    s.sqrtK = boost::multiprecision::pow(base, 4) *
              boost::multiprecision::pow(BigInt(8), static_cast<unsigned>(L) * L);
    s.K = s.sqrtK * s.sqrtK;

    // m = K^(1 + sum_{l in [0:L-1]} 8^l)
    BigInt mexp = 1;
    BigInt p8 = 1;
    for (int l = 0; l <= L - 1; ++l) {
        mexp += p8;
        p8 *= 8;
    }
    s.m = boost::multiprecision::pow(s.K, mexp.convert_to<unsigned>());

    // n_l = K^(4*8^(L-l-1)) for l in [1:L-1]
    for (int l = 1; l <= L - 1; ++l) {
        BigInt e = 4 * boost::multiprecision::pow(BigInt(8), static_cast<unsigned>(L - l - 1));
        s.n.push_back(boost::multiprecision::pow(s.K, e.convert_to<unsigned>()));
    }

    // N_0 = m; N_l = N_{l-1} * n_l
    s.N.push_back(s.m);
    for (int l = 1; l <= L - 1; ++l) s.N.push_back(s.N.back() * s.n[l - 1]);

    // x_l = K^(8^(L-l-1)) for l in [0:L-1]
    for (int l = 0; l <= L - 1; ++l) {
        BigInt e = boost::multiprecision::pow(BigInt(8), static_cast<unsigned>(L - l - 1));
        s.x.push_back(boost::multiprecision::pow(s.K, e.convert_to<unsigned>()));
    }

    // Theta_l = 8^(-L*l) * (x_0...x_l) * (n_1...n_{l-1}) for l in [1:L-1]
    BigInt xprod = s.x[0];
    BigInt nprod = 1;
    for (int l = 1; l <= L - 1; ++l) {
        xprod *= s.x[l];
        if (l >= 2) nprod *= s.n[l - 2];
        BigInt denom = boost::multiprecision::pow(BigInt(8), static_cast<unsigned>(L) * l);
        s.Theta.push_back(BigRat(xprod * nprod, denom));
    }

    // log2Delta_l = 4*sqrtK * (x_0...x_{l-2}) * (n_1...n_{L-1}) for l in [2:L]
    BigInt nAll = 1;
    for (const auto& v : s.n) nAll *= v;
    BigInt xp = 1;
    for (int l = 2; l <= L; ++l) {
        xp *= s.x[l - 2];
        s.log2Delta.push_back(4 * s.sqrtK * xp * nAll);
    }

    return s;
}

VerifyReport verify_lower_bound_arithmetic(const Schedule& s, const ModelDims& dims) {
    dims.validate();
    const int L = dims.L;
    if (L < 2)
        throw UnsupportedConfigError(
            "verify_lower_bound_arithmetic: needs L >= 2 (the chain references "
            "Delta_L and Theta_{L-1})");

    VerifyReport r;

    // Shared products
    BigInt xAll = 1;
    for (const auto& v : s.x) xAll *= v;  // x_0 ... x_{L-1}
    BigInt nAll = 1;
    for (const auto& v : s.n) nAll *= v;  // n_1 ... n_{L-1}
    BigInt pow8LL = boost::multiprecision::pow(BigInt(8), static_cast<unsigned>(L) * L);
    BigRat mid = BigRat(xAll * nAll, pow8LL);  // 8^(-L^2) * (x...)(n...)

    // (a) log2Delta_L < mid
    {
        const BigInt& lhs = s.log2Delta.back();
        VerifyCheck c;
        c.name = "chain_a_log2Delta_lt_mid";
        c.lhs = lhs.str();
        c.cmp = "<";
        c.rhs = to_string(mid);
        c.pass = BigRat(lhs) < mid;
        r.checks.push_back(std::move(c));
    }

    // (b) mid <= n_{L-1} * Theta_{L-1}
    {
        BigRat rhs = BigRat(s.n.back()) * s.Theta.back();
        VerifyCheck c;
        c.name = "chain_b_mid_le_nTheta";
        c.lhs = to_string(mid);
        c.cmp = "<=";
        c.rhs = to_string(rhs);
        c.pass = mid <= rhs;
        r.checks.push_back(std::move(c));
    }

    // Prompt length n = sum_{l in [1:L]} N_{l-1} + 2
    r.prompt_length = 2;
    for (const auto& v : s.N) r.prompt_length += v;

    // (c) threshold (H*d*p)^(2^(4L)) <= prompt length
    {
        BigInt hdp = BigInt(dims.H) * dims.d * dims.p;
        BigInt lhs;
        if (hdp == 1) {
            lhs = 1;
        } else {
            BigInt e = boost::multiprecision::pow(BigInt(2), static_cast<unsigned>(4 * L));
            lhs = boost::multiprecision::pow(hdp, e.convert_to<unsigned>());
        }
        VerifyCheck c;
        c.name = "chain_c_threshold_le_promptLength";
        c.lhs = lhs.str();
        c.cmp = "<=";
        c.rhs = r.prompt_length.str();
        c.pass = lhs <= r.prompt_length;
        r.threshold_holds = c.pass;
        r.checks.push_back(std::move(c));
    }

    return r;
}

std::string render_report(const VerifyReport& r) {
    std::ostringstream os;
    os << "promptLength=" << r.prompt_length.str() << "\n";
    os << "thresholdHolds=" << (r.threshold_holds ? "true" : "false") << "\n";
    for (const auto& c : r.checks) {
        os << c.name << ": " << c.lhs << " " << c.cmp << " " << c.rhs << " -> "
           << (c.pass ? "pass" : "FAIL") << "\n";
    }
    return os.str();
}

}  // namespace fclab
