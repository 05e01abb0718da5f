#pragma once

#include "fclab/dyadic.hpp"
#include "fclab/errors.hpp"

#include <string>
#include <vector>

namespace fclab {

// Model shape: H attention heads, head dimension d, p bits of storage
// precision per entry, L levels (layers / composition depth / epochs).
struct ModelDims {
    int H = 1;
    int d = 1;
    int p = 1;
    int L = 1;

    void validate() const {
        if (H < 1 || d < 1 || p < 1 || L < 1)
            throw ValidationError("ModelDims: all of H, d, p, L must be >= 1");
    }
};

// The exact parameter schedule attached to a choice of dims:
//   K    = (H*d*p*L)^8 * 8^(2L^2), a perfect square
//   m    = K^(1 + sum_{l=0}^{L-1} 8^l)
//   n_l  = K^(4 * 8^(L-l-1))              for l in [1:L-1]
//   N_0  = m,  N_l = N_{l-1} * n_l        for l in [1:L-1]
//   x_l  = K^(8^(L-l-1))                  for l in [0:L-1]
//   Theta_l = 8^(-L*l) * (x_0...x_l) * (n_1...n_{l-1})   for l in [1:L-1]
//   log2Delta_l = 4*sqrt(K) * (x_0...x_{l-2}) * (n_1...n_{L-1}) for l in [2:L]
// Delta itself is astronomically large, so only its base-2 logarithm (an
// exact integer) is stored; Theta carries a power of 8 in the denominator
// and is stored as an exact rational.
struct Schedule {
    BigInt K;
    BigInt sqrtK;
    BigInt m;
    std::vector<BigInt> n;          // n_1 ... n_{L-1}
    std::vector<BigInt> N;          // N_0 ... N_{L-1}
    std::vector<BigInt> x;          // x_0 ... x_{L-1}
    std::vector<BigRat> Theta;      // Theta_1 ... Theta_{L-1}
    std::vector<BigInt> log2Delta;  // for levels 2 ... L
};

struct VerifyCheck {
    std::string name;
    std::string lhs;  // exact decimal / rational rendering
    std::string cmp;  // "<", "<=", ...
    std::string rhs;
    bool pass = false;
};

struct VerifyReport {
    std::vector<VerifyCheck> checks;
    BigInt prompt_length;  // sum of N_0..N_{L-1} plus 2
    bool threshold_holds = false;
    bool all_pass() const {
        if (!threshold_holds) return false;
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

Schedule compute_schedule(const ModelDims& dims);

// Evaluates the inequality chain the lower-bound argument rests on, in
// exact integer/rational arithmetic:
//   (a) log2Delta_L < 8^(-L^2) * (x_0...x_{L-1}) * (n_1...n_{L-1})
//   (b) 8^(-L^2) * (x_0...x_{L-1}) * (n_1...n_{L-1}) <= n_{L-1} * Theta_{L-1}
//   (c) (H*d*p)^(2^(4L)) <= prompt length
// Requires L >= 2 (the chain references Delta_L and Theta_{L-1}).
VerifyReport verify_lower_bound_arithmetic(const Schedule& s, const ModelDims& dims);

// Canonical textual rendering used for byte-level regression comparison.
std::string render_report(const VerifyReport& r);

}  // namespace fclab
