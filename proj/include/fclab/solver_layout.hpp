#pragma once

#include "fclab/keys.hpp"

#include <cstdint>

namespace fclab::layout {

// Slot maps shared by the hand-built solvers and their token embeddings.
// All three modes expose keys in slots [1..D] and a constant 1 in slot 0 so
// a single position-independent K matrix can serve every token.

// Depth solver: one head, width d = 2D+7.
struct Depth {
    int D;
    explicit Depth(const KeyEncoding& enc) : D(enc.D()) {}

    int width() const { return 2 * D + 7; }
    int konst() const { return 0; }
    int key(int k) const { return 1 + k; }          // k in [0, D)
    int query(int k) const { return D + 1 + k; }    // k in [0, D)
    int qspecial() const { return 2 * D + 1; }      // hamming(query, anchor)
    int payload() const { return 2 * D + 2; }
    int wpack() const { return 2 * D + 3; }         // remaining query digits
    int chain() const { return 2 * D + 4; }         // last retrieved value
    int table_flag() const { return 2 * D + 5; }    // 1 on table/base tokens
    int special() const { return 2 * D + 6; }       // 1 only on the query token
};

// Chain-of-thought solver: H = L+1 heads, per-head region width d = 2D+2.
// Slots 0, [1..D] and D+1 are shared (they sit inside head 1's region, which
// is free because head 1's attention output only uses region offset 0).
struct Cot {
    int D;
    int d;
    explicit Cot(const KeyEncoding& enc) : D(enc.D()), d(2 * enc.D() + 2) {}

    int width(int L) const { return d * (L + 1); }
    int konst() const { return 0; }
    int key(int k) const { return 1 + k; }
    int payload() const { return D + 1; }
    int region(int h) const { return (h - 1) * d; }  // h is 1-based
    int query(int h, int k) const { return region(h) + D + 2 + k; }
};

// Encoder solver: H = 2 heads (self, work), width dH = 2d with d = 2D+5.
// Region [d, 2d) is scratch written by the work head and zeroed by every MLP.
struct Encoder {
    int D;
    int d;
    explicit Encoder(const KeyEncoding& enc) : D(enc.D()), d(2 * enc.D() + 5) {}

    int width() const { return 2 * d; }
    int konst() const { return 0; }
    int key(int k) const { return 1 + k; }
    int ptr(int k) const { return D + 1 + k; }
    int resolved() const { return 2 * D + 1; }
    int scratch() const { return 2 * D + 2; }
    int payload() const { return 2 * D + 3; }
    int blockint() const { return 2 * D + 4; }       // L+1 on the query token
    int fetch(int k) const { return d + k; }         // work-head landing slots
};

// Value packed into chain-of-thought tokens: wpack * pack_base + chain.
inline std::int64_t cot_pack_base(const TaskParams& params) {
    return params.max_domain() + 1;
}

}  // namespace fclab::layout
