#pragma once

#include "fclab/errors.hpp"
#include "fclab/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fclab {

// Sizes of one sequential-composition task family. Decoupled from the
// exact big-integer schedule: any small values are allowed here.
struct TaskParams {
    int L = 1;                  // composition depth (>= 1)
    std::int64_t m = 1;         // base domain size
    std::vector<std::int64_t> n;  // n_1 ... n_{L-1}, query alphabet sizes

    // Derived N_0 ... N_{L-1}: N_0 = m, N_l = N_{l-1} * n_l.
    std::vector<std::int64_t> domain_sizes() const {
        std::vector<std::int64_t> N{m};
        for (std::size_t l = 0; l < n.size(); ++l) N.push_back(N.back() * n[l]);
        return N;
    }

    std::int64_t max_domain() const {
        auto N = domain_sizes();
        return N.back();
    }

    void validate() const {
        if (L < 1) throw ValidationError("TaskParams: L must be >= 1");
        if (m < 1) throw ValidationError("TaskParams: m must be >= 1");
        if (static_cast<int>(n.size()) != L - 1)
            throw ValidationError("TaskParams: n must have exactly L-1 entries");
        for (auto v : n)
            if (v < 1) throw ValidationError("TaskParams: every n_l must be >= 1");
    }

    bool operator==(const TaskParams& o) const { return L == o.L && m == o.m && n == o.n; }
};

// One problem instance: base value z0 in [m], function tables z_1..z_L
// (z_l maps [N_{l-1}] -> [N_{l-1}]), and the query tuple w.
// All values are 1-based, matching the interval notation [k] = {1..k}.
struct TaskInstance {
    TaskParams params;
    std::int64_t z0 = 1;
    std::vector<std::vector<std::int64_t>> z;  // z[l-1] is the table of z_l
    std::vector<std::int64_t> w;               // w_1 ... w_{L-1}; empty for L = 1

    void validate() const;
};

// The computed chain i_0 ... i_L; the task answer is i_L.
struct CompositionChain {
    std::vector<std::int64_t> i;
    std::int64_t answer() const { return i.back(); }
};

// Pairing bijection [n_l] x [N_{l-1}] -> [N_l]: (wc - 1) * N_{l-1} + i.
std::int64_t pair_index(std::int64_t wc, std::int64_t i, std::int64_t n_l,
                        std::int64_t N_prev);

CompositionChain evaluate(const TaskInstance& inst);

// Uniformly random instance from the documented deterministic generator
// (mt19937_64 + rejection sampling); same seed, same instance.
TaskInstance generate(const TaskParams& params, std::uint64_t seed);

// One prompt position. Blocks use the player labels: block l in [1:L] is
// table z_l, block 0 the base value, block -1 the query token. Tokens
// appended during autoregressive decoding use block L+1 ("generated") and
// index = the generation step.
struct Token {
    int block = 0;
    std::int64_t index = 1;    // entry index within the block, 1-based
    std::int64_t value = 0;    // table entry, z0, packed query, or chain value

    bool operator==(const Token& o) const {
        return block == o.block && index == o.index && value == o.value;
    }
};

// Contiguous block of positions owned by one participant.
struct BlockSpan {
    int block = 0;        // player label (or position marker for generic prompts)
    std::size_t start = 0;  // 0-based first position
    std::size_t len = 0;

    bool operator==(const BlockSpan& o) const {
        return block == o.block && start == o.start && len == o.len;
    }
};

// Token sequence plus its block structure. Block order for task prompts:
// z_L, z_{L-1}, ..., z_1, then z_0 (one token), then the query token (one
// token, last). The block structure also drives the engine's attention
// aggregation boundaries.
struct Prompt {
    std::vector<Token> tokens;
    std::vector<BlockSpan> blocks;

    std::size_t size() const { return tokens.size(); }

    bool operator==(const Prompt& o) const {
        return tokens == o.tokens && blocks == o.blocks;
    }
};

// Pack w_1..w_{L-1} into one token value via mixed-radix digits (radix
// n_1..n_{L-1}); for L = 1 the packed value is the sentinel 0.
std::int64_t pack_query(const TaskParams& params, const std::vector<std::int64_t>& w);
std::vector<std::int64_t> unpack_query(const TaskParams& params, std::int64_t packed);

Prompt tokenize(const TaskInstance& inst);

// Inverse of tokenize: rebuilds the instance from a prompt (used by the
// protocol players, which each see only their own block).
TaskInstance detokenize(const TaskParams& params, const Prompt& prompt);

}  // namespace fclab
