#pragma once

#include "fclab/engine.hpp"
#include "fclab/solver_layout.hpp"

namespace fclab {

// Certified numeric headroom of a hand-built model. `claimed_gap` is the
// score margin sigma separating every intended retrieval target (or exact
// tie group) from all other scores; the checks certify, in exact rational
// arithmetic, that this margin makes every wire value land exactly on its
// intended grid point (piece averages, log-sum-exp values, recombination).
struct MarginReport {
    FixedRaw scale_raw = 0;      // sigma as a raw value at the activation format
    BigRat claimed_gap;          // sigma (an integer, kept exact)
    std::vector<VerifyCheck> checks;

    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

// A ready-to-run model: weights, decode map, and how to drive it.
struct SolverBundle {
    TransformerSpec spec;
    DecodeSpec decode;
    int steps = 0;   // autoregressive steps; 0 = decode after one forward pass
    int depth = 0;   // layer count, reported
    MarginReport margins;
};

// The outcome of running a bundle on one instance.
struct SolverRun {
    std::vector<Token> emitted;        // generated tokens (empty when steps == 0)
    std::vector<std::int64_t> chain;   // decoded chain values
    std::int64_t answer = 0;
    bool saturated = false;
};

// Smallest activation-grid value >= c * ln(n_keys)^2: the canonical scale of
// a retrieval head when margins are not the binding constraint.
FixedRaw retrieval_scale_raw(const FixedFormat& fmt, int c, std::int64_t n_keys);

// One exact-match retrieval head on the depth-solver slot layout (width
// 2D+7): queries are scaled bit patterns, keys are exposed as (a, 1-a), V
// copies the whole source vector. Scores: scale*D on the unique full key
// match, at most scale*(D-1) elsewhere (plus the query token's special
// dimension, which recreates the exact self/target tie).
HeadParams build_retrieval_head(const KeyEncoding& enc, const FixedFormat& fmt,
                                FixedRaw scale_raw);

// Sequential-composition solvers. All three validate the produced spec and
// certify margins (InsufficientPrecisionError when no format in the search
// range satisfies them).
//
// - depth solver: L+1 layers, 1 head, causal, shared per-layer MLPs with no
//   per-position overrides; answer decoded from the final position.
// - chain-of-thought solver: 1 layer, L+1 heads, causal; L+1 generated
//   tokens carry the chain i_0 .. i_L (the first step bootstraps i_0, so one
//   step more than the chain links being derived).
// - encoder solver: full attention, 2 heads, pointer doubling;
//   (L >= 2 ? 1 : 0) + ceil(log2(L+2)) layers.
SolverBundle build_depth_solver(const TaskParams& params);
SolverBundle build_cot_solver(const TaskParams& params);
SolverBundle build_encoder_solver(const TaskParams& params);

// Tokenizes the instance, runs the bundle, decodes the answer.
SolverRun run_solver(const SolverBundle& bundle, const TaskInstance& inst,
                     int threads = 1);

}  // namespace fclab
