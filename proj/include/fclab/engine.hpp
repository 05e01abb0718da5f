#pragma once

#include "fclab/keys.hpp"
#include "fclab/numerics.hpp"
#include "fclab/schedule.hpp"
#include "fclab/task.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fclab {

// Raw fixed-point vectors/matrices; every entry shares the spec's format.
using Vec = std::vector<FixedRaw>;
using Mat = std::vector<Vec>;  // row-major

// Exact intermediate vectors used inside attention and MLP programs.
using DVec = std::vector<Dyadic>;

// ---------------------------------------------------------------------------
// MLP programs. The per-position function g is an interpreted list of pure
// ops over an exact dyadic vector of width d*H; the engine quantizes the
// result back to the activation format. Parameters are exact dyadics and are
// not range-limited (the model quantizes wire values, not the function g).
// ---------------------------------------------------------------------------
enum class MlpOpKind { Affine, RoundInt, Step, ToBits, DivmodConst, SetConst, Branch };

struct MlpOp {
    MlpOpKind kind = MlpOpKind::RoundInt;

    // Affine: v <- W*v + b; W is (dH x dH), b has dH entries.
    std::vector<std::vector<Dyadic>> W;
    std::vector<Dyadic> b;

    // RoundInt / Step act on slots [begin, end):
    //   RoundInt: nearest integer, ties to even;
    //   Step: 1 if v >= 0 else 0.
    int begin = 0;
    int end = 0;

    // ToBits: v[src] must be an exact integer in [0, 2^width); its binary
    // digits are written msb-first into slots [begin, begin+width).
    int src = 0;
    int width = 0;

    // DivmodConst: v[src] must be an exact integer >= 0; writes
    // v[q_dst] = v[src] / divisor and v[r_dst] = v[src] % divisor.
    BigInt divisor = 1;
    int q_dst = 0;
    int r_dst = 0;

    // SetConst: v[begin] <- value.
    Dyadic value;

    // Branch: if v[src] >= 1/2 run then_ops else else_ops.
    std::vector<MlpOp> then_ops;
    std::vector<MlpOp> else_ops;
};

struct MlpProgram {
    std::vector<MlpOp> ops;
    // Optional per-position replacement program (position-dependent
    // parameters; the base model is the override-free case).
    std::map<std::size_t, std::vector<MlpOp>> overrides;

    const std::vector<MlpOp>& at(std::size_t pos) const {
        auto it = overrides.find(pos);
        return it == overrides.end() ? ops : it->second;
    }
};

// Evaluates a program on an exact vector (width must stay constant).
void mlp_apply(const std::vector<MlpOp>& ops, DVec& v);

// ---------------------------------------------------------------------------
// Attention.
// ---------------------------------------------------------------------------
struct HeadParams {
    Mat Q, K, V;  // each d rows x (d*H) columns, raw entries in format range
};

struct AttentionHead {
    HeadParams base;
    // Per-position parameter overrides. The Q override applies when the
    // position is the query; K/V overrides apply when it is the source.
    std::map<std::size_t, HeadParams> overrides;

    const HeadParams& at(std::size_t pos) const {
        auto it = overrides.find(pos);
        return it == overrides.end() ? base : it->second;
    }
};

struct Layer {
    std::vector<AttentionHead> heads;  // exactly H
    MlpProgram mlp;
};

enum class MaskMode { Causal, Full };

// ---------------------------------------------------------------------------
// Named token embeddings: Token (and position) -> initial vector x^(0).
// A closed, documented set of pure builders; "compose" covers the three
// sequential-composition solvers, "circuit" the circuit compiler.
// ---------------------------------------------------------------------------
enum class ComposeMode { Depth, Cot, Encoder };

// Slot layout shared by the compose-solver embeddings; see builders.cpp for
// the full wiring description.
struct ComposeLayout {
    TaskParams params;
    KeyEncoding enc;
    ComposeMode mode = ComposeMode::Depth;
    FixedRaw scale_raw = 0;  // retrieval scale, raw at the activation format

    // Depth mode slots (width = d, H = 1):
    //   0 const1, [1..D] key bits, [D+1..2D] query bits, 2D+1 query-special
    //   (integer h), 2D+2 payload, 2D+3 packed query tuple, 2D+4 chain value,
    //   2D+5 table flag, 2D+6 special-key bit.
    // Cot mode (width = d*(L+1)): common slots 0 const1, [1..D] key bits,
    //   D+1 payload; head h's query bits live at (h-1)*d .. within its region
    //   [ (h-1)*d + kQOff .. ).
    // Encoder mode (width = 3d): 0 const1, [1..D] key bits, [D+1..2D]
    //   pointer bits, 2D+1 resolved, 2D+2 scratch digit, 2D+3 payload,
    //   2D+4 own-block integer.
    int width = 0;  // d*H of the owning spec
};

struct CircuitEmbedLayout {
    int id_bits = 1;     // position-id key width
    int tag_bits = 1;    // spread-group tag width
    int width = 0;       // d*H
    // Per-position group tags (0 = none), indexed by position.
    std::vector<std::int64_t> group_tags;
};

enum class EmbedKind { Zeros, HashTable, ValueBits, Compose, Circuit };

struct EmbedSpec {
    EmbedKind kind = EmbedKind::Zeros;
    std::uint64_t seed = 0;               // HashTable
    int offset = 0;                       // ValueBits: first bit slot
    int width = 0;                        // ValueBits: bit count
    std::optional<ComposeLayout> compose; // Compose
    std::optional<CircuitEmbedLayout> circuit;  // Circuit
};

// Resolve an embedding: exact vector of the spec's width, then quantized by
// the engine. Throws ValidationError naming the position for tokens outside
// the embedder's vocabulary.
DVec embed_token(const EmbedSpec& embed, const FixedFormat& fmt, int dH,
                 const Token& token, std::size_t position);

// ---------------------------------------------------------------------------
// Named decode maps: final-position vector (+ step index) -> next Token.
// ---------------------------------------------------------------------------
enum class DecodeKind { ReadSlot, CotNext };

struct DecodeSpec {
    DecodeKind kind = DecodeKind::ReadSlot;
    int slot = 0;          // ReadSlot: slot holding the (integer) answer
    int out_block = 0;     // block id for emitted tokens
    // CotNext:
    int head_width = 0;    // d (slots per head region)
    std::int64_t pack_base = 1;  // emitted value = wpack * pack_base + i
};

Token decode_vector(const DecodeSpec& decode, const FixedFormat& fmt, const Vec& x,
                    int step);

// ---------------------------------------------------------------------------
// The transformer spec itself.
// ---------------------------------------------------------------------------
struct TransformerSpec {
    ModelDims dims;            // H, d, p (max wire bits), L (layer count)
    FixedFormat format;        // activation format; total_bits() <= p
    FixedFormat score_format;  // log-sum-exp wire format; total_bits() <= p
    MaskMode mask = MaskMode::Causal;
    EmbedSpec embed;
    std::vector<Layer> layers;

    void validate() const;
};

// Default score format when a caller has only (dims, format): keep the
// activation fractional resolution when the p budget allows it after
// reserving integer bits for the worst-case score magnitude
// (4*int_bits + 2*ceil(log2 dH) + 6); otherwise shrink the fraction first.
// Saturation remains well-defined either way.
FixedFormat default_score_format(const ModelDims& dims, const FixedFormat& fmt);

// ---------------------------------------------------------------------------
// Forward evaluation.
// ---------------------------------------------------------------------------
struct ForwardOptions {
    bool trace_alpha = false;  // record exact attention rows (memory-heavy)
    int threads = 1;           // positions per layer evaluated in parallel
};

struct Activations {
    // x[l][i]: activation after layer l (x[0] = embeddings), raw format.
    std::vector<std::vector<Vec>> x;
    // y[l-1][i]: attention output of layer l before the MLP, raw format.
    std::vector<std::vector<Vec>> y;
    // alpha[l-1][h][i][j]: exact attention probability, only when traced.
    std::vector<std::vector<std::vector<std::vector<BigRat>>>> alpha;
    bool saturated = false;  // sticky: any quantization clipped
};

Activations forward(const TransformerSpec& spec, const Prompt& prompt,
                    const ForwardOptions& opts = {});

// Autoregressive loop: run forward, decode the last position, append the
// token as a new singleton block, repeat `steps` times. If `saturated` is
// given it reports whether any of the passes clipped a wire value.
std::vector<Token> generate_with_cot(const TransformerSpec& spec, const Prompt& prompt,
                                     int steps, const DecodeSpec& decode,
                                     const ForwardOptions& opts = {},
                                     bool* saturated = nullptr);

// ---------------------------------------------------------------------------
// Canonical attention kernel, shared verbatim with the protocol reduction so
// that transformer evaluation and protocol simulation are bit-identical.
//
// For one (query, head) and one contiguous piece of visible positions, the
// wire value is the quantized softmax average of the piece's values plus the
// quantized log-sum-exp of its scores:
//   s_t   = <q, k_t>                                  (exact dyadic)
//   M     = max_t s_t
//   w_t   = floor(exp(s_t - M) * 2^Wacc) * 2^-Wacc    (certified exp)
//   D     = sum w_t   (>= 1: the max term is exactly 1)
//   ytilde= quantize((sum w_t * v_t) / D, format)      d entries, p bits each
//   lse   = quantize(M + log(D), score_format)         p bits
// Pieces are then recombined exactly from the wires:
//   lambda_j = floor(exp(lse_j - max_j lse_j) * 2^Wacc) * 2^-Wacc
//   y        = quantize((sum lambda_j ytilde_j) / (sum lambda_j), format).
// Wacc = 4*frac_bits + 64; exp arguments below -(Wacc+2) flush to weight 0.
// ---------------------------------------------------------------------------
struct PieceWire {
    Vec ytilde;    // d raw entries at `format`
    FixedRaw lse;  // raw at `score_format`
};

struct AttentionTraceRow {
    // Exact per-source probabilities for one (query, head); sums to 1.
    std::vector<BigRat> probs;
};

PieceWire attention_piece(const DVec& q, const std::vector<DVec>& keys,
                          const std::vector<DVec>& values, const FixedFormat& fmt,
                          const FixedFormat& score_fmt, SatFlag& sat,
                          std::vector<BigRat>* weights_out = nullptr);

Vec recombine_pieces(const std::vector<PieceWire>& pieces, const FixedFormat& fmt,
                     const FixedFormat& score_fmt, SatFlag& sat,
                     std::vector<BigRat>* lambdas_out = nullptr);

// Exact matrix-vector product of a raw fixed-point matrix (at fmt) with an
// exact dyadic vector.
DVec mat_vec(const Mat& m, const DVec& v, const FixedFormat& fmt);

inline DVec to_dyadic(const Vec& v, const FixedFormat& fmt) {
    DVec out;
    out.reserve(v.size());
    for (const auto& r : v) out.emplace_back(r, -fmt.frac_bits);
    return out;
}

Vec quantize_vec(const DVec& v, const FixedFormat& fmt, SatFlag& sat);

}  // namespace fclab
