#pragma once

#include "fclab/engine.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace fclab {

// MSB-first bit sequence with fixed-width two's-complement integer fields.
// The transcript wire format: every message is one of these.
class BitString {
public:
    void append_bit(int b);
    // raw must fit in `bits` two's-complement bits.
    void append_field(const BigInt& raw, int bits);
    void append(const BitString& other);
    // Reads a sign-extended field and advances the cursor.
    BigInt read_field(std::int64_t& cursor, int bits) const;
    int get_bit(std::int64_t idx) const;

    std::int64_t bit_count() const { return bits_; }
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::string hex() const;

    bool operator==(const BitString& o) const {
        return bits_ == o.bits_ && bytes_ == o.bytes_;
    }
    bool operator<(const BitString& o) const {
        if (bits_ != o.bits_) return bits_ < o.bits_;
        return bytes_ < o.bytes_;
    }

private:
    std::vector<std::uint8_t> bytes_;
    std::int64_t bits_ = 0;
};

// Everything player i holds after some epoch: its own tokens plus every
// message received so far. Epochs only ever append, so the monotone
// information-state invariant is structural.
struct PlayerState {
    int player = 0;  // label in [-1 : top]
    std::vector<Token> input;
    // received[e][k]: the epoch-(e+1) message from the k-th sender above
    // `player` (senders ordered ascending: player+1, player+2, ...).
    std::vector<std::vector<BitString>> received;
};

struct TranscriptEntry {
    int epoch = 1;  // 1-based
    int sender = 0;
    int receiver = 0;
    BitString bits;
};

// Canonical packing of everything one player received, ordered epoch-major
// then sender ascending. Bucketing key of the fooling-pair search.
struct TranscriptView {
    std::vector<std::uint8_t> bytes;
    std::int64_t bits = 0;

    std::string hex() const;
    bool operator==(const TranscriptView& o) const {
        return bits == o.bits && bytes == o.bytes;
    }
    bool operator<(const TranscriptView& o) const {
        if (bits != o.bits) return bits < o.bits;
        return bytes < o.bytes;
    }
};

// One autoregressive communication protocol. Players are labeled
// -1, 0, ..., top_player; lower labels listen, higher labels respond. Each
// epoch every player i broadcasts its full state to players [i+1 : top];
// each of those responds with a message of exactly msg_bits[slot(i)] bits,
// which must fit the model budget 2 * B * m_(i). Storage index ("slot") for
// player i is i + 1.
struct ProtocolDef {
    int epochs = 1;
    int top_player = 1;
    std::int64_t B = 1;                  // message bits per input token
    std::vector<std::int64_t> m;         // input tokens per player, by slot
    std::vector<std::int64_t> msg_bits;  // declared response size, by receiver slot

    // respond(epoch, sender j, receiver i, X_j^(epoch-1), X_i^(epoch-1)).
    std::function<BitString(int, int, int, const PlayerState&, const PlayerState&)>
        respond;
    // output(X_{-1}^(epochs)) -> final answer bits.
    std::function<BitString(const PlayerState&)> output;

    int players() const { return top_player + 2; }
    static int slot(int player) { return player + 1; }
    void validate() const;
};

struct ProtocolRun {
    // states[l][slot]: X_i^(l) for l in [0 : epochs].
    std::vector<std::vector<PlayerState>> states;
    // Epoch-major, receiver ascending, sender ascending.
    std::vector<TranscriptEntry> transcripts;
    BitString answer;
};

// Faithful simulation: every epoch-l message is a function of epoch-(l-1)
// states only. Throws ProtocolViolationError naming (epoch, sender,
// receiver) when a response has the wrong size, and on input-length
// mismatches.
ProtocolRun run_protocol(const ProtocolDef& def,
                         const std::vector<std::vector<Token>>& inputs);

TranscriptView view_for(const ProtocolRun& run, int player);

// Total transcript bits the player receives over the whole run.
std::int64_t view_bits(const ProtocolDef& def, int player);

// ---------------------------------------------------------------------------
// Reduction: any causal transformer evaluated on the task prompt layout is
// an autoregressive protocol. Player i in [1:L] owns table block z_i
// (N_{i-1} tokens), player 0 the base token, player -1 the query token.
// The epoch-l message from j to i carries, per query r in E_i and head h,
// the attention-piece wire over senders' positions E_j: the weighted value
// sum (d fields of p bits) and the log-sum-exp normalizer (one p-bit
// field) - exactly |E_i| * H * (d*p + p) bits, within the 2*H*d*p*m_(i)
// budget. The receiver re-derives its own activations from those wires
// with the same kernels the engine uses, so the protocol answer is
// bit-identical to a direct forward pass.
// ---------------------------------------------------------------------------

// Global prompt start position of each player's block, by slot.
std::vector<std::size_t> player_starts(const TaskParams& params);

// Player token lists in slot order (player -1 at slot 0).
std::vector<std::vector<Token>> protocol_inputs(const TaskInstance& inst);

// Re-derives the player's own activations x^(epochs) from its information
// state alone (the reduction-hypothesis operation). Returns one raw vector
// per owned position.
std::vector<Vec> derive_activations(const TransformerSpec& spec,
                                    const TaskParams& params, int player,
                                    const PlayerState& state, int epochs);

ProtocolDef reduce_transformer(const TransformerSpec& spec, const TaskParams& params);

// Raw activation vector <-> p-bit fields (the protocol answer encoding).
BitString serialize_vec(const Vec& x, int p);
Vec deserialize_vec(const BitString& bits, int count, int p);

// ---------------------------------------------------------------------------
// Fooling-pair adversary: two top-player inputs that player -1 cannot
// distinguish (byte-identical transcript view) yet require different
// answers. If the family realizes more distinct correct answers than
// 2^(view bits of player -1), a pair is guaranteed by pigeonhole and the
// search is required to produce one.
// ---------------------------------------------------------------------------

struct FoolingPair {
    std::size_t index_a = 0;
    std::size_t index_b = 0;
    std::int64_t answer_a = 0;
    std::int64_t answer_b = 0;
    TranscriptView shared_view;
};

std::optional<FoolingPair> find_fooling_pair(
    const ProtocolDef& def, const std::vector<std::vector<Token>>& base_inputs,
    const std::vector<std::vector<Token>>& family,
    const std::function<std::int64_t(std::size_t)>& oracle, int threads = 1);

}  // namespace fclab
