#include "fclab/comm.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <thread>

namespace fclab {

namespace {

std::string player_name(int i) { return std::to_string(i); }

[[noreturn]] void violation(int epoch, int sender, int receiver,
                            const std::string& what) {
    throw ProtocolViolationError("protocol violation at epoch " +
                                 std::to_string(epoch) + ", sender " +
                                 player_name(sender) + ", receiver " +
                                 player_name(receiver) + ": " + what);
}

}  // namespace

// --------------------------------------------------------------------------
// BitString
// --------------------------------------------------------------------------

void BitString::append_bit(int b) {
    const std::size_t byte = static_cast<std::size_t>(bits_ / 8);
    if (byte >= bytes_.size()) bytes_.push_back(0);
    if (b) bytes_[byte] |= static_cast<std::uint8_t>(1u << (7 - bits_ % 8));
    ++bits_;
}

void BitString::append_field(const BigInt& raw, int bits) {
    if (bits < 1) throw ValidationError("BitString: field width must be >= 1");
    const BigInt lo = -shl(BigInt(1), bits - 1);
    const BigInt hi = shl(BigInt(1), bits - 1) - 1;
    if (raw < lo || raw > hi)
        throw ValidationError("BitString: value does not fit in " +
                              std::to_string(bits) + " bits");
    BigInt u = raw < 0 ? raw + shl(BigInt(1), bits) : raw;
    for (int k = bits - 1; k >= 0; --k)
        append_bit(boost::multiprecision::bit_test(u, static_cast<unsigned>(k)) ? 1
                                                                                : 0);
}

void BitString::append(const BitString& other) {
    for (std::int64_t i = 0; i < other.bit_count(); ++i)
        append_bit(other.get_bit(i));
}

int BitString::get_bit(std::int64_t idx) const {
    if (idx < 0 || idx >= bits_) throw ValidationError("BitString: bit index out of range");
    return (bytes_[static_cast<std::size_t>(idx / 8)] >> (7 - idx % 8)) & 1;
}

BigInt BitString::read_field(std::int64_t& cursor, int bits) const {
    if (bits < 1) throw ValidationError("BitString: field width must be >= 1");
    if (cursor < 0 || cursor + bits > bits_)
        throw ValidationError("BitString: field read past the end");
    BigInt u = 0;
    for (int k = 0; k < bits; ++k) {
        u <<= 1;
        u += get_bit(cursor + k);
    }
    cursor += bits;
    if (boost::multiprecision::bit_test(u, static_cast<unsigned>(bits - 1)))
        u -= shl(BigInt(1), bits);
    return u;
}

std::string BitString::hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(bytes_.size() * 2);
    for (std::uint8_t b : bytes_) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

std::string TranscriptView::hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (std::uint8_t b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

// --------------------------------------------------------------------------
// Protocol simulation
// --------------------------------------------------------------------------

void ProtocolDef::validate() const {
    if (epochs < 1) throw ValidationError("ProtocolDef: epochs must be >= 1");
    if (top_player < -1) throw ValidationError("ProtocolDef: top player must be >= -1");
    if (B < 1) throw ValidationError("ProtocolDef: B must be >= 1");
    const std::size_t P = static_cast<std::size_t>(players());
    if (m.size() != P) throw ValidationError("ProtocolDef: m must have one entry per player");
    if (msg_bits.size() != P)
        throw ValidationError("ProtocolDef: msg_bits must have one entry per player");
    for (std::size_t s = 0; s < P; ++s) {
        if (m[s] < 1) throw ValidationError("ProtocolDef: every m_(i) must be >= 1");
        if (msg_bits[s] < 0)
            throw ValidationError("ProtocolDef: message sizes must be >= 0");
        if (msg_bits[s] > 2 * B * m[s])
            throw ProtocolViolationError(
                "ProtocolDef: declared message size for player " +
                player_name(static_cast<int>(s) - 1) + " (" +
                std::to_string(msg_bits[s]) + " bits) exceeds the model budget 2*B*m = " +
                std::to_string(2 * B * m[s]));
    }
    if (!respond) throw ValidationError("ProtocolDef: respond is not set");
    if (!output) throw ValidationError("ProtocolDef: output is not set");
}

ProtocolRun run_protocol(const ProtocolDef& def,
                         const std::vector<std::vector<Token>>& inputs) {
    def.validate();
    const int P = def.players();
    if (static_cast<int>(inputs.size()) != P)
        throw ProtocolViolationError("run_protocol: expected " + std::to_string(P) +
                                     " player inputs, got " +
                                     std::to_string(inputs.size()));
    for (int s = 0; s < P; ++s)
        if (static_cast<std::int64_t>(inputs[static_cast<std::size_t>(s)].size()) !=
            def.m[static_cast<std::size_t>(s)])
            throw ProtocolViolationError(
                "run_protocol: player " + player_name(s - 1) + " must provide " +
                std::to_string(def.m[static_cast<std::size_t>(s)]) + " tokens, got " +
                std::to_string(inputs[static_cast<std::size_t>(s)].size()));

    ProtocolRun run;
    run.states.resize(static_cast<std::size_t>(def.epochs) + 1);
    auto& s0 = run.states[0];
    s0.resize(static_cast<std::size_t>(P));
    for (int s = 0; s < P; ++s) {
        s0[static_cast<std::size_t>(s)].player = s - 1;
        s0[static_cast<std::size_t>(s)].input = inputs[static_cast<std::size_t>(s)];
    }

    for (int l = 1; l <= def.epochs; ++l) {
        const auto& prev = run.states[static_cast<std::size_t>(l - 1)];
        auto next = prev;  // monotone: epochs only append
        for (int i = -1; i <= def.top_player; ++i) {
            std::vector<BitString> inbox;
            for (int j = i + 1; j <= def.top_player; ++j) {
                BitString msg =
                    def.respond(l, j, i, prev[static_cast<std::size_t>(j + 1)],
                                prev[static_cast<std::size_t>(i + 1)]);
                if (msg.bit_count() != def.msg_bits[static_cast<std::size_t>(i + 1)])
                    violation(l, j, i,
                              "message has " + std::to_string(msg.bit_count()) +
                                  " bits, declared " +
                                  std::to_string(
                                      def.msg_bits[static_cast<std::size_t>(i + 1)]));
                run.transcripts.push_back(TranscriptEntry{l, j, i, msg});
                inbox.push_back(std::move(msg));
            }
            next[static_cast<std::size_t>(i + 1)].received.push_back(std::move(inbox));
        }
        run.states[static_cast<std::size_t>(l)] = std::move(next);
    }
    run.answer = def.output(run.states[static_cast<std::size_t>(def.epochs)][0]);
    return run;
}

TranscriptView view_for(const ProtocolRun& run, int player) {
    BitString acc;
    for (const auto& t : run.transcripts)
        if (t.receiver == player) acc.append(t.bits);
    TranscriptView v;
    v.bytes = acc.bytes();
    v.bits = acc.bit_count();
    return v;
}

std::int64_t view_bits(const ProtocolDef& def, int player) {
    const std::int64_t senders = def.top_player - player;
    return static_cast<std::int64_t>(def.epochs) * senders *
           def.msg_bits[static_cast<std::size_t>(player + 1)];
}

// --------------------------------------------------------------------------
// Transformer reduction
// --------------------------------------------------------------------------

std::vector<std::size_t> player_starts(const TaskParams& params) {
    params.validate();
    auto N = params.domain_sizes();
    std::vector<std::size_t> start(static_cast<std::size_t>(params.L) + 2, 0);
    std::size_t pos = 0;
    for (int i = params.L; i >= 1; --i) {
        start[static_cast<std::size_t>(i + 1)] = pos;
        pos += static_cast<std::size_t>(N[static_cast<std::size_t>(i - 1)]);
    }
    start[1] = pos;      // player 0, one token
    start[0] = pos + 1;  // player -1, one token
    return start;
}

std::vector<std::vector<Token>> protocol_inputs(const TaskInstance& inst) {
    Prompt prompt = tokenize(inst);
    std::vector<std::vector<Token>> inputs(
        static_cast<std::size_t>(inst.params.L) + 2);
    for (const auto& span : prompt.blocks) {
        auto& dst = inputs[static_cast<std::size_t>(span.block + 1)];
        for (std::size_t k = 0; k < span.len; ++k)
            dst.push_back(prompt.tokens[span.start + k]);
    }
    return inputs;
}

std::vector<Vec> derive_activations(const TransformerSpec& spec,
                                    const TaskParams& params, int player,
                                    const PlayerState& state, int epochs) {
    if (epochs < 0 || epochs > spec.dims.L)
        throw ValidationError("derive_activations: epoch out of range");
    const auto starts = player_starts(params);
    const std::size_t start = starts[static_cast<std::size_t>(player + 1)];
    const std::size_t mi = state.input.size();
    if (mi == 0) throw ValidationError("derive_activations: player holds no tokens");
    const int d = spec.dims.d;
    const int H = spec.dims.H;
    const int p = spec.dims.p;
    const int dH = d * H;
    const int senders = params.L - player;
    SatFlag sat;

    std::vector<Vec> x(mi);
    for (std::size_t k = 0; k < mi; ++k) {
        DVec e = embed_token(spec.embed, spec.format, dH, state.input[k], start + k);
        if (static_cast<int>(e.size()) != dH)
            throw ValidationError("derive_activations: embed width mismatch");
        x[k] = quantize_vec(e, spec.format, sat);
    }

    for (int e = 1; e <= epochs; ++e) {
        if (static_cast<int>(state.received.size()) < e)
            throw ProtocolViolationError(
                "derive_activations: player " + player_name(player) +
                " is missing epoch " + std::to_string(e) + " messages");
        const auto& msgs = state.received[static_cast<std::size_t>(e - 1)];
        if (static_cast<int>(msgs.size()) != senders)
            throw ProtocolViolationError(
                "derive_activations: player " + player_name(player) + " expected " +
                std::to_string(senders) + " epoch-" + std::to_string(e) +
                " messages, has " + std::to_string(msgs.size()));
        const Layer& layer = spec.layers[static_cast<std::size_t>(e - 1)];

        std::vector<Vec> xnext(mi);
        for (std::size_t k = 0; k < mi; ++k) {
            const std::size_t r = start + k;
            DVec xq = to_dyadic(x[k], spec.format);
            Vec yi;
            yi.reserve(static_cast<std::size_t>(dH));
            for (int h = 0; h < H; ++h) {
                const HeadParams& hp =
                    layer.heads[static_cast<std::size_t>(h)].at(r);
                DVec q = mat_vec(hp.Q, xq, spec.format);
                std::vector<PieceWire> wires;
                wires.reserve(static_cast<std::size_t>(senders) + 1);
                // Earlier blocks = senders in prompt order (descending label).
                for (int j = params.L; j > player; --j) {
                    const BitString& msg =
                        msgs[static_cast<std::size_t>(j - player - 1)];
                    std::int64_t cursor =
                        (static_cast<std::int64_t>(k) * H + h) * (d + 1) * p;
                    PieceWire w;
                    w.ytilde.resize(static_cast<std::size_t>(d));
                    for (int t = 0; t < d; ++t)
                        w.ytilde[static_cast<std::size_t>(t)] =
                            msg.read_field(cursor, p);
                    w.lse = msg.read_field(cursor, p);
                    wires.push_back(std::move(w));
                }
                // Own-block causal prefix, computed locally.
                std::vector<DVec> pk, pv;
                pk.reserve(k + 1);
                pv.reserve(k + 1);
                for (std::size_t t = 0; t <= k; ++t) {
                    const HeadParams& hs =
                        layer.heads[static_cast<std::size_t>(h)].at(start + t);
                    DVec xt = to_dyadic(x[t], spec.format);
                    pk.push_back(mat_vec(hs.K, xt, spec.format));
                    pv.push_back(mat_vec(hs.V, xt, spec.format));
                }
                wires.push_back(attention_piece(q, pk, pv, spec.format,
                                                spec.score_format, sat));
                Vec yh = recombine_pieces(wires, spec.format, spec.score_format, sat);
                yi.insert(yi.end(), yh.begin(), yh.end());
            }
            DVec v = to_dyadic(yi, spec.format);
            mlp_apply(layer.mlp.at(r), v);
            if (static_cast<int>(v.size()) != dH)
                throw ValidationError("derive_activations: MLP changed the width");
            xnext[k] = quantize_vec(v, spec.format, sat);
        }
        x = std::move(xnext);
    }
    return x;
}

ProtocolDef reduce_transformer(const TransformerSpec& spec, const TaskParams& params) {
    spec.validate();
    params.validate();
    if (spec.mask != MaskMode::Causal)
        throw ValidationError("reduce_transformer: the reduction needs a causal mask");
    const int d = spec.dims.d;
    const int H = spec.dims.H;
    const int p = spec.dims.p;
    auto N = params.domain_sizes();

    ProtocolDef def;
    def.epochs = spec.dims.L;
    def.top_player = params.L;
    def.B = static_cast<std::int64_t>(H) * d * p;
    def.m.assign(static_cast<std::size_t>(params.L) + 2, 1);
    for (int i = 1; i <= params.L; ++i)
        def.m[static_cast<std::size_t>(i + 1)] = N[static_cast<std::size_t>(i - 1)];
    def.msg_bits.resize(static_cast<std::size_t>(params.L) + 2);
    const std::int64_t per_query =
        static_cast<std::int64_t>(H) * (static_cast<std::int64_t>(d) * p + p);
    for (std::size_t s = 0; s < def.msg_bits.size(); ++s) {
        def.msg_bits[s] = def.m[s] * per_query;
        if (def.msg_bits[s] > 2 * def.B * def.m[s])
            throw ProtocolViolationError(
                "reduce_transformer: transcript size exceeds the 2*B*m budget");
    }

    const auto starts = player_starts(params);
    def.respond = [spec, params, starts, d, H, p](int epoch, int j, int i,
                                                  const PlayerState& Xj,
                                                  const PlayerState& Xi) {
        std::vector<Vec> xj = derive_activations(spec, params, j, Xj, epoch - 1);
        std::vector<Vec> xi = derive_activations(spec, params, i, Xi, epoch - 1);
        const Layer& layer = spec.layers[static_cast<std::size_t>(epoch - 1)];
        const std::size_t rstart = starts[static_cast<std::size_t>(i + 1)];
        const std::size_t jstart = starts[static_cast<std::size_t>(j + 1)];
        SatFlag sat;
        BitString out;
        for (std::size_t k = 0; k < xi.size(); ++k) {
            DVec xq = to_dyadic(xi[k], spec.format);
            for (int h = 0; h < H; ++h) {
                const HeadParams& hp =
                    layer.heads[static_cast<std::size_t>(h)].at(rstart + k);
                DVec q = mat_vec(hp.Q, xq, spec.format);
                std::vector<DVec> pk, pv;
                pk.reserve(xj.size());
                pv.reserve(xj.size());
                for (std::size_t t = 0; t < xj.size(); ++t) {
                    const HeadParams& hs =
                        layer.heads[static_cast<std::size_t>(h)].at(jstart + t);
                    DVec xt = to_dyadic(xj[t], spec.format);
                    pk.push_back(mat_vec(hs.K, xt, spec.format));
                    pv.push_back(mat_vec(hs.V, xt, spec.format));
                }
                PieceWire w = attention_piece(q, pk, pv, spec.format,
                                              spec.score_format, sat);
                for (int t = 0; t < d; ++t)
                    out.append_field(w.ytilde[static_cast<std::size_t>(t)], p);
                out.append_field(w.lse, p);
            }
        }
        return out;
    };
    def.output = [spec, params, p](const PlayerState& X) {
        std::vector<Vec> x = derive_activations(spec, params, -1, X, spec.dims.L);
        return serialize_vec(x[0], p);
    };
    return def;
}

BitString serialize_vec(const Vec& x, int p) {
    BitString out;
    for (const auto& raw : x) out.append_field(raw, p);
    return out;
}

Vec deserialize_vec(const BitString& bits, int count, int p) {
    Vec out;
    out.reserve(static_cast<std::size_t>(count));
    std::int64_t cursor = 0;
    for (int k = 0; k < count; ++k) out.push_back(bits.read_field(cursor, p));
    if (cursor != bits.bit_count())
        throw ValidationError("deserialize_vec: trailing bits");
    return out;
}

// --------------------------------------------------------------------------
// Fooling-pair search
// --------------------------------------------------------------------------

std::optional<FoolingPair> find_fooling_pair(
    const ProtocolDef& def, const std::vector<std::vector<Token>>& base_inputs,
    const std::vector<std::vector<Token>>& family,
    const std::function<std::int64_t(std::size_t)>& oracle, int threads) {
    def.validate();
    const std::size_t top_slot = static_cast<std::size_t>(def.top_player + 1);
    if (base_inputs.size() != static_cast<std::size_t>(def.players()))
        throw ProtocolViolationError("find_fooling_pair: base inputs must cover every player");

    std::vector<TranscriptView> views(family.size());
    std::vector<std::int64_t> answers(family.size());
    auto run_range = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t k = lo; k < hi; ++k) {
            auto inputs = base_inputs;
            inputs[top_slot] = family[k];
            ProtocolRun run = run_protocol(def, inputs);
            views[k] = view_for(run, -1);
            answers[k] = oracle(k);
        }
    };
    const int nthreads = std::max(1, threads);
    if (nthreads == 1 || family.size() < 2) {
        run_range(0, family.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk =
            (family.size() + static_cast<std::size_t>(nthreads) - 1) /
            static_cast<std::size_t>(nthreads);
        for (int t = 0; t < nthreads; ++t) {
            const std::size_t lo = static_cast<std::size_t>(t) * chunk;
            const std::size_t hi = std::min(family.size(), lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(run_range, lo, hi);
        }
        for (auto& th : pool) th.join();
    }

    // Deterministic scan in family order: the first collision of views with
    // different answers wins, paired with the earliest differing member.
    std::map<TranscriptView, std::map<std::int64_t, std::size_t>> buckets;
    std::set<std::int64_t> distinct;
    for (std::size_t k = 0; k < family.size(); ++k) {
        distinct.insert(answers[k]);
        auto& bucket = buckets[views[k]];
        std::size_t best = family.size();
        std::int64_t best_ans = 0;
        for (const auto& [ans, idx] : bucket) {
            if (ans != answers[k] && idx < best) {
                best = idx;
                best_ans = ans;
            }
        }
        if (best < family.size()) {
            FoolingPair pair;
            pair.index_a = best;
            pair.index_b = k;
            pair.answer_a = best_ans;
            pair.answer_b = answers[k];
            pair.shared_view = views[k];
            return pair;
        }
        bucket.emplace(answers[k], k);
    }

    // Pigeonhole: more distinct answers than transcript patterns would make
    // a miss impossible; reaching this line then means the simulation is
    // broken, so fail loudly instead of returning "none".
    const std::int64_t bits = view_bits(def, -1);
    if (bits < 62 &&
        static_cast<std::int64_t>(distinct.size()) > (std::int64_t{1} << bits))
        throw std::logic_error(
            "find_fooling_pair: pigeonhole guarantees a pair, but none was found");
    return std::nullopt;
}

}  // namespace fclab
