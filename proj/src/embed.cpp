#include "fclab/engine.hpp"
#include "fclab/solver_layout.hpp"

#include <string>

namespace fclab {

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Dyadic bit(int b) { return Dyadic(BigInt(b), 0); }

void set_bits(DVec& v, int begin, const std::vector<int>& bits) {
    for (std::size_t k = 0; k < bits.size(); ++k)
        v[static_cast<std::size_t>(begin) + k] = bit(bits[k]);
}

[[noreturn]] void embed_error(std::size_t position, const std::string& what) {
    throw ValidationError("embed: " + what + " at position " + std::to_string(position));
}

DVec embed_depth(const ComposeLayout& lay, const Token& tok, std::size_t position) {
    const auto& enc = lay.enc;
    layout::Depth slots(enc);
    DVec v(static_cast<std::size_t>(lay.width), Dyadic::zero());
    v[static_cast<std::size_t>(slots.konst())] = bit(1);
    const int L = lay.params.L;
    if (tok.block >= 0 && tok.block <= L) {
        // Table entry or the base-value token: key = own identity, query =
        // own key (exact self-retrieval keeps the state across layers).
        auto kb = enc.key_bits(KeyEncoding::block_id_for(tok.block), tok.index);
        set_bits(v, slots.key(0), kb);
        set_bits(v, slots.query(0), kb);
        v[static_cast<std::size_t>(slots.payload())] = Dyadic(BigInt(tok.value), 0);
        v[static_cast<std::size_t>(slots.table_flag())] = bit(1);
    } else if (tok.block == -1) {
        // Query token: anchor key, special marker, packed digits, and the
        // first retrieval query (the base-value token's key).
        auto anchor = enc.anchor_bits();
        set_bits(v, slots.key(0), anchor);
        auto qb = enc.key_bits(KeyEncoding::block_id_for(0), 1);
        set_bits(v, slots.query(0), qb);
        int h = 0;
        for (std::size_t k = 0; k < qb.size(); ++k) h += qb[k] ^ anchor[k];
        v[static_cast<std::size_t>(slots.qspecial())] = Dyadic(BigInt(h), 0);
        v[static_cast<std::size_t>(slots.wpack())] = Dyadic(BigInt(tok.value), 0);
        v[static_cast<std::size_t>(slots.special())] = bit(1);
    } else if (tok.block == L + 1) {
        set_bits(v, slots.key(0), enc.inert_bits());
    } else {
        embed_error(position, "token block outside the task vocabulary");
    }
    return v;
}

DVec embed_cot(const ComposeLayout& lay, const Token& tok, std::size_t position) {
    const auto& enc = lay.enc;
    const auto& params = lay.params;
    layout::Cot slots(enc);
    DVec v(static_cast<std::size_t>(lay.width), Dyadic::zero());
    v[static_cast<std::size_t>(slots.konst())] = bit(1);
    const int L = params.L;
    const std::int64_t pack_base = layout::cot_pack_base(params);
    if (tok.block >= 0 && tok.block <= L) {
        set_bits(v, slots.key(0),
                 enc.key_bits(KeyEncoding::block_id_for(tok.block), tok.index));
        v[static_cast<std::size_t>(slots.payload())] = Dyadic(BigInt(tok.value), 0);
    } else if (tok.block == -1) {
        // Anchor: all-zero key. Head 1 carries the first query (base token);
        // all other query regions stay zero, i.e. they point at the anchor.
        v[static_cast<std::size_t>(slots.payload())] = Dyadic(BigInt(tok.value), 0);
        set_bits(v, slots.query(1, 0), enc.key_bits(KeyEncoding::block_id_for(0), 1));
    } else if (tok.block == L + 1) {
        // Generated token s carrying wpack * pack_base + i_{s-1}. It arms
        // head s+1 with the next retrieval query; every other head stays
        // parked on the anchor.
        set_bits(v, slots.key(0), enc.inert_bits());
        if (tok.value < 0) embed_error(position, "negative generated value");
        v[static_cast<std::size_t>(slots.payload())] = Dyadic(BigInt(tok.value), 0);
        const std::int64_t s = tok.index;
        if (s < 1) embed_error(position, "generated token step must be >= 1");
        if (s <= L) {
            std::int64_t i = tok.value % pack_base;
            std::int64_t wp = tok.value / pack_base;
            auto N = params.domain_sizes();
            std::int64_t q_idx;
            try {
                if (s == 1) {
                    q_idx = i;
                } else {
                    auto w = unpack_query(params, wp);
                    q_idx = pair_index(w[static_cast<std::size_t>(s - 2)], i,
                                       params.n[static_cast<std::size_t>(s - 2)],
                                       N[static_cast<std::size_t>(s - 2)]);
                }
                set_bits(v, slots.query(static_cast<int>(s) + 1, 0),
                         enc.key_bits(KeyEncoding::block_id_for(static_cast<int>(s)),
                                      q_idx));
            } catch (const std::exception& e) {
                embed_error(position, std::string("bad generated value (") + e.what() + ")");
            }
        }
    } else {
        embed_error(position, "token block outside the task vocabulary");
    }
    return v;
}

DVec embed_encoder(const ComposeLayout& lay, const Token& tok, std::size_t position) {
    const auto& enc = lay.enc;
    const auto& params = lay.params;
    layout::Encoder slots(enc);
    DVec v(static_cast<std::size_t>(lay.width), Dyadic::zero());
    v[static_cast<std::size_t>(slots.konst())] = bit(1);
    const int L = params.L;
    if (tok.block >= 1 && tok.block <= L) {
        set_bits(v, slots.key(0),
                 enc.key_bits(KeyEncoding::block_id_for(tok.block), tok.index));
        v[static_cast<std::size_t>(slots.payload())] = Dyadic(BigInt(tok.value), 0);
        v[static_cast<std::size_t>(slots.blockint())] = Dyadic(BigInt(tok.block), 0);
        if (tok.block == L) {
            // Terminal entry: resolved from the start, pointer = itself so
            // pointer doubling has an absorbing fixed point.
            set_bits(v, slots.ptr(0),
                     enc.key_bits(KeyEncoding::block_id_for(tok.block), tok.index));
            v[static_cast<std::size_t>(slots.resolved())] = Dyadic(BigInt(tok.value), 0);
        }
        // Blocks 1..L-1 receive their pointer in the setup layer (it needs
        // the query digits broadcast from the anchor).
    } else if (tok.block == 0) {
        set_bits(v, slots.key(0), enc.key_bits(KeyEncoding::block_id_for(0), tok.index));
        v[static_cast<std::size_t>(slots.payload())] = Dyadic(BigInt(tok.value), 0);
        try {
            set_bits(v, slots.ptr(0),
                     enc.key_bits(KeyEncoding::block_id_for(1), tok.value));
        } catch (const std::exception& e) {
            embed_error(position, std::string("bad base value (") + e.what() + ")");
        }
    } else if (tok.block == -1) {
        // Anchor: all-zero key; points at the base-value token.
        v[static_cast<std::size_t>(slots.payload())] = Dyadic(BigInt(tok.value), 0);
        set_bits(v, slots.ptr(0), enc.key_bits(KeyEncoding::block_id_for(0), 1));
        v[static_cast<std::size_t>(slots.blockint())] = Dyadic(BigInt(L + 1), 0);
    } else {
        embed_error(position, "token block outside the task vocabulary");
    }
    return v;
}

DVec embed_circuit(const CircuitEmbedLayout& lay, const Token& tok,
                   std::size_t position) {
    DVec v(static_cast<std::size_t>(lay.width), Dyadic::zero());
    v[0] = bit(1);
    if (tok.index < 0 || tok.index >= (std::int64_t{1} << lay.id_bits))
        embed_error(position, "position id out of range");
    for (int k = 0; k < lay.id_bits; ++k)
        v[static_cast<std::size_t>(1 + k)] =
            bit(static_cast<int>((tok.index >> (lay.id_bits - 1 - k)) & 1));
    std::int64_t tag = position < lay.group_tags.size()
                           ? lay.group_tags[position]
                           : 0;
    if (tag < 0 || tag >= (std::int64_t{1} << lay.tag_bits))
        embed_error(position, "group tag out of range");
    for (int k = 0; k < lay.tag_bits; ++k)
        v[static_cast<std::size_t>(1 + lay.id_bits + k)] =
            bit(static_cast<int>((tag >> (lay.tag_bits - 1 - k)) & 1));
    if (tok.value != 0 && tok.value != 1)
        embed_error(position, "circuit token value must be a bit");
    v[static_cast<std::size_t>(1 + lay.id_bits + lay.tag_bits)] = bit(static_cast<int>(tok.value));
    return v;
}

}  // namespace

DVec embed_token(const EmbedSpec& embed, const FixedFormat& fmt, int dH,
                 const Token& token, std::size_t position) {
    switch (embed.kind) {
        case EmbedKind::Zeros:
            return DVec(static_cast<std::size_t>(dH), Dyadic::zero());
        case EmbedKind::HashTable: {
            std::uint64_t h = embed.seed;
            h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(token.block)));
            h = mix64(h ^ static_cast<std::uint64_t>(token.index));
            h = mix64(h ^ static_cast<std::uint64_t>(token.value));
            BigInt span = fmt.raw_max() - fmt.raw_min() + 1;
            DVec v;
            v.reserve(static_cast<std::size_t>(dH));
            for (int k = 0; k < dH; ++k) {
                BigInt raw = BigInt(mix64(h ^ static_cast<std::uint64_t>(k))) % span +
                             fmt.raw_min();
                v.emplace_back(raw, -fmt.frac_bits);
            }
            return v;
        }
        case EmbedKind::ValueBits: {
            if (token.value < 0 || token.value >= (std::int64_t{1} << embed.width))
                embed_error(position, "token value outside the embed vocabulary");
            DVec v(static_cast<std::size_t>(dH), Dyadic::zero());
            for (int k = 0; k < embed.width; ++k)
                v[static_cast<std::size_t>(embed.offset + k)] =
                    bit(static_cast<int>((token.value >> (embed.width - 1 - k)) & 1));
            v[static_cast<std::size_t>(embed.offset + embed.width)] = bit(1);
            return v;
        }
        case EmbedKind::Compose: {
            if (!embed.compose) embed_error(position, "missing compose layout");
            switch (embed.compose->mode) {
                case ComposeMode::Depth:
                    return embed_depth(*embed.compose, token, position);
                case ComposeMode::Cot:
                    return embed_cot(*embed.compose, token, position);
                case ComposeMode::Encoder:
                    return embed_encoder(*embed.compose, token, position);
            }
            embed_error(position, "unknown compose mode");
        }
        case EmbedKind::Circuit:
            if (!embed.circuit) embed_error(position, "missing circuit layout");
            return embed_circuit(*embed.circuit, token, position);
    }
    throw ValidationError("embed: unknown embed kind");
}

namespace {

std::int64_t exact_slot_int(const Vec& x, int slot, const FixedFormat& fmt,
                            const char* what) {
    if (slot < 0 || slot >= static_cast<int>(x.size()))
        throw ValidationError(std::string("decode: ") + what + " slot out of range");
    BigInt raw = x[static_cast<std::size_t>(slot)];
    BigInt unit = shl(BigInt(1), fmt.frac_bits);
    if (raw % unit != 0)
        throw ValidationError(std::string("decode: ") + what + " is not an integer");
    BigInt val = raw / unit;
    if (val < std::numeric_limits<std::int64_t>::min() ||
        val > std::numeric_limits<std::int64_t>::max())
        throw ValidationError(std::string("decode: ") + what + " out of token range");
    return val.convert_to<std::int64_t>();
}

}  // namespace

Token decode_vector(const DecodeSpec& decode, const FixedFormat& fmt, const Vec& x,
                    int step) {
    switch (decode.kind) {
        case DecodeKind::ReadSlot: {
            std::int64_t v = exact_slot_int(x, decode.slot, fmt, "answer");
            return Token{decode.out_block, step, v};
        }
        case DecodeKind::CotNext: {
            if (decode.head_width < 1)
                throw ValidationError("decode: head width must be >= 1");
            int i_slot = (step - 1) * decode.head_width;
            int w_slot = (step == 1 ? 1 : 0) * decode.head_width;
            std::int64_t i = exact_slot_int(x, i_slot, fmt, "chain value");
            std::int64_t wp = exact_slot_int(x, w_slot, fmt, "query digits");
            return Token{decode.out_block, step, wp * decode.pack_base + i};
        }
    }
    throw ValidationError("decode: unknown decode kind");
}

}  // namespace fclab
