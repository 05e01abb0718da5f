#include "doctest.h"

#include "fclab/builders.hpp"
#include "fclab/comm.hpp"
#include "fclab/rng.hpp"

#include <map>
#include <set>

using namespace fclab;

namespace {

TaskParams make_params(int L, std::int64_t m, std::vector<std::int64_t> n) {
    TaskParams p;
    p.L = L;
    p.m = m;
    p.n = std::move(n);
    return p;
}

// Small random causal spec over the task vocabulary (hash embeddings).
TransformerSpec random_task_spec(std::uint64_t seed, int L_layers, int H, int d,
                                 int p) {
    Rng rng(seed);
    TransformerSpec spec;
    spec.dims = ModelDims{H, d, p, L_layers};
    const int fb = static_cast<int>(rng.range(1, std::max(1, p - 2)));
    spec.format = FixedFormat{p - 1 - fb, fb};
    spec.score_format = default_score_format(spec.dims, spec.format);
    spec.mask = MaskMode::Causal;
    spec.embed.kind = EmbedKind::HashTable;
    spec.embed.seed = rng.next_u64();
    const int dH = d * H;
    auto rnd_mat = [&] {
        Mat m(static_cast<std::size_t>(d), Vec(static_cast<std::size_t>(dH)));
        const std::int64_t hi = (std::int64_t{1} << (spec.format.int_bits +
                                                     spec.format.frac_bits)) -
                                1;
        for (auto& row : m)
            for (auto& e : row) e = BigInt(rng.range(-hi - 1, hi));
        return m;
    };
    for (int l = 0; l < L_layers; ++l) {
        Layer layer;
        for (int h = 0; h < H; ++h) {
            AttentionHead head;
            head.base.Q = rnd_mat();
            head.base.K = rnd_mat();
            head.base.V = rnd_mat();
            layer.heads.push_back(head);
        }
        if (rng.coin()) {
            MlpOp op;
            op.kind = MlpOpKind::RoundInt;
            op.begin = 0;
            op.end = dH;
            layer.mlp.ops.push_back(op);
        }
        spec.layers.push_back(layer);
    }
    spec.validate();
    return spec;
}

BitString zeros(std::int64_t bits) {
    BitString b;
    for (std::int64_t i = 0; i < bits; ++i) b.append_bit(0);
    return b;
}

// Order-sensitive digest of a player state, for hash-respond protocols.
std::uint64_t state_digest(const PlayerState& s) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    mix(static_cast<std::uint64_t>(s.player));
    for (const auto& t : s.input) {
        mix(static_cast<std::uint64_t>(t.block));
        mix(static_cast<std::uint64_t>(t.index));
        mix(static_cast<std::uint64_t>(t.value));
    }
    for (const auto& epoch : s.received)
        for (const auto& msg : epoch) {
            mix(static_cast<std::uint64_t>(msg.bit_count()));
            for (auto b : msg.bytes()) mix(b);
        }
    return h;
}

// A protocol whose every message is a digest of both endpoint states.
ProtocolDef hash_protocol(int epochs, int top, std::int64_t mbits) {
    ProtocolDef def;
    def.epochs = epochs;
    def.top_player = top;
    def.B = mbits;  // generous budget
    def.m.assign(static_cast<std::size_t>(def.players()), 1);
    def.msg_bits.assign(static_cast<std::size_t>(def.players()), mbits);
    def.respond = [mbits](int epoch, int j, int i, const PlayerState& Xj,
                          const PlayerState& Xi) {
        std::uint64_t h = state_digest(Xj) ^ (state_digest(Xi) * 31) ^
                          (static_cast<std::uint64_t>(epoch) << 32) ^
                          (static_cast<std::uint64_t>(j + 1) << 16) ^
                          static_cast<std::uint64_t>(i + 1);
        BitString b;
        for (std::int64_t k = 0; k < mbits; ++k)
            b.append_bit(static_cast<int>((h >> (k % 64)) & 1));
        return b;
    };
    def.output = [](const PlayerState& X) {
        BitString b;
        b.append_field(BigInt(static_cast<long long>(state_digest(X) & 0x7fffffff)),
                       32);
        return b;
    };
    return def;
}

std::vector<std::vector<Token>> unit_inputs(const ProtocolDef& def) {
    std::vector<std::vector<Token>> inputs(static_cast<std::size_t>(def.players()));
    for (int s = 0; s < def.players(); ++s)
        inputs[static_cast<std::size_t>(s)] =
            std::vector<Token>{Token{s - 1, 1, s + 10}};
    return inputs;
}

}  // namespace

TEST_CASE("bit strings round-trip two's-complement fields") {
    BitString b;
    b.append_field(BigInt(5), 4);
    b.append_field(BigInt(-3), 4);
    b.append_field(BigInt(-128), 8);
    b.append_field(BigInt(127), 8);
    b.append_field(BigInt(0), 1);
    b.append_field(BigInt(-1), 1);
    CHECK(b.bit_count() == 26);
    std::int64_t cur = 0;
    CHECK(b.read_field(cur, 4) == 5);
    CHECK(b.read_field(cur, 4) == -3);
    CHECK(b.read_field(cur, 8) == -128);
    CHECK(b.read_field(cur, 8) == 127);
    CHECK(b.read_field(cur, 1) == 0);
    CHECK(b.read_field(cur, 1) == -1);
    CHECK(cur == 26);
    CHECK_THROWS_AS(b.read_field(cur, 1), ValidationError);
    BitString c;
    CHECK_THROWS_AS(c.append_field(BigInt(8), 4), ValidationError);
    CHECK_THROWS_AS(c.append_field(BigInt(-9), 4), ValidationError);

    BitString d;
    d.append_field(BigInt(-91), 8);  // bit pattern 0xa5
    CHECK(d.hex() == "a5");
    BitString e;
    e.append(b);
    CHECK(e == b);
}

TEST_CASE("echo protocol: player -1 learns nothing beyond its input") {
    ProtocolDef def;
    def.epochs = 2;
    def.top_player = 2;
    def.B = 4;
    def.m.assign(4, 1);
    def.msg_bits.assign(4, 8);
    def.respond = [](int, int, int, const PlayerState&, const PlayerState&) {
        return zeros(8);
    };
    def.output = [](const PlayerState& X) {
        BitString b;
        b.append_field(BigInt(X.input[0].value), 16);
        return b;
    };
    auto inputs = unit_inputs(def);
    ProtocolRun run = run_protocol(def, inputs);
    std::int64_t cur = 0;
    CHECK(run.answer.read_field(cur, 16) == 10);  // player -1 carries 10
    // 2 epochs, receivers -1..1 with 3,2,1 senders.
    CHECK(run.transcripts.size() == 12);
}

TEST_CASE("forwarding protocol reconstructs player 1's input at player -1") {
    ProtocolDef def;
    def.epochs = 1;
    def.top_player = 1;
    def.B = 8;
    def.m.assign(3, 1);
    def.msg_bits.assign(3, 16);
    def.respond = [](int, int j, int, const PlayerState& Xj, const PlayerState&) {
        BitString b;
        b.append_field(BigInt(j == 1 ? Xj.input[0].value : 0), 16);
        return b;
    };
    def.output = [](const PlayerState& X) {
        // Epoch 1, senders to -1 ascending: player 0 then player 1.
        std::int64_t cur = 0;
        BigInt v = X.received[0][1].read_field(cur, 16);
        BitString b;
        b.append_field(v, 16);
        return b;
    };
    auto inputs = unit_inputs(def);
    inputs[2][0].value = 777;
    ProtocolRun run = run_protocol(def, inputs);
    std::int64_t cur = 0;
    CHECK(run.answer.read_field(cur, 16) == 777);
}

TEST_CASE("states are monotone and grow by exactly one epoch of messages") {
    ProtocolDef def = hash_protocol(3, 2, 12);
    ProtocolRun run = run_protocol(def, unit_inputs(def));
    REQUIRE(run.states.size() == 4);
    for (int l = 0; l <= 3; ++l)
        for (int s = 0; s < def.players(); ++s) {
            const auto& st = run.states[static_cast<std::size_t>(l)]
                                       [static_cast<std::size_t>(s)];
            CHECK(static_cast<int>(st.received.size()) == l);
            CHECK(static_cast<int>(st.received.empty()
                                       ? 0
                                       : st.received.back().size()) ==
                  (l == 0 ? 0 : def.top_player - (s - 1)));
            // Prefix of the previous state: monotone information.
            if (l > 0) {
                const auto& prev = run.states[static_cast<std::size_t>(l - 1)]
                                             [static_cast<std::size_t>(s)];
                CHECK(st.input == prev.input);
                for (std::size_t e = 0; e < prev.received.size(); ++e)
                    CHECK(st.received[e] == prev.received[e]);
            }
        }
}

TEST_CASE("wrong-size responses are named by epoch, sender, receiver") {
    ProtocolDef def = hash_protocol(2, 1, 8);
    def.respond = [](int epoch, int j, int i, const PlayerState&,
                     const PlayerState&) {
        if (epoch == 2 && j == 1 && i == 0) return zeros(5);
        return zeros(8);
    };
    try {
        run_protocol(def, unit_inputs(def));
        FAIL("expected a protocol violation");
    } catch (const ProtocolViolationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("epoch 2") != std::string::npos);
        CHECK(msg.find("sender 1") != std::string::npos);
        CHECK(msg.find("receiver 0") != std::string::npos);
    }
}

TEST_CASE("declared message sizes above the model budget are rejected") {
    ProtocolDef def = hash_protocol(1, 1, 8);
    def.B = 2;                       // budget 2*B*m = 4 bits
    def.msg_bits.assign(3, 8);       // declared 8
    CHECK_THROWS_AS(run_protocol(def, unit_inputs(def)), ProtocolViolationError);
}

TEST_CASE("reduction: protocol answer is bit-identical to the forward pass") {
    int checked = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        TaskParams params = (seed % 2 == 0) ? make_params(2, 2, {2})
                                            : make_params(1, 3, {});
        Rng rng(seed * 97);
        TransformerSpec spec = random_task_spec(
            seed, static_cast<int>(rng.range(1, 3)),
            static_cast<int>(rng.range(1, 2)), static_cast<int>(rng.range(1, 4)),
            static_cast<int>(rng.range(4, 8)));
        ProtocolDef def = reduce_transformer(spec, params);
        CHECK(def.epochs == spec.dims.L);
        for (std::uint64_t inst_seed = 1; inst_seed <= 5; ++inst_seed) {
            TaskInstance inst = generate(params, inst_seed);
            ProtocolRun run = run_protocol(def, protocol_inputs(inst));
            Activations acts = forward(spec, tokenize(inst));
            BitString direct = serialize_vec(acts.x.back().back(), spec.dims.p);
            CHECK(run.answer == direct);
            ++checked;
        }
    }
    CHECK(checked == 25);
}

TEST_CASE("reduction: exact transcript size formula and budget") {
    TaskParams params = make_params(2, 3, {2});
    TransformerSpec spec = random_task_spec(11, 2, 2, 3, 7);
    ProtocolDef def = reduce_transformer(spec, params);
    auto N = params.domain_sizes();
    const std::int64_t H = spec.dims.H, d = spec.dims.d, p = spec.dims.p;
    CHECK(def.B == H * d * p);
    for (int i = -1; i <= params.L; ++i) {
        std::int64_t mi = (i >= 1) ? N[static_cast<std::size_t>(i - 1)] : 1;
        CHECK(def.m[static_cast<std::size_t>(i + 1)] == mi);
        CHECK(def.msg_bits[static_cast<std::size_t>(i + 1)] ==
              mi * H * (d * p + p));
        CHECK(def.msg_bits[static_cast<std::size_t>(i + 1)] <= 2 * def.B * mi);
    }
    // Every transcript in a run has exactly the declared size.
    ProtocolRun run = run_protocol(def, protocol_inputs(generate(params, 1)));
    for (const auto& t : run.transcripts)
        CHECK(t.bits.bit_count() ==
              def.msg_bits[static_cast<std::size_t>(t.receiver + 1)]);
}

TEST_CASE("reduction handles multi-layer specs deeper than the task depth") {
    TaskParams params = make_params(1, 2, {});
    TransformerSpec spec = random_task_spec(23, 3, 1, 2, 6);
    ProtocolDef def = reduce_transformer(spec, params);
    CHECK(def.epochs == 3);
    TaskInstance inst = generate(params, 4);
    ProtocolRun run = run_protocol(def, protocol_inputs(inst));
    Activations acts = forward(spec, tokenize(inst));
    CHECK(run.answer == serialize_vec(acts.x.back().back(), spec.dims.p));
}

TEST_CASE("transcript locality: lower players' inputs never reach a message") {
    TaskParams params = make_params(2, 2, {2});
    TransformerSpec spec = random_task_spec(31, 2, 1, 2, 6);
    ProtocolDef def = reduce_transformer(spec, params);

    TaskInstance a = generate(params, 8);
    for (int trial = 0; trial < 20; ++trial) {
        TaskInstance b = a;
        // Perturb only players -1 and 0 (query digits and base value).
        Rng rng(static_cast<std::uint64_t>(trial) + 100);
        b.w[0] = rng.range(1, params.n[0]);
        b.z0 = rng.range(1, params.m);
        ProtocolRun ra = run_protocol(def, protocol_inputs(a));
        ProtocolRun rb = run_protocol(def, protocol_inputs(b));
        REQUIRE(ra.transcripts.size() == rb.transcripts.size());
        for (std::size_t t = 0; t < ra.transcripts.size(); ++t) {
            // Messages to players >= 1 are functions of players [1:L] only.
            if (ra.transcripts[t].receiver >= 1)
                CHECK(ra.transcripts[t].bits == rb.transcripts[t].bits);
        }
        // Messages to player 0 are invariant under the query digits alone.
        TaskInstance c = a;
        c.w[0] = rng.range(1, params.n[0]);
        ProtocolRun rc = run_protocol(def, protocol_inputs(c));
        for (std::size_t t = 0; t < ra.transcripts.size(); ++t)
            if (ra.transcripts[t].receiver >= 0)
                CHECK(ra.transcripts[t].bits == rc.transcripts[t].bits);
    }
}

TEST_CASE("locality also holds for arbitrary protocols by construction") {
    ProtocolDef def = hash_protocol(2, 2, 10);
    auto inputs = unit_inputs(def);
    ProtocolRun ra = run_protocol(def, inputs);
    for (int trial = 0; trial < 10; ++trial) {
        auto perturbed = inputs;
        perturbed[0][0].value = 500 + trial;  // player -1 only
        ProtocolRun rb = run_protocol(def, perturbed);
        for (std::size_t t = 0; t < ra.transcripts.size(); ++t)
            if (ra.transcripts[t].receiver >= 0)
                CHECK(ra.transcripts[t].bits == rb.transcripts[t].bits);
    }
}

TEST_CASE("fooling pair found under a constant transcript, none when forwarded") {
    // Family: player 1 (top) takes 8 different single-token inputs, oracle
    // answer = the token value. Constant transcripts put everyone in one
    // bucket; forwarding the value makes views injective.
    ProtocolDef constant = hash_protocol(1, 1, 6);
    constant.respond = [](int, int, int, const PlayerState&, const PlayerState&) {
        return zeros(6);
    };
    std::vector<std::vector<Token>> family;
    for (int v = 0; v < 8; ++v)
        family.push_back(std::vector<Token>{Token{1, 1, v}});
    auto oracle = [&family](std::size_t k) { return family[k][0].value; };

    auto pair = find_fooling_pair(constant, unit_inputs(constant), family, oracle);
    REQUIRE(pair.has_value());
    CHECK(pair->index_a == 0);
    CHECK(pair->index_b == 1);
    CHECK(pair->answer_a != pair->answer_b);

    // Replay both certified inputs: identical views, different answers.
    auto replay = [&](std::size_t k) {
        auto inputs = unit_inputs(constant);
        inputs[2] = family[k];
        return view_for(run_protocol(constant, inputs), -1);
    };
    CHECK(replay(pair->index_a) == replay(pair->index_b));
    CHECK(replay(pair->index_a) == pair->shared_view);

    ProtocolDef forwarding = hash_protocol(1, 1, 6);
    forwarding.respond = [](int, int j, int, const PlayerState& Xj,
                            const PlayerState&) {
        BitString b;
        b.append_field(BigInt(j == 1 ? Xj.input[0].value : 0), 6);
        return b;
    };
    CHECK_FALSE(
        find_fooling_pair(forwarding, unit_inputs(forwarding), family, oracle)
            .has_value());
}

TEST_CASE("fooling search is thread-count invariant") {
    ProtocolDef def = hash_protocol(1, 1, 4);
    std::vector<std::vector<Token>> family;
    for (int v = 0; v < 40; ++v)
        family.push_back(std::vector<Token>{Token{1, 1, v % 7}});
    auto oracle = [&family](std::size_t k) { return family[k][0].value % 3; };
    auto p1 = find_fooling_pair(def, unit_inputs(def), family, oracle, 1);
    auto p4 = find_fooling_pair(def, unit_inputs(def), family, oracle, 4);
    REQUIRE(p1.has_value() == p4.has_value());
    if (p1) {
        CHECK(p1->index_a == p4->index_a);
        CHECK(p1->index_b == p4->index_b);
        CHECK(p1->shared_view == p4->shared_view);
    }
}

TEST_CASE("reduced depth solver: protocol output decodes to the task answer") {
    TaskParams params = make_params(2, 2, {2});
    SolverBundle bundle = build_depth_solver(params);
    ProtocolDef def = reduce_transformer(bundle.spec, params);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        TaskInstance inst = generate(params, seed);
        ProtocolRun run = run_protocol(def, protocol_inputs(inst));
        Vec x = deserialize_vec(run.answer, bundle.spec.dims.d * bundle.spec.dims.H,
                                bundle.spec.dims.p);
        Token t = decode_vector(bundle.decode, bundle.spec.format, x, 1);
        CHECK(t.value == evaluate(inst).answer());
    }
}
