#include "doctest.h"

#include "fclab/engine.hpp"
#include "fclab/rng.hpp"

#include <algorithm>

using namespace fclab;

namespace {

Mat zeros(int rows, int cols) {
    return Mat(static_cast<std::size_t>(rows), Vec(static_cast<std::size_t>(cols), 0));
}

Mat scaled_identity(int rows, int cols, FixedRaw raw) {
    Mat m = zeros(rows, cols);
    for (int i = 0; i < std::min(rows, cols); ++i)
        m[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = raw;
    return m;
}

Mat random_matrix(int rows, int cols, const FixedFormat& fmt, Rng& rng) {
    Mat m = zeros(rows, cols);
    auto lo = fmt.raw_min().convert_to<std::int64_t>();
    auto hi = fmt.raw_max().convert_to<std::int64_t>();
    for (auto& row : m)
        for (auto& e : row) e = rng.range(lo, hi);
    return m;
}

TransformerSpec random_spec(std::uint64_t seed, int L, int H, int d, int p) {
    Rng rng(seed);
    TransformerSpec spec;
    spec.dims = ModelDims{H, d, p, L};
    int fb = static_cast<int>(rng.range(1, std::max(1, p - 2)));
    spec.format = FixedFormat{p - 1 - fb, fb};
    spec.score_format = default_score_format(spec.dims, spec.format);
    spec.mask = rng.coin() ? MaskMode::Causal : MaskMode::Full;
    spec.embed.kind = EmbedKind::HashTable;
    spec.embed.seed = rng.next_u64();
    const int dH = d * H;
    for (int l = 0; l < L; ++l) {
        Layer layer;
        for (int h = 0; h < H; ++h) {
            AttentionHead head;
            head.base.Q = random_matrix(d, dH, spec.format, rng);
            head.base.K = random_matrix(d, dH, spec.format, rng);
            head.base.V = random_matrix(d, dH, spec.format, rng);
            layer.heads.push_back(head);
        }
        MlpOp round;
        round.kind = MlpOpKind::RoundInt;
        round.begin = 0;
        round.end = rng.coin() ? dH : 0;
        layer.mlp.ops.push_back(round);
        spec.layers.push_back(layer);
    }
    return spec;
}

Prompt simple_prompt(const std::vector<std::int64_t>& values) {
    Prompt p;
    for (std::size_t i = 0; i < values.size(); ++i) {
        p.tokens.push_back(Token{1, static_cast<std::int64_t>(i + 1), values[i]});
        p.blocks.push_back(BlockSpan{1, i, 1});
    }
    return p;
}

}  // namespace

TEST_CASE("mlp ops: affine, round, step, set_const") {
    DVec v{Dyadic(BigInt(3), -1), Dyadic(BigInt(-5), -2)};  // 1.5, -1.25
    MlpOp aff;
    aff.kind = MlpOpKind::Affine;
    aff.W = {{Dyadic(BigInt(2), 0), Dyadic(BigInt(0), 0)},
             {Dyadic(BigInt(1), 0), Dyadic(BigInt(1), 0)}};
    aff.b = {Dyadic(BigInt(1), -2), Dyadic::zero()};
    mlp_apply({aff}, v);
    CHECK(v[0].to_rational() == BigRat(13, 4));  // 2*1.5 + 0.25
    CHECK(v[1].to_rational() == BigRat(1, 4));   // 1.5 - 1.25

    MlpOp round;
    round.kind = MlpOpKind::RoundInt;
    round.begin = 0;
    round.end = 2;
    mlp_apply({round}, v);
    CHECK(v[0].to_rational() == BigRat(3));
    CHECK(v[1].to_rational() == BigRat(0));

    MlpOp step;
    step.kind = MlpOpKind::Step;
    step.begin = 0;
    step.end = 2;
    DVec s{Dyadic(BigInt(-1), -3), Dyadic::zero()};
    mlp_apply({step}, s);
    CHECK(s[0].to_rational() == BigRat(0));
    CHECK(s[1].to_rational() == BigRat(1));  // step(0) = 1

    MlpOp sc;
    sc.kind = MlpOpKind::SetConst;
    sc.begin = 1;
    sc.value = Dyadic(BigInt(7), 0);
    mlp_apply({sc}, s);
    CHECK(s[1].to_rational() == BigRat(7));
}

TEST_CASE("mlp ops: to_bits and divmod") {
    DVec v{Dyadic(BigInt(11), 0), Dyadic::zero(), Dyadic::zero(), Dyadic::zero(),
           Dyadic::zero(), Dyadic::zero()};
    MlpOp tb;
    tb.kind = MlpOpKind::ToBits;
    tb.src = 0;
    tb.width = 4;
    tb.begin = 1;
    mlp_apply({tb}, v);
    CHECK(v[1].to_rational() == BigRat(1));  // 11 = 1011
    CHECK(v[2].to_rational() == BigRat(0));
    CHECK(v[3].to_rational() == BigRat(1));
    CHECK(v[4].to_rational() == BigRat(1));

    MlpOp dm;
    dm.kind = MlpOpKind::DivmodConst;
    dm.src = 0;
    dm.divisor = 4;
    dm.q_dst = 5;
    dm.r_dst = 0;
    mlp_apply({dm}, v);
    CHECK(v[5].to_rational() == BigRat(2));
    CHECK(v[0].to_rational() == BigRat(3));

    // Non-integer input is a hard error.
    DVec bad{Dyadic(BigInt(1), -1)};
    MlpOp tb2;
    tb2.kind = MlpOpKind::ToBits;
    tb2.src = 0;
    tb2.width = 1;
    tb2.begin = 0;
    CHECK_THROWS_AS(mlp_apply({tb2}, bad), ValidationError);

    DVec big{Dyadic(BigInt(16), 0), Dyadic::zero()};
    MlpOp tb3;
    tb3.kind = MlpOpKind::ToBits;
    tb3.src = 0;
    tb3.width = 4;
    tb3.begin = 1;
    CHECK_THROWS_AS(mlp_apply({tb3}, big), ValidationError);  // 16 needs 5 bits
}

TEST_CASE("mlp ops: branch on >= 1/2") {
    MlpOp set1;
    set1.kind = MlpOpKind::SetConst;
    set1.begin = 1;
    set1.value = Dyadic(BigInt(1), 0);
    MlpOp set2;
    set2.kind = MlpOpKind::SetConst;
    set2.begin = 1;
    set2.value = Dyadic(BigInt(2), 0);
    MlpOp br;
    br.kind = MlpOpKind::Branch;
    br.src = 0;
    br.then_ops = {set1};
    br.else_ops = {set2};

    DVec hi{Dyadic(BigInt(1), -1), Dyadic::zero()};  // exactly 1/2: taken
    mlp_apply({br}, hi);
    CHECK(hi[1].to_rational() == BigRat(1));
    DVec lo{Dyadic(BigInt(3), -3), Dyadic::zero()};  // 0.375: not taken
    mlp_apply({br}, lo);
    CHECK(lo[1].to_rational() == BigRat(2));
}

TEST_CASE("single token: attention output is quantize(V x)") {
    TransformerSpec spec;
    spec.dims = ModelDims{1, 4, 12, 1};
    spec.format = FixedFormat{4, 3};
    spec.score_format = default_score_format(spec.dims, spec.format);
    spec.embed.kind = EmbedKind::ValueBits;
    spec.embed.offset = 0;
    spec.embed.width = 3;
    Layer layer;
    AttentionHead head;
    head.base.Q = zeros(4, 4);
    head.base.K = zeros(4, 4);
    Rng rng(7);
    head.base.V = random_matrix(4, 4, spec.format, rng);
    layer.heads.push_back(head);
    spec.layers.push_back(layer);

    Prompt p = simple_prompt({5});
    auto acts = forward(spec, p);
    REQUIRE(acts.x.size() == 2);

    // 5 = 101 -> bits at slots 0..2, marker at slot 3.
    DVec x0{Dyadic(BigInt(1), 0), Dyadic::zero(), Dyadic(BigInt(1), 0), Dyadic(BigInt(1), 0)};
    SatFlag sat;
    Vec expect = quantize_vec(mat_vec(head.base.V, x0, spec.format), spec.format, sat);
    CHECK(acts.y[0][0] == expect);
    CHECK(acts.x[1][0] == expect);  // empty MLP program
}

TEST_CASE("equal scores average values exactly") {
    TransformerSpec spec;
    spec.dims = ModelDims{1, 2, 12, 1};
    spec.format = FixedFormat{4, 4};
    spec.score_format = default_score_format(spec.dims, spec.format);
    spec.mask = MaskMode::Full;
    spec.embed.kind = EmbedKind::ValueBits;
    spec.embed.offset = 0;
    spec.embed.width = 1;
    Layer layer;
    AttentionHead head;
    head.base.Q = zeros(2, 2);
    head.base.K = zeros(2, 2);  // all scores 0 -> uniform weights
    head.base.V = scaled_identity(2, 2, 1 << 4);
    layer.heads.push_back(head);
    spec.layers.push_back(layer);

    // One block of 4 tokens with bit values 1,0,1,0: average = 1/2 exactly.
    Prompt p;
    for (int i = 0; i < 4; ++i)
        p.tokens.push_back(Token{1, i + 1, (i % 2 == 0) ? 1 : 0});
    p.blocks.push_back(BlockSpan{1, 0, 4});

    auto acts = forward(spec, p, ForwardOptions{true, 1});
    for (int i = 0; i < 4; ++i) {
        CHECK(acts.x[1][static_cast<std::size_t>(i)][0] == 8);   // 1/2 at fb=4
        CHECK(acts.x[1][static_cast<std::size_t>(i)][1] == 16);  // marker avg = 1
    }
    // Exact attention probabilities: uniform 1/4.
    for (const auto& row : acts.alpha[0][0])
        for (const auto& a : row) CHECK(a == BigRat(1, 4));
}

TEST_CASE("attention rows sum to exactly 1") {
    auto spec = random_spec(101, 2, 2, 3, 10);
    Prompt p;
    p.tokens = {Token{1, 1, 3}, Token{1, 2, 1}, Token{2, 1, 2}, Token{2, 2, 7},
                Token{2, 3, 4}, Token{3, 1, 6}};
    p.blocks = {BlockSpan{1, 0, 2}, BlockSpan{2, 2, 3}, BlockSpan{3, 5, 1}};
    auto acts = forward(spec, p, ForwardOptions{true, 1});
    for (const auto& per_head : acts.alpha)
        for (const auto& per_pos : per_head)
            for (std::size_t i = 0; i < per_pos.size(); ++i) {
                BigRat sum(0);
                for (const auto& a : per_pos[i]) sum += a;
                CHECK(sum == BigRat(1));
            }
}

TEST_CASE("causal mask: later tokens cannot influence earlier positions") {
    auto spec = random_spec(55, 2, 1, 4, 12);
    spec.mask = MaskMode::Causal;
    Prompt a = simple_prompt({1, 2, 3, 4, 5});
    Prompt b = simple_prompt({1, 2, 3, 4, 6});  // only the last token differs
    auto xa = forward(spec, a);
    auto xb = forward(spec, b);
    for (std::size_t l = 0; l < xa.x.size(); ++l)
        for (std::size_t i = 0; i + 1 < 5; ++i)
            CHECK(xa.x[l][i] == xb.x[l][i]);
}

TEST_CASE("full mask: permuting singleton blocks permutes outputs") {
    auto spec = random_spec(77, 2, 2, 3, 11);
    spec.mask = MaskMode::Full;
    auto value_prompt = [](std::vector<std::int64_t> vals) {
        Prompt p;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            p.tokens.push_back(Token{1, vals[i], vals[i]});  // identity = value
            p.blocks.push_back(BlockSpan{1, i, 1});
        }
        return p;
    };
    Prompt fwd = value_prompt({4, 9, 2, 7});
    Prompt rev = value_prompt({7, 2, 9, 4});
    auto xa = forward(spec, fwd);
    auto xb = forward(spec, rev);
    for (std::size_t l = 0; l < xa.x.size(); ++l)
        for (std::size_t i = 0; i < 4; ++i) CHECK(xa.x[l][i] == xb.x[l][3 - i]);
}

TEST_CASE("parallel evaluation is bit-identical to sequential") {
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        auto spec = random_spec(seed, 2, 2, 3, 12);
        Prompt p = simple_prompt({1, 5, 2, 8, 3, 9, 4, 6, 7, 0, 11, 13});
        auto seq = forward(spec, p, ForwardOptions{false, 1});
        auto par = forward(spec, p, ForwardOptions{false, 4});
        CHECK(seq.x == par.x);
        CHECK(seq.y == par.y);
        CHECK(seq.saturated == par.saturated);
    }
}

TEST_CASE("forward is deterministic") {
    auto spec = random_spec(31, 3, 2, 2, 9);
    Prompt p = simple_prompt({2, 4, 6, 1, 3});
    auto a = forward(spec, p);
    auto b = forward(spec, p);
    CHECK(a.x == b.x);
    CHECK(a.saturated == b.saturated);
}

TEST_CASE("saturation is reported and sticky") {
    TransformerSpec spec;
    spec.dims = ModelDims{1, 2, 8, 1};
    spec.format = FixedFormat{1, 1};  // max value 1.5
    spec.score_format = default_score_format(spec.dims, spec.format);
    spec.embed.kind = EmbedKind::ValueBits;
    spec.embed.offset = 0;
    spec.embed.width = 1;
    Layer layer;
    AttentionHead head;
    head.base.Q = zeros(2, 2);
    head.base.K = zeros(2, 2);
    head.base.V = zeros(2, 2);
    head.base.V[0][0] = 3;  // 1.5
    head.base.V[0][1] = 3;  // bit + marker = 2 -> 1.5 * 2 = 3 > max
    layer.heads.push_back(head);
    spec.layers.push_back(layer);
    Prompt p = simple_prompt({1});
    auto acts = forward(spec, p);
    CHECK(acts.saturated);
    CHECK(acts.x[1][0][0] == 3);  // clipped at raw_max
}

TEST_CASE("per-position parameter overrides apply on the right side") {
    // Base V reads the value bit; the override at source position 0 negates
    // it. Query position 1 attends over both; with zero scores the average
    // changes only through position 0's V override.
    TransformerSpec spec;
    spec.dims = ModelDims{1, 2, 12, 1};
    spec.format = FixedFormat{4, 2};
    spec.score_format = default_score_format(spec.dims, spec.format);
    spec.mask = MaskMode::Full;
    spec.embed.kind = EmbedKind::ValueBits;
    spec.embed.offset = 0;
    spec.embed.width = 1;
    Layer layer;
    AttentionHead head;
    head.base.Q = zeros(2, 2);
    head.base.K = zeros(2, 2);
    head.base.V = scaled_identity(2, 2, 1 << 2);
    HeadParams neg = head.base;
    neg.V = scaled_identity(2, 2, -(1 << 2));
    head.overrides[0] = neg;
    layer.heads.push_back(head);
    spec.layers.push_back(layer);

    Prompt p;
    p.tokens = {Token{1, 1, 1}, Token{1, 2, 1}};
    p.blocks = {BlockSpan{1, 0, 2}};
    auto acts = forward(spec, p);
    // Sources: pos 0 gives (-1,-1), pos 1 gives (1,1); average (0,0).
    CHECK(acts.x[1][1][0] == 0);
    CHECK(acts.x[1][1][1] == 0);
}

TEST_CASE("per-position mlp overrides") {
    auto spec = random_spec(91, 1, 1, 3, 10);
    MlpOp sc;
    sc.kind = MlpOpKind::SetConst;
    sc.begin = 0;
    sc.value = Dyadic(BigInt(1), 0);  // representable in every format
    spec.layers[0].mlp.overrides[1] = {sc};
    Prompt p = simple_prompt({1, 2, 3});
    auto acts = forward(spec, p);
    CHECK(acts.x[1][1][0] == (BigInt(1) << spec.format.frac_bits));
}

TEST_CASE("generate_with_cot appends tokens and reports decode failures") {
    TransformerSpec spec;
    spec.dims = ModelDims{1, 2, 10, 1};
    spec.format = FixedFormat{4, 2};
    spec.score_format = default_score_format(spec.dims, spec.format);
    spec.embed.kind = EmbedKind::Zeros;
    Layer layer;
    AttentionHead head;
    head.base.Q = zeros(2, 2);
    head.base.K = zeros(2, 2);
    head.base.V = zeros(2, 2);
    layer.heads.push_back(head);
    MlpOp sc;
    sc.kind = MlpOpKind::SetConst;
    sc.begin = 0;
    sc.value = Dyadic(BigInt(5), 0);
    layer.mlp.ops.push_back(sc);
    spec.layers.push_back(layer);

    Prompt p = simple_prompt({0, 0});
    DecodeSpec dec;
    dec.kind = DecodeKind::ReadSlot;
    dec.slot = 0;
    dec.out_block = 9;
    auto toks = generate_with_cot(spec, p, 3, dec);
    REQUIRE(toks.size() == 3);
    for (int s = 0; s < 3; ++s) {
        CHECK(toks[static_cast<std::size_t>(s)] == Token{9, s + 1, 5});
    }

    // A decode slot holding a non-integer must fail with the step number.
    spec.layers[0].mlp.ops[0].value = Dyadic(BigInt(1), -1);
    try {
        generate_with_cot(spec, p, 2, dec);
        FAIL("expected decode error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    }
}

TEST_CASE("spec validation rejects malformed models") {
    auto spec = random_spec(5, 1, 1, 2, 8);
    Prompt p = simple_prompt({1});

    auto broken = spec;
    broken.layers.clear();
    CHECK_THROWS_AS(forward(broken, p), ValidationError);

    broken = spec;
    broken.layers[0].heads[0].base.Q[0][0] = broken.format.raw_max() + 1;
    CHECK_THROWS_AS(forward(broken, p), ValidationError);

    broken = spec;
    broken.format = FixedFormat{20, 20};  // wider than p
    CHECK_THROWS_AS(forward(broken, p), ValidationError);

    broken = spec;
    broken.layers[0].heads.push_back(broken.layers[0].heads[0]);
    CHECK_THROWS_AS(forward(broken, p), ValidationError);

    // Blocks that do not tile the prompt.
    auto bad = p;
    bad.blocks[0].len = 2;
    CHECK_THROWS_AS(forward(spec, bad), ValidationError);
}

TEST_CASE("default score format fits the wire budget") {
    for (int p = 2; p <= 24; ++p) {
        ModelDims dims{2, 3, p, 1};
        FixedFormat fmt{std::max(1, p / 2), std::max(0, p - 2 - std::max(1, p / 2))};
        auto sf = default_score_format(dims, fmt);
        CHECK(sf.total_bits() <= p);
        CHECK(sf.int_bits >= 0);
        CHECK(sf.frac_bits >= 0);
    }
}

TEST_CASE("hash embedding depends on the token, not the position") {
    EmbedSpec e;
    e.kind = EmbedKind::HashTable;
    e.seed = 42;
    FixedFormat fmt{3, 3};
    Token t{2, 5, 9};
    auto a = embed_token(e, fmt, 6, t, 0);
    auto b = embed_token(e, fmt, 6, t, 17);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(cmp(a[i], b[i]) == 0);
    Token u{2, 5, 8};
    auto c = embed_token(e, fmt, 6, u, 0);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (cmp(a[i], c[i]) != 0) differs = true;
    CHECK(differs);
}
