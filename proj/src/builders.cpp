#include "fclab/builders.hpp"

#include <algorithm>
#include <string>

namespace fclab {

namespace {

BigRat pow2r(int k) {
    return k >= 0 ? BigRat(shl(BigInt(1), k)) : BigRat(BigInt(1), shl(BigInt(1), -k));
}

Dyadic dy(std::int64_t v) { return Dyadic(BigInt(v), 0); }

Mat zero_mat(int rows, int cols) {
    return Mat(static_cast<std::size_t>(rows), Vec(static_cast<std::size_t>(cols), 0));
}

MlpOp zero_affine(int width) {
    MlpOp op;
    op.kind = MlpOpKind::Affine;
    op.W.assign(static_cast<std::size_t>(width),
                std::vector<Dyadic>(static_cast<std::size_t>(width), Dyadic::zero()));
    op.b.assign(static_cast<std::size_t>(width), Dyadic::zero());
    return op;
}

MlpOp identity_affine(int width) {
    MlpOp op = zero_affine(width);
    for (int i = 0; i < width; ++i)
        op.W[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = dy(1);
    return op;
}

void aff(MlpOp& op, int r, int c, const Dyadic& v) {
    op.W[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = v;
}

void clear_row(MlpOp& op, int r) {
    for (auto& e : op.W[static_cast<std::size_t>(r)]) e = Dyadic::zero();
    op.b[static_cast<std::size_t>(r)] = Dyadic::zero();
}

MlpOp round_op(int begin, int end) {
    MlpOp op;
    op.kind = MlpOpKind::RoundInt;
    op.begin = begin;
    op.end = end;
    return op;
}

// SetConst ops writing the block-id bits of `block_id` into slots
// [begin, begin + block_bits).
std::vector<MlpOp> block_id_consts(const KeyEncoding& enc, int block_id, int begin) {
    std::vector<MlpOp> ops;
    for (int k = 0; k < enc.block_bits; ++k) {
        MlpOp sc;
        sc.kind = MlpOpKind::SetConst;
        sc.begin = begin + k;
        sc.value = dy((block_id >> (enc.block_bits - 1 - k)) & 1);
        ops.push_back(sc);
    }
    return ops;
}

// ceil(ln(n)^2), used as the canonical lower bound on the retrieval scale.
std::int64_t ln_sq_ceil(std::int64_t n) {
    if (n <= 1) return 0;
    Dyadic l = log_dyadic(Dyadic(BigInt(n), 0), 32);
    BigRat sq = l.to_rational() * l.to_rational();
    BigInt num = boost::multiprecision::numerator(sq);
    BigInt den = boost::multiprecision::denominator(sq);
    BigInt q = num / den;
    if (q * den != num) q += 1;
    return q.convert_to<std::int64_t>();
}

VerifyCheck rat_check(std::string name, const BigRat& lhs, const BigRat& rhs) {
    VerifyCheck c;
    c.name = std::move(name);
    c.lhs = to_string(lhs);
    c.cmp = "<=";
    c.rhs = to_string(rhs);
    c.pass = lhs <= rhs;
    return c;
}

struct Sizing {
    FixedFormat fmt;
    FixedFormat score_fmt;
    int p = 0;
    FixedRaw one = 0;
    std::int64_t sigma = 0;
    FixedRaw scale_raw = 0;
    MarginReport margins;
};

// Chooses formats and the retrieval scale sigma so that, with certified-exp
// weights, every unintended attention contribution is provably too small to
// move any wire value off its intended grid point.
//   max_int  : largest integer stored on the activation wire
//   n_tot    : maximum positions a query can see
//   n_pieces : maximum visible block pieces per query
Sizing size_solver(std::int64_t max_int, std::int64_t n_tot, int n_pieces, int D) {
    for (int fb = 2; fb <= 256; fb *= 2) {
        int ib = KeyEncoding::bits_for(std::max<std::int64_t>(max_int, 1) + 1);
        std::int64_t lnsq = ln_sq_ceil(n_tot);
        std::int64_t sigma = 0;
        for (int iter = 0; iter < 64; ++iter) {
            std::int64_t target =
                ib + fb + KeyEncoding::bits_for(n_tot + n_pieces + 1) + 10;
            sigma = std::max(target, lnsq);
            int need = KeyEncoding::bits_for(sigma + 1);
            if (need <= ib) break;
            ib = need;
        }
        const int wacc = 4 * fb + 64;
        const int sfb = fb;
        const int sib = KeyEncoding::bits_for(2 * sigma * (D + 2) + 2) + 1;

        BigRat tail = BigRat(n_tot) *
                      (pow2r(-static_cast<int>(sigma)) + pow2r(-wacc));
        BigRat recomb = BigRat(n_pieces) *
                        (BigRat(4) * pow2r(-static_cast<int>(sigma)) + pow2r(-wacc));
        MarginReport m;
        m.claimed_gap = BigRat(sigma);
        m.checks.push_back(rat_check("piece_average_on_grid", tail * pow2r(ib + 2),
                                     pow2r(-(fb + 2))));
        m.checks.push_back(rat_check("lse_on_grid", tail, pow2r(-(sfb + 2))));
        m.checks.push_back(rat_check("recombination_on_grid", recomb * pow2r(ib + 2),
                                     pow2r(-(fb + 2))));
        m.checks.push_back(
            rat_check("scale_fits_format", BigRat(sigma), pow2r(ib) - pow2r(-fb)));
        if (!m.all_pass()) continue;

        Sizing s;
        s.fmt = FixedFormat{ib, fb};
        s.score_fmt = FixedFormat{sib, sfb};
        s.p = std::max(s.fmt.total_bits(), s.score_fmt.total_bits());
        s.one = shl(BigInt(1), fb);
        s.sigma = sigma;
        s.scale_raw = BigInt(sigma) * s.one;
        m.scale_raw = s.scale_raw;
        s.margins = m;
        return s;
    }
    throw InsufficientPrecisionError(
        "no fixed format in the search range satisfies the retrieval margins");
}

// Q rows for a scaled bit-pattern query read from slots
// [src_begin, src_begin + D): the standard (a, 1-a) match gadget.
void fill_query_rows(Mat& Q, const KeyEncoding& enc, int src_begin, int konst,
                     FixedRaw scale_raw) {
    const int D = enc.D();
    for (int t = 0; t < D; ++t) {
        Q[static_cast<std::size_t>(t)][static_cast<std::size_t>(src_begin + t)] =
            scale_raw;
        Q[static_cast<std::size_t>(D + t)][static_cast<std::size_t>(konst)] = scale_raw;
        Q[static_cast<std::size_t>(D + t)][static_cast<std::size_t>(src_begin + t)] =
            -scale_raw;
    }
}

void fill_key_rows(Mat& K, const KeyEncoding& enc, int key_begin, int konst,
                   FixedRaw one) {
    const int D = enc.D();
    for (int t = 0; t < D; ++t) {
        K[static_cast<std::size_t>(t)][static_cast<std::size_t>(key_begin + t)] = one;
        K[static_cast<std::size_t>(D + t)][static_cast<std::size_t>(konst)] = one;
        K[static_cast<std::size_t>(D + t)][static_cast<std::size_t>(key_begin + t)] =
            -one;
    }
}

}  // namespace

FixedRaw retrieval_scale_raw(const FixedFormat& fmt, int c, std::int64_t n_keys) {
    if (c < 1 || n_keys < 1)
        throw ValidationError("retrieval_scale_raw: c and n_keys must be >= 1");
    BigRat v(1);
    if (n_keys > 1) {
        Dyadic l = log_dyadic(Dyadic(BigInt(n_keys), 0), 64);
        v = BigRat(c) * l.to_rational() * l.to_rational();
        if (v < 1) v = BigRat(1);
    }
    v *= pow2r(fmt.frac_bits);
    BigInt num = boost::multiprecision::numerator(v);
    BigInt den = boost::multiprecision::denominator(v);
    BigInt q = num / den;
    if (q * den != num) q += 1;
    if (q > fmt.raw_max())
        throw InsufficientPrecisionError("retrieval_scale_raw: scale exceeds the format");
    return q;
}

HeadParams build_retrieval_head(const KeyEncoding& enc, const FixedFormat& fmt,
                                FixedRaw scale_raw) {
    layout::Depth s(enc);
    const int d = s.width();
    const int D = s.D;
    const FixedRaw one = shl(BigInt(1), fmt.frac_bits);
    HeadParams hp;
    hp.Q = zero_mat(d, d);
    hp.K = zero_mat(d, d);
    hp.V = zero_mat(d, d);
    fill_query_rows(hp.Q, enc, s.query(0), s.konst(), scale_raw);
    fill_key_rows(hp.K, enc, s.key(0), s.konst(), one);
    // Special dimension: the query token scores scale * h(query, anchor)
    // against its own key, recreating the exact tie with the true target.
    hp.Q[static_cast<std::size_t>(2 * D)][static_cast<std::size_t>(s.qspecial())] =
        scale_raw;
    hp.K[static_cast<std::size_t>(2 * D)][static_cast<std::size_t>(s.special())] = one;
    for (int r = 0; r < d; ++r)
        hp.V[static_cast<std::size_t>(r)][static_cast<std::size_t>(r)] = one;
    return hp;
}

SolverBundle build_depth_solver(const TaskParams& params) {
    params.validate();
    KeyEncoding enc = KeyEncoding::for_task(params);
    layout::Depth s(enc);
    const int D = s.D;
    const int d = s.width();
    auto N = params.domain_sizes();
    std::int64_t n_tot = 2;
    for (auto v : N) n_tot += v;
    std::int64_t wmax = 1;
    for (auto v : params.n) wmax *= v;
    std::int64_t max_int = std::max({N.back(), wmax, static_cast<std::int64_t>(D), 2L});
    Sizing z = size_solver(max_int, n_tot, params.L + 2, D);

    TransformerSpec spec;
    spec.dims = ModelDims{1, d, z.p, params.L + 1};
    spec.format = z.fmt;
    spec.score_format = z.score_fmt;
    spec.mask = MaskMode::Causal;
    spec.embed.kind = EmbedKind::Compose;
    ComposeLayout lay;
    lay.params = params;
    lay.enc = enc;
    lay.mode = ComposeMode::Depth;
    lay.scale_raw = z.scale_raw;
    lay.width = d;
    spec.embed.compose = lay;

    HeadParams head = build_retrieval_head(enc, z.fmt, z.scale_raw);
    auto anchor = enc.anchor_bits();

    for (int l = 1; l <= params.L + 1; ++l) {
        Layer layer;
        AttentionHead ah;
        ah.base = head;
        layer.heads.push_back(ah);

        // Query-token update. The attention output is exactly
        // (x_self + x_target) / 2, so doubling recovers both summands
        // (their live slots do not overlap, and the shared slots agree).
        std::vector<MlpOp> wops;
        MlpOp a1 = zero_affine(d);
        aff(a1, s.konst(), s.konst(), dy(1));
        for (int t = 0; t < D; ++t) {
            aff(a1, s.key(t), s.key(t), dy(2));
            aff(a1, s.key(t), s.query(t), dy(-1));  // removes the target's key
        }
        aff(a1, s.wpack(), s.wpack(), dy(2));
        aff(a1, s.chain(), s.payload(), dy(2));  // the retrieved table value
        aff(a1, s.special(), s.special(), dy(2));
        wops.push_back(a1);
        wops.push_back(round_op(0, d));
        if (l >= 2 && l <= params.L) {
            // Peel the next query digit: wpack -> (rest, w_l - 1).
            MlpOp dm;
            dm.kind = MlpOpKind::DivmodConst;
            dm.src = s.wpack();
            dm.divisor = BigInt(params.n[static_cast<std::size_t>(l - 2)]);
            dm.q_dst = s.wpack();
            dm.r_dst = s.query(0);
            wops.push_back(dm);
        }
        if (l <= params.L) {
            // Next query index: chain for l = 1, else the pairing
            // (w_{l-1} - 1) * N_{l-2} + chain; minus 1 for the bit encoding.
            MlpOp a2 = identity_affine(d);
            clear_row(a2, s.query(0));
            if (l >= 2)
                aff(a2, s.query(0), s.query(0),
                    dy(N[static_cast<std::size_t>(l - 2)]));
            aff(a2, s.query(0), s.chain(), dy(1));
            a2.b[static_cast<std::size_t>(s.query(0))] = dy(-1);
            wops.push_back(a2);

            MlpOp tb;
            tb.kind = MlpOpKind::ToBits;
            tb.src = s.query(0);
            tb.width = enc.index_bits;
            tb.begin = s.query(enc.block_bits);
            wops.push_back(tb);
            for (auto& op : block_id_consts(enc, KeyEncoding::block_id_for(l),
                                            s.query(0)))
                wops.push_back(op);

            // Refresh the tie weight h = hamming(query, anchor).
            MlpOp a3 = identity_affine(d);
            clear_row(a3, s.qspecial());
            std::int64_t bias = 0;
            for (int t = 0; t < D; ++t) {
                aff(a3, s.qspecial(), s.query(t), dy(1 - 2 * anchor[static_cast<std::size_t>(t)]));
                bias += anchor[static_cast<std::size_t>(t)];
            }
            a3.b[static_cast<std::size_t>(s.qspecial())] = dy(bias);
            wops.push_back(a3);
        }

        MlpOp br;
        br.kind = MlpOpKind::Branch;
        br.src = s.special();  // 1/2 on the query token, 0 elsewhere
        br.then_ops = wops;
        br.else_ops = {round_op(0, d)};
        layer.mlp.ops.push_back(br);
        spec.layers.push_back(layer);
    }

    SolverBundle b;
    b.spec = spec;
    b.decode.kind = DecodeKind::ReadSlot;
    b.decode.slot = s.chain();
    b.decode.out_block = params.L + 1;
    b.steps = 0;
    b.depth = params.L + 1;
    b.margins = z.margins;
    b.spec.validate();
    return b;
}

SolverBundle build_cot_solver(const TaskParams& params) {
    params.validate();
    KeyEncoding enc = KeyEncoding::for_task(params);
    layout::Cot s(enc);
    const int D = s.D;
    const int d = s.d;
    const int H = params.L + 1;
    const int dH = s.width(params.L);
    auto N = params.domain_sizes();
    std::int64_t n_tot = 2 + params.L + 1;
    for (auto v : N) n_tot += v;
    std::int64_t wmax = 1;
    for (auto v : params.n) wmax *= v;
    const std::int64_t pb = layout::cot_pack_base(params);
    std::int64_t vmax = (wmax - 1) * pb + N.back();
    std::int64_t max_int = std::max({vmax, pb, static_cast<std::int64_t>(D), 2L});
    Sizing z = size_solver(max_int, n_tot, (params.L + 2) + (params.L + 1), D);

    TransformerSpec spec;
    spec.dims = ModelDims{H, d, z.p, 1};
    spec.format = z.fmt;
    spec.score_format = z.score_fmt;
    spec.mask = MaskMode::Causal;
    spec.embed.kind = EmbedKind::Compose;
    ComposeLayout lay;
    lay.params = params;
    lay.enc = enc;
    lay.mode = ComposeMode::Cot;
    lay.scale_raw = z.scale_raw;
    lay.width = dH;
    spec.embed.compose = lay;

    Layer layer;
    for (int h = 1; h <= H; ++h) {
        AttentionHead ah;
        ah.base.Q = zero_mat(d, dH);
        ah.base.K = zero_mat(d, dH);
        ah.base.V = zero_mat(d, dH);
        // Head h reads its query-bit region; all-zero bits = the anchor key,
        // i.e. a parked head broadcasts the query token's payload.
        fill_query_rows(ah.base.Q, enc, s.query(h, 0), s.konst(), z.scale_raw);
        fill_key_rows(ah.base.K, enc, s.key(0), s.konst(), z.one);
        ah.base.V[0][static_cast<std::size_t>(s.payload())] = z.one;
        layer.heads.push_back(ah);
    }
    layer.mlp.ops.push_back(round_op(0, dH));
    spec.layers.push_back(layer);

    SolverBundle b;
    b.spec = spec;
    b.decode.kind = DecodeKind::CotNext;
    b.decode.head_width = d;
    b.decode.pack_base = pb;
    b.decode.out_block = params.L + 1;
    b.steps = params.L + 1;
    b.depth = 1;
    b.margins = z.margins;
    b.spec.validate();
    return b;
}

SolverBundle build_encoder_solver(const TaskParams& params) {
    params.validate();
    KeyEncoding enc = KeyEncoding::for_task(params);
    layout::Encoder s(enc);
    const int D = s.D;
    const int d = s.d;
    const int dH = s.width();
    auto N = params.domain_sizes();
    std::int64_t n_tot = 2;
    for (auto v : N) n_tot += v;
    std::int64_t wmax = 1;
    for (auto v : params.n) wmax *= v;
    std::int64_t max_int = std::max(
        {N.back(), wmax, static_cast<std::int64_t>(params.L + 1),
         static_cast<std::int64_t>(D), 2L});
    Sizing z = size_solver(max_int, n_tot, params.L + 2, D);

    // Pointer doubling reaches distance 2^k - 1; the query token sits L+1
    // hops from the terminal entry, so k = ceil(log2(L+2)) rounds suffice.
    const int doublings = KeyEncoding::bits_for(params.L + 2);
    const int depth = (params.L >= 2 ? 1 : 0) + doublings;

    TransformerSpec spec;
    spec.dims = ModelDims{2, d, z.p, depth};
    spec.format = z.fmt;
    spec.score_format = z.score_fmt;
    spec.mask = MaskMode::Full;
    spec.embed.kind = EmbedKind::Compose;
    ComposeLayout lay;
    lay.params = params;
    lay.enc = enc;
    lay.mode = ComposeMode::Encoder;
    lay.scale_raw = z.scale_raw;
    lay.width = dH;
    spec.embed.compose = lay;

    // Self head: query = own key, V copies the whole first region.
    AttentionHead self_head;
    self_head.base.Q = zero_mat(d, dH);
    self_head.base.K = zero_mat(d, dH);
    self_head.base.V = zero_mat(d, dH);
    fill_query_rows(self_head.base.Q, enc, s.key(0), s.konst(), z.scale_raw);
    fill_key_rows(self_head.base.K, enc, s.key(0), s.konst(), z.one);
    for (int r = 0; r < d; ++r)
        self_head.base.V[static_cast<std::size_t>(r)][static_cast<std::size_t>(r)] =
            z.one;

    // Work head: query = pointer bits (all-zero pointer = the anchor).
    AttentionHead work_setup;
    work_setup.base.Q = zero_mat(d, dH);
    work_setup.base.K = zero_mat(d, dH);
    work_setup.base.V = zero_mat(d, dH);
    fill_query_rows(work_setup.base.Q, enc, s.ptr(0), s.konst(), z.scale_raw);
    fill_key_rows(work_setup.base.K, enc, s.key(0), s.konst(), z.one);
    work_setup.base.V[0][static_cast<std::size_t>(s.payload())] = z.one;

    AttentionHead work_double = work_setup;
    work_double.base.V = zero_mat(d, dH);
    for (int t = 0; t < D; ++t)
        work_double.base.V[static_cast<std::size_t>(t)]
                          [static_cast<std::size_t>(s.ptr(t))] = z.one;
    work_double.base.V[static_cast<std::size_t>(D)]
                      [static_cast<std::size_t>(s.resolved())] = z.one;

    if (params.L >= 2) {
        // Setup layer: broadcast the query digits and give blocks 1..L-1
        // their pointers (everyone else got theirs at embedding time).
        Layer layer;
        layer.heads = {self_head, work_setup};

        MlpOp keep = zero_affine(dH);
        for (int r = 0; r < d; ++r) aff(keep, r, r, dy(1));
        aff(keep, s.fetch(0), s.fetch(0), dy(1));  // the broadcast digits

        // Nested branch on the own-block integer, highest label first.
        // Leaves for the query token (L+1), the terminal block (L) and the
        // base token (0) are identity; blocks 1..L-1 compute their pointer.
        const int flag = s.fetch(1);
        std::vector<MlpOp> tree;  // built bottom-up: k = 1 first
        for (int k = 1; k <= params.L + 1; ++k) {
            std::vector<MlpOp> leaf;
            if (k >= 1 && k <= params.L - 1) {
                std::int64_t before = 1;
                for (int j = 1; j < k; ++j)
                    before *= params.n[static_cast<std::size_t>(j - 1)];
                if (before > 1) {
                    MlpOp dm;
                    dm.kind = MlpOpKind::DivmodConst;
                    dm.src = s.fetch(0);
                    dm.divisor = BigInt(before);
                    dm.q_dst = s.fetch(0);
                    dm.r_dst = s.scratch();
                    leaf.push_back(dm);
                }
                MlpOp dm2;
                dm2.kind = MlpOpKind::DivmodConst;
                dm2.src = s.fetch(0);
                dm2.divisor = BigInt(params.n[static_cast<std::size_t>(k - 1)]);
                dm2.q_dst = s.fetch(0);
                dm2.r_dst = s.scratch();
                leaf.push_back(dm2);

                MlpOp a = identity_affine(dH);
                clear_row(a, s.scratch());
                aff(a, s.scratch(), s.scratch(),
                    dy(N[static_cast<std::size_t>(k - 1)]));
                aff(a, s.scratch(), s.payload(), dy(1));
                a.b[static_cast<std::size_t>(s.scratch())] = dy(-1);
                leaf.push_back(a);

                MlpOp tb;
                tb.kind = MlpOpKind::ToBits;
                tb.src = s.scratch();
                tb.width = enc.index_bits;
                tb.begin = s.ptr(enc.block_bits);
                leaf.push_back(tb);
                for (auto& op : block_id_consts(enc, KeyEncoding::block_id_for(k + 1),
                                                s.ptr(0)))
                    leaf.push_back(op);
            }
            MlpOp f = identity_affine(dH);
            clear_row(f, flag);
            aff(f, flag, s.blockint(), dy(1));
            f.b[static_cast<std::size_t>(flag)] = Dyadic(BigInt(1 - 2 * k), -1);
            MlpOp br;
            br.kind = MlpOpKind::Branch;
            br.src = flag;
            br.then_ops = std::move(leaf);
            br.else_ops = std::move(tree);
            tree = {f, br};
        }

        MlpOp z_op = zero_affine(dH);
        for (int r = 0; r < d; ++r)
            if (r != s.scratch()) aff(z_op, r, r, dy(1));

        layer.mlp.ops.push_back(keep);
        for (auto& op : tree) layer.mlp.ops.push_back(op);
        layer.mlp.ops.push_back(z_op);
        layer.mlp.ops.push_back(round_op(0, dH));
        spec.layers.push_back(layer);
    }

    for (int k = 0; k < doublings; ++k) {
        Layer layer;
        layer.heads = {self_head, work_double};
        MlpOp m = zero_affine(dH);
        for (int r = 0; r < d; ++r)
            if (r != s.scratch()) aff(m, r, r, dy(1));
        for (int t = 0; t < D; ++t) {
            clear_row(m, s.ptr(t));
            aff(m, s.ptr(t), s.fetch(t), dy(1));
        }
        clear_row(m, s.resolved());
        aff(m, s.resolved(), s.fetch(D), dy(1));
        layer.mlp.ops.push_back(m);
        layer.mlp.ops.push_back(round_op(0, dH));
        spec.layers.push_back(layer);
    }

    SolverBundle b;
    b.spec = spec;
    b.decode.kind = DecodeKind::ReadSlot;
    b.decode.slot = s.resolved();
    b.decode.out_block = params.L + 1;
    b.steps = 0;
    b.depth = depth;
    b.margins = z.margins;
    b.spec.validate();
    return b;
}

SolverRun run_solver(const SolverBundle& bundle, const TaskInstance& inst,
                     int threads) {
    inst.validate();
    Prompt prompt = tokenize(inst);
    ForwardOptions opts;
    opts.threads = threads;
    SolverRun run;
    if (bundle.steps > 0) {
        bool sat = false;
        run.emitted =
            generate_with_cot(bundle.spec, prompt, bundle.steps, bundle.decode, opts, &sat);
        run.saturated = sat;
        for (const auto& t : run.emitted)
            run.chain.push_back(t.value % bundle.decode.pack_base);
        run.answer = run.chain.back();
    } else {
        auto acts = forward(bundle.spec, prompt, opts);
        Token t = decode_vector(bundle.decode, bundle.spec.format,
                                acts.x.back().back(), 1);
        run.saturated = acts.saturated;
        run.chain = {t.value};
        run.answer = t.value;
    }
    return run;
}

}  // namespace fclab
