#include "fclab/circuits.hpp"

#include "fclab/builders.hpp"
#include "fclab/errors.hpp"
#include "fclab/keys.hpp"

#include <algorithm>
#include <map>
#include <string>
#include <utility>

namespace fclab {

// ---------------------------------------------------------------------------
// Circuit structure and direct evaluation.
// ---------------------------------------------------------------------------

int SymmetricCircuit::gate_count() const {
    int g = 0;
    for (const auto& layer : layers) g += static_cast<int>(layer.size());
    return g;
}

int SymmetricCircuit::wires() const {
    int s = 0;
    for (const auto& layer : layers)
        for (const auto& gate : layer) s += static_cast<int>(gate.inputs.size());
    return s;
}

int SymmetricCircuit::output_wire() const {
    return output >= 0 ? output : input_count + gate_count() - 1;
}

void SymmetricCircuit::validate() const {
    if (input_count < 1)
        throw ValidationError("circuit: input count must be >= 1");
    if (layers.empty())
        throw ValidationError("circuit: needs at least one gate layer");
    int known = input_count;  // wires defined strictly below the current layer
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].empty())
            throw ValidationError("circuit: empty gate layer " + std::to_string(l));
        for (const auto& gate : layers[l]) {
            const int w = static_cast<int>(gate.inputs.size());
            if (w < 1) throw ValidationError("circuit: gate fan-in must be >= 1");
            if (static_cast<int>(gate.table.size()) != w + 1)
                throw ValidationError("circuit: gate table length must be fan-in + 1");
            for (int b : gate.table)
                if (b != 0 && b != 1)
                    throw ValidationError("circuit: gate table entries must be bits");
            for (int in : gate.inputs)
                if (in < 0 || in >= known)
                    throw ValidationError("circuit: dangling wire reference " +
                                          std::to_string(in));
        }
        known += static_cast<int>(layers[l].size());
    }
    const int out = output_wire();
    if (out < input_count || out >= known)
        throw ValidationError("circuit: output must designate a gate");
}

std::vector<int> eval_all_wires(const SymmetricCircuit& c, const std::vector<int>& x) {
    c.validate();
    if (static_cast<int>(x.size()) != c.input_count)
        throw ValidationError("circuit eval: input size mismatch");
    std::vector<int> v = x;
    for (int b : v)
        if (b != 0 && b != 1) throw ValidationError("circuit eval: inputs must be bits");
    v.reserve(static_cast<std::size_t>(c.input_count + c.gate_count()));
    for (const auto& layer : c.layers) {
        const std::size_t base = v.size();
        std::vector<int> out;
        out.reserve(layer.size());
        for (const auto& gate : layer) {
            int sum = 0;
            for (int in : gate.inputs) sum += v[static_cast<std::size_t>(in)];
            out.push_back(gate.table[static_cast<std::size_t>(sum)]);
        }
        (void)base;
        v.insert(v.end(), out.begin(), out.end());
    }
    return v;
}

int eval_circuit(const SymmetricCircuit& c, const std::vector<int>& x) {
    return eval_all_wires(c, x)[static_cast<std::size_t>(c.output_wire())];
}

// ---------------------------------------------------------------------------
// Compilation.
// ---------------------------------------------------------------------------

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

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

MlpOp step_op(int begin, int end) {
    MlpOp op;
    op.kind = MlpOpKind::Step;
    op.begin = begin;
    op.end = end;
    return op;
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

// Input chunk / count chunk of a spread gate: partial-sum position j sums
// inputs [lo, hi) and later owns the indicators for counts [t0, t1]. It also
// needs the threshold for t1 + 1 unless t1 is the gate's full fan-in.
struct Chunk {
    int lo = 0, hi = 0;     // input indices
    int t0 = 0, t1 = 0;     // count range
    int cs = 0;             // t1 - t0 + 1
    int th_cnt = 0;         // thresholds held (cs, or cs + 1 with the overlap)
};

Chunk chunk_of(int j, int Hg, int w) {
    Chunk ck;
    ck.lo = j * Hg;
    ck.hi = std::min((j + 1) * Hg, w);
    ck.t0 = ck.lo + 1;
    ck.t1 = ck.hi;
    ck.cs = ck.t1 - ck.t0 + 1;
    ck.th_cnt = ck.t1 == w ? ck.cs : ck.cs + 1;
    return ck;
}

struct GatePlan {
    const SymmetricGate* g = nullptr;
    int wire = 0;
    int layer = 0;
    bool spread_gate = false;
    int home = 0;
    int cell_ord = 0;  // value-cell ordinal at the home position
    int head_begin = 0, head_end = 0;
    std::vector<int> spread;  // home first, padding positions last
    int real_groups = 0;      // spread positions that carry inputs
    std::int64_t tag = 0;
    int bank_ord = 0;  // slot-bank offset at the home position (packed gates)
};

struct Plan {
    int n = 0;   // sequence length
    int Hg = 0;  // gather-head budget
    int groups = 0;
    int max_cells = 0;
    int max_bank = 1;
    std::vector<GatePlan> gates;  // wire-id order
    std::vector<int> positions_used;
    std::vector<std::int64_t> tags;  // per position
};

// First-fit placement at a fixed sequence length. Wide gates reserve tagged
// partial-sum positions from the top of the range (never reused by another
// group); narrow gates pack bottom-up under the per-position head budget.
// Fails when either half of the position budget is exceeded.
bool try_allocate(const SymmetricCircuit& c, int n, int pads, Plan& plan) {
    const int s = c.wires();
    plan = Plan{};
    plan.n = n;
    plan.Hg = std::max(ceil_div(5 * s, n), 1);
    plan.tags.assign(static_cast<std::size_t>(n), 0);
    if (c.input_count > n) return false;
    std::vector<int> cells(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < c.input_count; ++i) cells[static_cast<std::size_t>(i)] = 1;
    int spread_next = n - 1;
    int wire = c.input_count;
    for (int l = 0; l < c.depth(); ++l) {
        const auto& gates = c.layers[static_cast<std::size_t>(l)];
        std::vector<int> head_used(static_cast<std::size_t>(n), 0);
        std::vector<int> bank_used(static_cast<std::size_t>(n), 0);
        std::vector<char> taken(static_cast<std::size_t>(n), 0);
        std::vector<char> opened(static_cast<std::size_t>(n), 0);
        int spread_here = 0;
        int small_positions = 0;
        std::vector<GatePlan> here(gates.size());
        for (std::size_t gi = 0; gi < gates.size(); ++gi) {
            const auto& g = gates[gi];
            auto& gp = here[gi];
            gp.g = &g;
            gp.wire = wire + static_cast<int>(gi);
            gp.layer = l;
            const int w = static_cast<int>(g.inputs.size());
            if (w <= plan.Hg) continue;
            gp.spread_gate = true;
            const int r = ceil_div(w, plan.Hg);
            const int r_eff = r + pads;
            if (spread_next - r_eff + 1 < 0) return false;
            for (int j = 0; j < r_eff; ++j) {
                const int pos = spread_next--;
                gp.spread.push_back(pos);
                taken[static_cast<std::size_t>(pos)] = 1;
            }
            gp.real_groups = r;
            gp.home = gp.spread.front();
            gp.tag = ++plan.groups;
            for (int pos : gp.spread) plan.tags[static_cast<std::size_t>(pos)] = gp.tag;
            gp.cell_ord = cells[static_cast<std::size_t>(gp.home)]++;
            spread_here += r_eff;
            for (int j = 0; j < r; ++j)
                plan.max_bank = std::max(plan.max_bank, chunk_of(j, plan.Hg, w).cs + 1);
        }
        for (std::size_t gi = 0; gi < gates.size(); ++gi) {
            auto& gp = here[gi];
            if (gp.spread_gate) continue;
            const int w = static_cast<int>(gp.g->inputs.size());
            int p = -1;
            for (int q = 0; q < n; ++q) {
                if (taken[static_cast<std::size_t>(q)]) continue;
                if (head_used[static_cast<std::size_t>(q)] + w <= plan.Hg) {
                    p = q;
                    break;
                }
            }
            if (p < 0) return false;
            if (!opened[static_cast<std::size_t>(p)]) {
                opened[static_cast<std::size_t>(p)] = 1;
                ++small_positions;
            }
            gp.home = p;
            gp.head_begin = 1 + head_used[static_cast<std::size_t>(p)];
            gp.head_end = gp.head_begin + w;
            head_used[static_cast<std::size_t>(p)] += w;
            gp.bank_ord = bank_used[static_cast<std::size_t>(p)];
            bank_used[static_cast<std::size_t>(p)] += w + 1;
            plan.max_bank = std::max(plan.max_bank, bank_used[static_cast<std::size_t>(p)]);
            gp.cell_ord = cells[static_cast<std::size_t>(p)]++;
        }
        if (2 * small_positions > n) return false;
        plan.positions_used.push_back(small_positions + spread_here);
        for (auto& gp : here) plan.gates.push_back(std::move(gp));
        wire += static_cast<int>(gates.size());
    }
    if (2 * (n - 1 - spread_next) > n) return false;
    plan.max_cells = *std::max_element(cells.begin(), cells.end());
    return true;
}

struct WireCell {
    int pos = 0;
    int slot = 0;
};

}  // namespace

bool CompileReport::margins_pass() const {
    for (const auto& ck : margins)
        if (!ck.pass) return false;
    return true;
}

const GatePlacement& CompileReport::placement(int wire) const {
    if (gates.empty()) throw ValidationError("compile report: no gates");
    const int first = gates.front().gate;
    const int idx = wire - first;
    if (idx < 0 || idx >= static_cast<int>(gates.size()) ||
        gates[static_cast<std::size_t>(idx)].gate != wire)
        throw ValidationError("compile report: wire " + std::to_string(wire) +
                              " is not a gate");
    return gates[static_cast<std::size_t>(idx)];
}

std::pair<TransformerSpec, CompileReport> compile_circuit(
    const SymmetricCircuit& c, const FixedFormat& fmt, const CompileOptions& opts) {
    c.validate();
    if (fmt.int_bits < 1 || fmt.frac_bits < 1)
        throw InsufficientPrecisionError(
            "circuit compile: format needs at least one integer and one fraction bit");

    // --- Position budget search: smallest length fitting both halves. ---
    Plan plan;
    bool placed = false;
    for (int n = std::max(c.input_count, 2); n <= opts.max_positions; ++n) {
        if (try_allocate(c, n, opts.extra_pad_groups, plan)) {
            placed = true;
            break;
        }
    }
    if (!placed)
        throw CapacityError(
            "circuit compile: no sequence length up to " +
            std::to_string(opts.max_positions) +
            " satisfies the half-and-half position budget (inputs=" +
            std::to_string(c.input_count) + ", gates=" + std::to_string(c.gate_count()) +
            ", wires=" + std::to_string(c.wires()) + ")");

    const int n = plan.n;
    const int Hg = plan.Hg;
    const int idb = KeyEncoding::bits_for(n);
    const int tagb = KeyEncoding::bits_for(plan.groups + 1);
    const int S0 = 1 + idb + tagb;  // first value-cell slot
    const int d = std::max(S0 + plan.max_cells + plan.max_bank,
                           2 * std::max(idb, tagb));
    const int H = Hg + 1;  // one extra head carries each position's state
    const int dH = d * H;
    const int bank0 = S0 + plan.max_cells;

    int w_max = 1;
    int r_eff_max = 0;
    for (const auto& gp : plan.gates) {
        w_max = std::max(w_max, static_cast<int>(gp.g->inputs.size()));
        if (gp.spread_gate)
            r_eff_max = std::max(r_eff_max, static_cast<int>(gp.spread.size()));
    }

    // --- Retrieval scale and margins. Every wire value is an integer; all
    // attention mixes must stay within 1/4 of the intended value so RoundInt
    // and the half-integer thresholds recover it exactly. ---
    BigInt cmax = std::max<std::int64_t>({Hg, 2, w_max + 1});
    if (r_eff_max > 0)
        cmax = std::max(cmax, BigInt(r_eff_max) * (Hg + 1));
    const BigInt need = BigInt(16) * n * cmax;  // tail budget, times 2^ib below
    int sig_int = 1;
    BigInt pw = 1;
    while (pw < need) {
        pw <<= 1;
        ++sig_int;
    }
    sig_int += fmt.int_bits;
    FixedRaw sigma_raw = retrieval_scale_raw(fmt, 1, n);
    sigma_raw = std::max(sigma_raw, shl(BigInt(sig_int), fmt.frac_bits));
    if (sigma_raw > fmt.raw_max())
        throw InsufficientPrecisionError(
            "circuit compile: retrieval scale does not fit the activation format");

    const int maxD = std::max(idb, tagb);
    const BigInt sig_ceil = (sigma_raw + (shl(BigInt(1), fmt.frac_bits) - 1)) >>
                            fmt.frac_bits;
    FixedFormat sfmt;
    sfmt.frac_bits = fmt.frac_bits;
    sfmt.int_bits = KeyEncoding::bits_for(
        (2 * sig_ceil * (maxD + 2) + 2).convert_to<std::int64_t>()) + 1;

    const std::int64_t sig_floor = (sigma_raw >> fmt.frac_bits).convert_to<std::int64_t>();
    const BigRat sigma = BigRat(sigma_raw) * pow2r(-fmt.frac_bits);
    const BigRat vmax = pow2r(fmt.int_bits);
    const BigRat fmt_top = pow2r(fmt.int_bits) - pow2r(-fmt.frac_bits);
    const BigRat tail = BigRat(n) * pow2r(1 - static_cast<int>(sig_floor));

    std::vector<VerifyCheck> margins;
    margins.push_back(rat_check("sum_fits_format", BigRat(w_max) + BigRat(1, 2), fmt_top));
    margins.push_back(rat_check("scale_fits_format", sigma, fmt_top));
    margins.push_back(rat_check("score_fits_format", sigma * maxD,
                                pow2r(sfmt.int_bits) - pow2r(-sfmt.frac_bits)));
    margins.push_back(
        rat_check("score_frac_resolution", pow2r(-sfmt.frac_bits), BigRat(1, 2)));
    margins.push_back(rat_check("quarter_margin_tail",
                                BigRat(cmax) * tail * 2 * vmax, BigRat(1, 8)));
    margins.push_back(rat_check("quarter_margin_quantize",
                                BigRat(cmax) * pow2r(-fmt.frac_bits - 1), BigRat(1, 8)));
    for (const auto& ck : margins)
        if (!ck.pass)
            throw InsufficientPrecisionError("circuit compile: margin check '" + ck.name +
                                             "' failed (" + ck.lhs + " " + ck.cmp + " " +
                                             ck.rhs + ")");

    // --- Spec skeleton. ---
    TransformerSpec spec;
    spec.dims = ModelDims{H, d, 1, 6 * c.depth()};
    spec.dims.p = std::max(fmt.total_bits(), sfmt.total_bits());
    spec.format = fmt;
    spec.score_format = sfmt;
    spec.mask = MaskMode::Full;
    spec.embed.kind = EmbedKind::Circuit;
    CircuitEmbedLayout lay;
    lay.id_bits = idb;
    lay.tag_bits = tagb;
    lay.width = dH;
    lay.group_tags = plan.tags;
    spec.embed.circuit = lay;

    const FixedRaw one = shl(BigInt(1), fmt.frac_bits);
    Mat k_id = zero_mat(d, dH);
    Mat q_self = zero_mat(d, dH);
    for (int t = 0; t < idb; ++t) {
        k_id[static_cast<std::size_t>(t)][static_cast<std::size_t>(1 + t)] = one;
        k_id[static_cast<std::size_t>(idb + t)][0] = one;
        k_id[static_cast<std::size_t>(idb + t)][static_cast<std::size_t>(1 + t)] = -one;
        q_self[static_cast<std::size_t>(t)][static_cast<std::size_t>(1 + t)] = sigma_raw;
        q_self[static_cast<std::size_t>(idb + t)][0] = sigma_raw;
        q_self[static_cast<std::size_t>(idb + t)][static_cast<std::size_t>(1 + t)] =
            -sigma_raw;
    }
    Mat k_tag = zero_mat(d, dH);
    for (int t = 0; t < tagb; ++t) {
        k_tag[static_cast<std::size_t>(t)][static_cast<std::size_t>(1 + idb + t)] = one;
        k_tag[static_cast<std::size_t>(tagb + t)][0] = one;
        k_tag[static_cast<std::size_t>(tagb + t)][static_cast<std::size_t>(1 + idb + t)] =
            -one;
    }
    Mat v_sel = zero_mat(d, dH);
    for (int r = 0; r < d; ++r)
        v_sel[static_cast<std::size_t>(r)][static_cast<std::size_t>(r)] = one;
    const Mat q_zero = zero_mat(d, dH);

    auto q_target = [&](int nbits, std::int64_t value) {
        Mat Q = zero_mat(d, dH);
        for (int t = 0; t < nbits; ++t) {
            const bool bit = ((value >> (nbits - 1 - t)) & 1) != 0;
            Q[static_cast<std::size_t>(bit ? t : nbits + t)][0] = sigma_raw;
        }
        return Q;
    };

    // Absolute value cell of every wire.
    std::vector<WireCell> cell_of(
        static_cast<std::size_t>(c.input_count + c.gate_count()));
    for (int i = 0; i < c.input_count; ++i)
        cell_of[static_cast<std::size_t>(i)] = WireCell{i, S0};
    for (const auto& gp : plan.gates)
        cell_of[static_cast<std::size_t>(gp.wire)] = WireCell{gp.home, S0 + gp.cell_ord};

    MlpOp base_affine = zero_affine(dH);
    for (int i = 0; i < d; ++i) aff(base_affine, i, i, dy(1));
    const std::vector<MlpOp> base_prog = {base_affine, round_op(0, dH)};

    // --- Six sublayers per circuit layer. ---
    for (int l = 0; l < c.depth(); ++l) {
        std::vector<const GatePlan*> here;
        for (const auto& gp : plan.gates)
            if (gp.layer == l) here.push_back(&gp);
        for (int sub = 1; sub <= 6; ++sub) {
            Layer layer;
            layer.heads.resize(static_cast<std::size_t>(H));
            layer.heads[0].base = HeadParams{q_self, k_id, v_sel};
            const Mat& work_k = (sub == 1 || sub == 3) ? k_id
                                : (sub == 2 || sub == 6) ? k_tag
                                                         : q_zero;
            for (int h = 1; h < H; ++h)
                layer.heads[static_cast<std::size_t>(h)].base =
                    HeadParams{q_zero, work_k, v_sel};

            std::map<std::size_t, MlpOp> affines;
            std::map<std::size_t, std::vector<MlpOp>> post;
            auto affine_at = [&](int pos) -> MlpOp& {
                auto it = affines.find(static_cast<std::size_t>(pos));
                if (it == affines.end())
                    it = affines.emplace(static_cast<std::size_t>(pos), base_affine).first;
                return it->second;
            };
            auto q_override = [&](int head, int pos, Mat Q) {
                auto& hd = layer.heads[static_cast<std::size_t>(head)];
                hd.overrides[static_cast<std::size_t>(pos)] =
                    HeadParams{std::move(Q), hd.base.K, hd.base.V};
            };

            for (const GatePlan* gp : here) {
                const int w = static_cast<int>(gp->g->inputs.size());
                const auto& tbl = gp->g->table;
                const int cell = S0 + gp->cell_ord;
                if (!gp->spread_gate) {
                    const int bg = bank0 + gp->bank_ord;
                    switch (sub) {
                        case 1: {  // gather the inputs with one head each
                            auto& op = affine_at(gp->home);
                            clear_row(op, cell);
                            for (int j = 0; j < w; ++j) {
                                const int head = gp->head_begin + j;
                                const WireCell& src =
                                    cell_of[static_cast<std::size_t>(gp->g->inputs[j])];
                                q_override(head, gp->home, q_target(idb, src.pos));
                                auto& coeff = op.W[static_cast<std::size_t>(cell)]
                                                  [static_cast<std::size_t>(head * d + src.slot)];
                                coeff = add(coeff, dy(1));
                            }
                            break;
                        }
                        case 3: {  // copy the sum across the gate's slot bank
                            auto& op = affine_at(gp->home);
                            for (int t = 1; t <= w; ++t) {
                                clear_row(op, bg + t - 1);
                                aff(op, bg + t - 1, cell, dy(1));
                            }
                            break;
                        }
                        case 4: {  // half-integer thresholds: slot t-1 <- [sum >= t]
                            auto& op = affine_at(gp->home);
                            for (int t = 1; t <= w; ++t) {
                                clear_row(op, bg + t - 1);
                                aff(op, bg + t - 1, bg + t - 1, dy(1));
                                op.b[static_cast<std::size_t>(bg + t - 1)] =
                                    Dyadic(BigInt(1 - 2 * t), -1);
                            }
                            post[static_cast<std::size_t>(gp->home)].push_back(
                                step_op(bg, bg + w));
                            break;
                        }
                        case 5: {  // table-weighted count indicators
                            auto& op = affine_at(gp->home);
                            for (int t = 1; t <= w; ++t) {
                                clear_row(op, bg + t - 1);
                                if (tbl[static_cast<std::size_t>(t)]) {
                                    aff(op, bg + t - 1, bg + t - 1, dy(1));
                                    if (t < w) aff(op, bg + t - 1, bg + t, dy(-1));
                                }
                            }
                            clear_row(op, bg + w);  // indicator for count zero
                            op.b[static_cast<std::size_t>(bg + w)] = dy(tbl[0]);
                            if (tbl[0]) aff(op, bg + w, bg, dy(-1));
                            break;
                        }
                        case 6: {  // sum the indicators into the value cell
                            auto& op = affine_at(gp->home);
                            clear_row(op, cell);
                            for (int k = 0; k <= w; ++k) aff(op, cell, bg + k, dy(1));
                            for (int k = 0; k <= w; ++k) clear_row(op, bg + k);
                            break;
                        }
                        default: break;
                    }
                    continue;
                }
                const int r_real = gp->real_groups;
                const int r_eff = static_cast<int>(gp->spread.size());
                switch (sub) {
                    case 1: {  // per-position partial sums (padding stays zero)
                        for (int j = 0; j < r_eff; ++j) {
                            const int pos = gp->spread[static_cast<std::size_t>(j)];
                            auto& op = affine_at(pos);
                            clear_row(op, bank0);
                            if (j >= r_real) continue;
                            const Chunk ck = chunk_of(j, Hg, w);
                            for (int k = ck.lo; k < ck.hi; ++k) {
                                const int head = 1 + (k - ck.lo);
                                const WireCell& src =
                                    cell_of[static_cast<std::size_t>(gp->g->inputs[k])];
                                q_override(head, pos, q_target(idb, src.pos));
                                auto& coeff = op.W[static_cast<std::size_t>(bank0)]
                                                  [static_cast<std::size_t>(head * d + src.slot)];
                                coeff = add(coeff, dy(1));
                            }
                        }
                        break;
                    }
                    case 2: {  // average the group's partials, rescale by its size
                        auto& op = affine_at(gp->home);
                        q_override(1, gp->home, q_target(tagb, gp->tag));
                        clear_row(op, cell);
                        aff(op, cell, d + bank0, dy(r_eff));
                        break;
                    }
                    case 3: {  // fetch the sum; stale bank slots are cleared
                        for (int j = 0; j < r_eff; ++j) {
                            const int pos = gp->spread[static_cast<std::size_t>(j)];
                            auto& op = affine_at(pos);
                            int live = 0;
                            if (j < r_real) {
                                const Chunk ck = chunk_of(j, Hg, w);
                                q_override(1, pos, q_target(idb, gp->home));
                                for (int k = 0; k < ck.th_cnt; ++k) {
                                    clear_row(op, bank0 + k);
                                    aff(op, bank0 + k, d + cell, dy(1));
                                }
                                live = ck.th_cnt;
                            }
                            for (int k = live; k < plan.max_bank; ++k)
                                clear_row(op, bank0 + k);
                        }
                        break;
                    }
                    case 4: {  // thresholds for this position's count range
                        for (int j = 0; j < r_real; ++j) {
                            const int pos = gp->spread[static_cast<std::size_t>(j)];
                            const Chunk ck = chunk_of(j, Hg, w);
                            auto& op = affine_at(pos);
                            for (int k = 0; k < ck.th_cnt; ++k) {
                                const int t = ck.t0 + k;
                                clear_row(op, bank0 + k);
                                aff(op, bank0 + k, bank0 + k, dy(1));
                                op.b[static_cast<std::size_t>(bank0 + k)] =
                                    Dyadic(BigInt(1 - 2 * t), -1);
                            }
                            post[static_cast<std::size_t>(pos)].push_back(
                                step_op(bank0, bank0 + ck.th_cnt));
                        }
                        break;
                    }
                    case 5: {  // indicators; the home also owns count zero
                        for (int j = 0; j < r_real; ++j) {
                            const int pos = gp->spread[static_cast<std::size_t>(j)];
                            const Chunk ck = chunk_of(j, Hg, w);
                            auto& op = affine_at(pos);
                            for (int k = 0; k < ck.cs; ++k) {
                                const int t = ck.t0 + k;
                                clear_row(op, bank0 + k);
                                if (tbl[static_cast<std::size_t>(t)]) {
                                    aff(op, bank0 + k, bank0 + k, dy(1));
                                    if (t < w) aff(op, bank0 + k, bank0 + k + 1, dy(-1));
                                }
                            }
                            if (j == 0) {
                                clear_row(op, bank0 + ck.cs);
                                op.b[static_cast<std::size_t>(bank0 + ck.cs)] =
                                    dy(tbl[0]);
                                if (tbl[0]) aff(op, bank0 + ck.cs, bank0, dy(-1));
                            } else if (ck.th_cnt > ck.cs) {
                                clear_row(op, bank0 + ck.cs);
                            }
                        }
                        break;
                    }
                    case 6: {  // gather the indicator banks, rescale, and sum
                        auto& op = affine_at(gp->home);
                        q_override(1, gp->home, q_target(tagb, gp->tag));
                        clear_row(op, cell);
                        const int bw = std::min(Hg + 1, plan.max_bank);
                        for (int k = 0; k < bw; ++k)
                            aff(op, cell, d + bank0 + k, dy(r_eff));
                        for (int j = 0; j < r_eff; ++j) {
                            auto& op2 = affine_at(gp->spread[static_cast<std::size_t>(j)]);
                            for (int k = 0; k < plan.max_bank; ++k) clear_row(op2, bank0 + k);
                        }
                        break;
                    }
                    default: break;
                }
            }

            layer.mlp.ops = base_prog;
            for (auto& [pos, op] : affines) {
                std::vector<MlpOp> prog;
                prog.push_back(std::move(op));
                auto it = post.find(pos);
                if (it != post.end())
                    for (auto& st : it->second) prog.push_back(std::move(st));
                prog.push_back(round_op(0, dH));
                layer.mlp.overrides[pos] = std::move(prog);
            }
            spec.layers.push_back(std::move(layer));
        }
    }
    spec.validate();

    CompileReport rep;
    rep.depth = 6 * c.depth();
    rep.heads = Hg;
    rep.positions = n;
    rep.head_width = d;
    rep.positions_used = plan.positions_used;
    for (const auto& gp : plan.gates) {
        GatePlacement pl;
        pl.gate = gp.wire;
        pl.layer = gp.layer;
        pl.home = gp.home;
        pl.cell = S0 + gp.cell_ord;
        pl.head_begin = gp.head_begin;
        pl.head_end = gp.head_end;
        pl.spread = gp.spread;
        pl.tag = gp.tag;
        rep.gates.push_back(std::move(pl));
    }
    const GatePlacement& out = rep.placement(c.output_wire());
    rep.output_home = out.home;
    rep.output_cell = out.cell;
    rep.input_slot = S0;
    rep.sigma_raw = sigma_raw;
    rep.margins = std::move(margins);
    return {std::move(spec), std::move(rep)};
}

Prompt circuit_prompt(int positions, const std::vector<int>& x) {
    if (positions < static_cast<int>(x.size()))
        throw ValidationError("circuit prompt: more input bits than positions");
    for (int b : x)
        if (b != 0 && b != 1) throw ValidationError("circuit prompt: inputs must be bits");
    Prompt p;
    p.tokens.reserve(static_cast<std::size_t>(positions));
    for (int i = 0; i < positions; ++i)
        p.tokens.push_back(
            Token{0, i, i < static_cast<int>(x.size()) ? x[static_cast<std::size_t>(i)] : 0});
    return p;  // no explicit blocks: every token is its own attention block
}

int read_wire_bit(const Activations& acts, const FixedFormat& fmt,
                  const SymmetricCircuit& c, const CompileReport& rep, int wire) {
    if (wire < 0 || wire >= c.input_count + c.gate_count())
        throw ValidationError("read_wire_bit: wire out of range");
    std::size_t xi = 0;
    int pos = wire;
    int slot = rep.input_slot;
    if (wire >= c.input_count) {
        const GatePlacement& pl = rep.placement(wire);
        xi = static_cast<std::size_t>(6 * (pl.layer + 1));
        pos = pl.home;
        slot = pl.cell;
    }
    const FixedRaw& raw = acts.x.at(xi).at(static_cast<std::size_t>(pos))
                              .at(static_cast<std::size_t>(slot));
    if (raw == 0) return 0;
    if (raw == shl(BigInt(1), fmt.frac_bits)) return 1;
    throw ValidationError("read_wire_bit: cell does not hold an exact bit");
}

int read_output_bit(const Activations& acts, const FixedFormat& fmt,
                    const SymmetricCircuit& c, const CompileReport& rep) {
    return read_wire_bit(acts, fmt, c, rep, c.output_wire());
}

}  // namespace fclab
