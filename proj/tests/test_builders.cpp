#include "doctest.h"

#include "fclab/builders.hpp"

#include <algorithm>
#include <vector>

using namespace fclab;

namespace {

TaskParams make_params(int L, std::int64_t m, std::vector<std::int64_t> n) {
    TaskParams p;
    p.L = L;
    p.m = m;
    p.n = std::move(n);
    return p;
}

// Every instance of a (small) family: odometer over the base value, all
// table entries, and all query digits.
std::vector<TaskInstance> all_instances(const TaskParams& params) {
    auto N = params.domain_sizes();
    std::vector<std::int64_t> radix;
    radix.push_back(params.m);
    for (int l = 1; l <= params.L; ++l)
        for (std::int64_t t = 0; t < N[static_cast<std::size_t>(l - 1)]; ++t)
            radix.push_back(N[static_cast<std::size_t>(l - 1)]);
    for (auto v : params.n) radix.push_back(v);

    std::vector<std::int64_t> digit(radix.size(), 0);
    std::vector<TaskInstance> out;
    for (;;) {
        TaskInstance inst;
        inst.params = params;
        std::size_t k = 0;
        inst.z0 = digit[k++] + 1;
        for (int l = 1; l <= params.L; ++l) {
            std::vector<std::int64_t> tab;
            for (std::int64_t t = 0; t < N[static_cast<std::size_t>(l - 1)]; ++t)
                tab.push_back(digit[k++] + 1);
            inst.z.push_back(tab);
        }
        for (int j = 0; j < params.L - 1; ++j) inst.w.push_back(digit[k++] + 1);
        out.push_back(inst);

        std::size_t c = 0;
        while (c < digit.size()) {
            if (++digit[c] < radix[c]) break;
            digit[c] = 0;
            ++c;
        }
        if (c == digit.size()) break;
    }
    return out;
}

void check_answers(const SolverBundle& bundle,
                   const std::vector<TaskInstance>& instances,
                   bool check_chain) {
    for (const auto& inst : instances) {
        SolverRun run = run_solver(bundle, inst);
        CompositionChain oracle = evaluate(inst);
        CHECK(run.answer == oracle.answer());
        if (check_chain) CHECK(run.chain == oracle.i);
        CHECK_FALSE(run.saturated);
    }
}

std::vector<TaskInstance> random_instances(const TaskParams& params, int count) {
    std::vector<TaskInstance> out;
    for (int s = 1; s <= count; ++s)
        out.push_back(generate(params, static_cast<std::uint64_t>(s)));
    return out;
}

// Re-derives every attention score of the last position from the built
// weights with exact arithmetic and checks that everything outside the
// top tie group trails the maximum by at least the certified margin.
void check_score_gaps(const SolverBundle& bundle, const TaskInstance& inst) {
    Prompt prompt = tokenize(inst);
    Activations acts = forward(bundle.spec, prompt);
    const TransformerSpec& spec = bundle.spec;
    const BigRat gap = bundle.margins.claimed_gap;
    REQUIRE(gap > 0);
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const auto& xin = acts.x[l];
        const std::size_t qi = xin.size() - 1;
        for (const auto& head : spec.layers[l].heads) {
            DVec q = mat_vec(head.base.Q, to_dyadic(xin[qi], spec.format), spec.format);
            std::vector<BigRat> scores;
            for (const auto& xrow : xin) {
                DVec kv = mat_vec(head.base.K, to_dyadic(xrow, spec.format), spec.format);
                BigRat s = 0;
                for (std::size_t t = 0; t < q.size(); ++t)
                    s += q[t].to_rational() * kv[t].to_rational();
                scores.push_back(s);
            }
            BigRat mx = *std::max_element(scores.begin(), scores.end());
            for (const auto& s : scores) {
                if (s == mx) continue;
                CHECK(s <= mx - gap);
            }
        }
    }
}

}  // namespace

TEST_CASE("retrieval scale: smallest grid value covering c * ln^2(n)") {
    FixedFormat fmt{8, 4};
    // ln(64)^2 = 17.2963...; at 4 fractional bits that lands on 277/16.
    FixedRaw r = retrieval_scale_raw(fmt, 1, 64);
    CHECK(r == 277);
    CHECK(retrieval_scale_raw(fmt, 2, 64) == 554);
    CHECK(retrieval_scale_raw(fmt, 1, 1) == 16);  // floor at 1.0
    FixedFormat tiny{2, 1};
    CHECK_THROWS_AS(retrieval_scale_raw(tiny, 1, 64), InsufficientPrecisionError);
}

TEST_CASE("retrieval head has the documented shape") {
    TaskParams params = make_params(2, 2, {2});
    KeyEncoding enc = KeyEncoding::for_task(params);
    layout::Depth s(enc);
    FixedFormat fmt{6, 2};
    HeadParams hp = build_retrieval_head(enc, fmt, BigInt(21) * 4);
    REQUIRE(static_cast<int>(hp.Q.size()) == s.width());
    REQUIRE(static_cast<int>(hp.K.size()) == s.width());
    REQUIRE(static_cast<int>(hp.V.size()) == s.width());
    // V is the identity at the format's unit.
    for (int r = 0; r < s.width(); ++r)
        for (int c = 0; c < s.width(); ++c)
            CHECK(hp.V[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] ==
                  (r == c ? BigInt(4) : BigInt(0)));
}

TEST_CASE("depth solver: exact answers on every instance of two small families") {
    TaskParams p1 = make_params(1, 2, {});
    SolverBundle b1 = build_depth_solver(p1);
    CHECK(b1.depth == 2);
    CHECK(static_cast<int>(b1.spec.layers.size()) == 2);
    CHECK(b1.spec.dims.H == 1);
    CHECK(b1.margins.all_pass());
    auto i1 = all_instances(p1);
    CHECK(i1.size() == 8);
    check_answers(b1, i1, false);

    TaskParams p2 = make_params(2, 2, {2});
    SolverBundle b2 = build_depth_solver(p2);
    CHECK(b2.depth == 3);
    CHECK(static_cast<int>(b2.spec.layers.size()) == 3);
    CHECK(b2.margins.all_pass());
    auto i2 = all_instances(p2);
    CHECK(i2.size() == 4096);
    check_answers(b2, i2, false);
}

TEST_CASE("depth solver: random deeper family") {
    TaskParams p = make_params(3, 2, {2, 2});
    SolverBundle b = build_depth_solver(p);
    CHECK(b.depth == 4);
    check_answers(b, random_instances(p, 200), false);
}

TEST_CASE("chain-of-thought solver: one layer, full chain reproduced") {
    TaskParams p1 = make_params(1, 2, {});
    SolverBundle b1 = build_cot_solver(p1);
    CHECK(b1.depth == 1);
    CHECK(static_cast<int>(b1.spec.layers.size()) == 1);
    CHECK(b1.spec.dims.H == 2);
    CHECK(b1.steps == 2);
    CHECK(b1.margins.all_pass());
    check_answers(b1, all_instances(p1), true);

    TaskParams p2 = make_params(2, 2, {2});
    SolverBundle b2 = build_cot_solver(p2);
    CHECK(b2.depth == 1);
    CHECK(b2.spec.dims.H == 3);
    CHECK(b2.steps == 3);
    check_answers(b2, all_instances(p2), true);
}

TEST_CASE("chain-of-thought solver: random deeper family") {
    TaskParams p = make_params(3, 2, {2, 2});
    SolverBundle b = build_cot_solver(p);
    CHECK(static_cast<int>(b.spec.layers.size()) == 1);
    check_answers(b, random_instances(p, 200), true);
}

TEST_CASE("encoder solver: logarithmic depth and exact answers") {
    TaskParams p1 = make_params(1, 2, {});
    SolverBundle b1 = build_encoder_solver(p1);
    CHECK(b1.depth == 2);
    CHECK(b1.spec.mask == MaskMode::Full);
    CHECK(b1.spec.dims.H == 2);
    CHECK(b1.margins.all_pass());
    check_answers(b1, all_instances(p1), false);

    TaskParams p2 = make_params(2, 2, {2});
    SolverBundle b2 = build_encoder_solver(p2);
    CHECK(b2.depth == 3);
    check_answers(b2, all_instances(p2), false);

    TaskParams p4 = make_params(4, 2, {2, 2, 2});
    SolverBundle b4 = build_encoder_solver(p4);
    CHECK(b4.depth == 4);
    check_answers(b4, random_instances(p4, 50), false);
}

TEST_CASE("encoder solver: random deeper family") {
    TaskParams p = make_params(3, 2, {2, 2});
    SolverBundle b = build_encoder_solver(p);
    CHECK(b.depth == 1 + 3);  // setup + ceil(log2(5))
    check_answers(b, random_instances(p, 100), false);
}

TEST_CASE("all three solvers agree with each other") {
    TaskParams p = make_params(3, 3, {2, 3});
    SolverBundle depth = build_depth_solver(p);
    SolverBundle cot = build_cot_solver(p);
    SolverBundle enc = build_encoder_solver(p);
    for (const auto& inst : random_instances(p, 25)) {
        std::int64_t a = evaluate(inst).answer();
        CHECK(run_solver(depth, inst).answer == a);
        CHECK(run_solver(cot, inst).answer == a);
        CHECK(run_solver(enc, inst).answer == a);
    }
}

TEST_CASE("certified margin bounds every realized score gap") {
    TaskParams p = make_params(3, 2, {2, 2});
    TaskInstance inst = generate(p, 7);
    check_score_gaps(build_depth_solver(p), inst);
    check_score_gaps(build_cot_solver(p), inst);
    check_score_gaps(build_encoder_solver(p), inst);

    TaskParams p1 = make_params(1, 3, {});
    TaskInstance inst1 = generate(p1, 11);
    check_score_gaps(build_depth_solver(p1), inst1);
    check_score_gaps(build_cot_solver(p1), inst1);
    check_score_gaps(build_encoder_solver(p1), inst1);
}

TEST_CASE("margin report carries the four grid-exactness checks") {
    SolverBundle b = build_depth_solver(make_params(2, 2, {2}));
    REQUIRE(b.margins.checks.size() == 4);
    CHECK(b.margins.checks[0].name == "piece_average_on_grid");
    CHECK(b.margins.checks[1].name == "lse_on_grid");
    CHECK(b.margins.checks[2].name == "recombination_on_grid");
    CHECK(b.margins.checks[3].name == "scale_fits_format");
    for (const auto& c : b.margins.checks) {
        CHECK(c.pass);
        CHECK(!c.lhs.empty());
        CHECK(!c.rhs.empty());
    }
    CHECK(b.margins.scale_raw > 0);
}

TEST_CASE("depth solver splits its mass between self and target at the query") {
    TaskParams p = make_params(2, 2, {2});
    SolverBundle b = build_depth_solver(p);
    TaskInstance inst = generate(p, 3);
    Prompt prompt = tokenize(inst);
    ForwardOptions opts;
    opts.trace_alpha = true;
    Activations acts = forward(b.spec, prompt, opts);
    const std::size_t last = prompt.size() - 1;
    const auto& row = acts.alpha[0][0][last];
    // Self plus the unique key match carry all but a margin-sized sliver.
    std::vector<BigRat> sorted(row.begin(), row.end());
    std::sort(sorted.begin(), sorted.end());
    BigRat top2 = sorted[sorted.size() - 1] + sorted[sorted.size() - 2];
    CHECK(top2 > BigRat(999999, 1000000));
    CHECK(sorted.back() < BigRat(51, 100));
    BigRat total = 0;
    for (const auto& a : row) total += a;
    CHECK(total == 1);
}

TEST_CASE("solver runs are thread-count invariant") {
    TaskParams p = make_params(3, 2, {2, 2});
    TaskInstance inst = generate(p, 5);
    SolverBundle depth = build_depth_solver(p);
    SolverRun r1 = run_solver(depth, inst, 1);
    SolverRun r4 = run_solver(depth, inst, 4);
    CHECK(r1.answer == r4.answer);
    CHECK(r1.chain == r4.chain);
    SolverBundle cot = build_cot_solver(p);
    SolverRun c1 = run_solver(cot, inst, 1);
    SolverRun c4 = run_solver(cot, inst, 4);
    CHECK(c1.emitted == c4.emitted);
}

TEST_CASE("builders are deterministic") {
    TaskParams p = make_params(2, 3, {2});
    SolverBundle a = build_depth_solver(p);
    SolverBundle b = build_depth_solver(p);
    CHECK(a.spec.format == b.spec.format);
    CHECK(a.spec.score_format == b.spec.score_format);
    CHECK(a.margins.scale_raw == b.margins.scale_raw);
    CHECK(a.spec.layers[0].heads[0].base.Q == b.spec.layers[0].heads[0].base.Q);
}

TEST_CASE("degenerate families still solve") {
    // Domain sizes of 1 force every value to 1; queries have radix 1.
    TaskParams p = make_params(2, 1, {1});
    for (const auto& inst : all_instances(p)) {
        CHECK(run_solver(build_depth_solver(p), inst).answer == 1);
        CHECK(run_solver(build_cot_solver(p), inst).answer == 1);
        CHECK(run_solver(build_encoder_solver(p), inst).answer == 1);
    }
    // Wide single hop.
    TaskParams w = make_params(1, 5, {});
    SolverBundle b = build_depth_solver(w);
    check_answers(b, random_instances(w, 20), false);
}
