#include <doctest.h>

#include "fclab/task.hpp"

#include <functional>
#include <set>

using namespace fclab;

namespace {

// Reference evaluator written independently of evaluate(): walks the
// mathematical definition literally, recursing from the top level.
std::int64_t reference_answer(const TaskInstance& inst) {
    auto N = inst.params.domain_sizes();
    // i_l as a function of l, computed top-down by recursion.
    std::function<std::int64_t(int)> ival = [&](int l) -> std::int64_t {
        if (l == 0) return inst.z0;
        if (l == 1) return inst.z[0][static_cast<std::size_t>(inst.z0 - 1)];
        std::int64_t prev = ival(l - 1);
        std::int64_t idx =
            (inst.w[static_cast<std::size_t>(l - 2)] - 1) * N[static_cast<std::size_t>(l - 2)] +
            prev;
        return inst.z[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(idx - 1)];
    };
    return ival(inst.params.L);
}

TaskInstance frozen_depth2() {
    TaskInstance inst;
    inst.params = TaskParams{2, 3, {2}};
    inst.z0 = 2;
    inst.z = {{3, 1, 2}, {4, 5, 6, 1, 2, 3}};
    inst.w = {2};
    return inst;
}

}  // namespace

TEST_CASE("pair_index is a bijection onto [n*N]") {
    std::set<std::int64_t> seen;
    for (std::int64_t w = 1; w <= 3; ++w)
        for (std::int64_t i = 1; i <= 5; ++i) seen.insert(pair_index(w, i, 3, 5));
    CHECK(seen.size() == 15);
    CHECK(*seen.begin() == 1);
    CHECK(*seen.rbegin() == 15);
    CHECK_THROWS_AS(pair_index(0, 1, 3, 5), ValidationError);
    CHECK_THROWS_AS(pair_index(1, 6, 3, 5), ValidationError);
}

TEST_CASE("evaluate: frozen depth-two instance") {
    auto inst = frozen_depth2();
    auto chain = evaluate(inst);
    REQUIRE(chain.i.size() == 3);
    CHECK(chain.i[0] == 2);
    CHECK(chain.i[1] == 1);  // z_1(2)
    CHECK(chain.i[2] == 1);  // z_2(pair(2,1)) = z_2(4)
    CHECK(chain.answer() == 1);
}

TEST_CASE("evaluate: depth one uses no query") {
    TaskInstance inst;
    inst.params = TaskParams{1, 4, {}};
    inst.z0 = 3;
    inst.z = {{2, 3, 4, 1}};
    auto chain = evaluate(inst);
    REQUIRE(chain.i.size() == 2);
    CHECK(chain.i[0] == 3);
    CHECK(chain.answer() == 4);
}

TEST_CASE("evaluate matches the independent reference on random instances") {
    std::vector<TaskParams> families{
        TaskParams{1, 7, {}},
        TaskParams{2, 3, {4}},
        TaskParams{3, 2, {2, 3}},
    };
    std::uint64_t seed = 1;
    for (const auto& params : families)
        for (int t = 0; t < 500; ++t) {
            auto inst = generate(params, seed++);
            CHECK(evaluate(inst).answer() == reference_answer(inst));
        }
}

TEST_CASE("generate is deterministic in the seed and in range") {
    TaskParams params{3, 2, {2, 2}};
    auto a = generate(params, 42);
    auto b = generate(params, 42);
    CHECK(a.z0 == b.z0);
    CHECK(a.z == b.z);
    CHECK(a.w == b.w);
    auto c = generate(params, 43);
    bool differs = a.z0 != c.z0 || a.z != c.z || a.w != c.w;
    CHECK(differs);
    // validate() inside evaluate() confirms every entry is in range.
    CHECK_NOTHROW(evaluate(a));
}

TEST_CASE("generate covers the whole range over many seeds") {
    TaskParams params{1, 5, {}};
    std::set<std::int64_t> seen;
    for (std::uint64_t s = 0; s < 200; ++s) seen.insert(generate(params, s).z0);
    CHECK(seen.size() == 5);
}

TEST_CASE("pack_query and unpack_query invert each other") {
    TaskParams params{3, 2, {2, 3}};
    std::set<std::int64_t> packed;
    for (std::int64_t w1 = 1; w1 <= 2; ++w1)
        for (std::int64_t w2 = 1; w2 <= 3; ++w2) {
            auto v = pack_query(params, {w1, w2});
            CHECK(unpack_query(params, v) == std::vector<std::int64_t>{w1, w2});
            packed.insert(v);
        }
    CHECK(packed.size() == 6);
    CHECK(*packed.begin() == 0);
    CHECK(*packed.rbegin() == 5);
    TaskParams depth1{1, 9, {}};
    CHECK(pack_query(depth1, {}) == 0);
    CHECK(unpack_query(depth1, 0).empty());
    CHECK_THROWS_AS(unpack_query(depth1, 1), ValidationError);
}

TEST_CASE("tokenize produces descending table blocks then base then query") {
    auto inst = frozen_depth2();
    auto prompt = tokenize(inst);
    REQUIRE(prompt.tokens.size() == 11);  // 6 + 3 + 1 + 1
    REQUIRE(prompt.blocks.size() == 4);
    CHECK(prompt.blocks[0] == BlockSpan{2, 0, 6});
    CHECK(prompt.blocks[1] == BlockSpan{1, 6, 3});
    CHECK(prompt.blocks[2] == BlockSpan{0, 9, 1});
    CHECK(prompt.blocks[3] == BlockSpan{-1, 10, 1});
    CHECK(prompt.tokens[0] == Token{2, 1, 4});    // z_2(1)
    CHECK(prompt.tokens[6] == Token{1, 1, 3});    // z_1(1)
    CHECK(prompt.tokens[9] == Token{0, 1, 2});    // z0
    CHECK(prompt.tokens[10] == Token{-1, 1, 1});  // packed w = w_1 - 1
}

TEST_CASE("detokenize inverts tokenize") {
    for (std::uint64_t s = 0; s < 50; ++s) {
        TaskParams params{3, 2, {2, 3}};
        auto inst = generate(params, s);
        auto back = detokenize(params, tokenize(inst));
        CHECK(back.z0 == inst.z0);
        CHECK(back.z == inst.z);
        CHECK(back.w == inst.w);
    }
}

TEST_CASE("instance validation rejects malformed data") {
    auto inst = frozen_depth2();
    inst.z0 = 4;
    CHECK_THROWS_AS(inst.validate(), ValidationError);
    inst = frozen_depth2();
    inst.z[1].pop_back();
    CHECK_THROWS_AS(inst.validate(), ValidationError);
    inst = frozen_depth2();
    inst.w = {2, 1};
    CHECK_THROWS_AS(inst.validate(), ValidationError);
    inst = frozen_depth2();
    inst.z[0][0] = 0;
    CHECK_THROWS_AS(inst.validate(), ValidationError);
    TaskParams bad{0, 1, {}};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}
