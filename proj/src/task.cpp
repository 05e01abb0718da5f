#include "fclab/task.hpp"

#include <numeric>

namespace fclab {

void TaskInstance::validate() const {
    params.validate();
    auto N = params.domain_sizes();
    if (z0 < 1 || z0 > params.m)
        throw ValidationError("TaskInstance: z0 out of range");
    if (static_cast<int>(z.size()) != params.L)
        throw ValidationError("TaskInstance: need exactly L tables");
    for (int l = 1; l <= params.L; ++l) {
        const auto& table = z[static_cast<std::size_t>(l - 1)];
        auto dom = N[static_cast<std::size_t>(l - 1)];
        if (static_cast<std::int64_t>(table.size()) != dom)
            throw ValidationError("TaskInstance: table z_" + std::to_string(l) +
                                  " has wrong size");
        for (auto v : table)
            if (v < 1 || v > dom)
                throw ValidationError("TaskInstance: table z_" + std::to_string(l) +
                                      " entry out of range");
    }
    if (static_cast<int>(w.size()) != params.L - 1)
        throw ValidationError("TaskInstance: w must have exactly L-1 entries");
    for (int l = 1; l <= params.L - 1; ++l)
        if (w[static_cast<std::size_t>(l - 1)] < 1 ||
            w[static_cast<std::size_t>(l - 1)] > params.n[static_cast<std::size_t>(l - 1)])
            throw ValidationError("TaskInstance: w_" + std::to_string(l) +
                                  " out of range");
}

std::int64_t pair_index(std::int64_t wc, std::int64_t i, std::int64_t n_l,
                        std::int64_t N_prev) {
    if (wc < 1 || wc > n_l) throw ValidationError("pair_index: w out of range");
    if (i < 1 || i > N_prev) throw ValidationError("pair_index: i out of range");
    return (wc - 1) * N_prev + i;
}

CompositionChain evaluate(const TaskInstance& inst) {
    inst.validate();
    auto N = inst.params.domain_sizes();
    CompositionChain chain;
    chain.i.reserve(static_cast<std::size_t>(inst.params.L) + 1);
    chain.i.push_back(inst.z0);
    // i_1 = z_1(i_0); i_{l+1} = z_{l+1}(pair(w_l, i_l)).
    std::int64_t cur = inst.z[0][static_cast<std::size_t>(inst.z0 - 1)];
    chain.i.push_back(cur);
    for (int l = 1; l <= inst.params.L - 1; ++l) {
        auto idx = pair_index(inst.w[static_cast<std::size_t>(l - 1)], cur,
                              inst.params.n[static_cast<std::size_t>(l - 1)],
                              N[static_cast<std::size_t>(l - 1)]);
        cur = inst.z[static_cast<std::size_t>(l)][static_cast<std::size_t>(idx - 1)];
        chain.i.push_back(cur);
    }
    return chain;
}

TaskInstance generate(const TaskParams& params, std::uint64_t seed) {
    params.validate();
    auto N = params.domain_sizes();
    Rng rng(seed);
    TaskInstance inst;
    inst.params = params;
    inst.z0 = rng.range(1, params.m);
    inst.z.resize(static_cast<std::size_t>(params.L));
    for (int l = 1; l <= params.L; ++l) {
        auto dom = N[static_cast<std::size_t>(l - 1)];
        auto& table = inst.z[static_cast<std::size_t>(l - 1)];
        table.resize(static_cast<std::size_t>(dom));
        for (auto& v : table) v = rng.range(1, dom);
    }
    inst.w.resize(static_cast<std::size_t>(params.L - 1));
    for (int l = 1; l <= params.L - 1; ++l)
        inst.w[static_cast<std::size_t>(l - 1)] =
            rng.range(1, params.n[static_cast<std::size_t>(l - 1)]);
    return inst;
}

std::int64_t pack_query(const TaskParams& params, const std::vector<std::int64_t>& w) {
    if (static_cast<int>(w.size()) != params.L - 1)
        throw ValidationError("pack_query: wrong arity");
    if (params.L == 1) return 0;
    // Mixed radix, w_1 least significant.
    std::int64_t packed = 0;
    for (int l = params.L - 1; l >= 1; --l) {
        auto digit = w[static_cast<std::size_t>(l - 1)] - 1;
        auto radix = params.n[static_cast<std::size_t>(l - 1)];
        if (digit < 0 || digit >= radix) throw ValidationError("pack_query: w out of range");
        packed = packed * radix + digit;
    }
    return packed;
}

std::vector<std::int64_t> unpack_query(const TaskParams& params, std::int64_t packed) {
    if (params.L == 1) {
        if (packed != 0) throw ValidationError("unpack_query: expected sentinel 0");
        return {};
    }
    std::vector<std::int64_t> w(static_cast<std::size_t>(params.L - 1));
    for (int l = 1; l <= params.L - 1; ++l) {
        auto radix = params.n[static_cast<std::size_t>(l - 1)];
        w[static_cast<std::size_t>(l - 1)] = packed % radix + 1;
        packed /= radix;
    }
    if (packed != 0) throw ValidationError("unpack_query: value out of range");
    return w;
}

Prompt tokenize(const TaskInstance& inst) {
    inst.validate();
    auto N = inst.params.domain_sizes();
    Prompt prompt;
    prompt.tokens.reserve(static_cast<std::size_t>(
        std::accumulate(N.begin(), N.end(), std::int64_t{2})));
    // Table blocks in descending order z_L ... z_1.
    for (int l = inst.params.L; l >= 1; --l) {
        BlockSpan span{l, prompt.tokens.size(),
                       static_cast<std::size_t>(N[static_cast<std::size_t>(l - 1)])};
        const auto& table = inst.z[static_cast<std::size_t>(l - 1)];
        for (std::int64_t a = 1; a <= N[static_cast<std::size_t>(l - 1)]; ++a)
            prompt.tokens.push_back(Token{l, a, table[static_cast<std::size_t>(a - 1)]});
        prompt.blocks.push_back(span);
    }
    prompt.blocks.push_back(BlockSpan{0, prompt.tokens.size(), 1});
    prompt.tokens.push_back(Token{0, 1, inst.z0});
    prompt.blocks.push_back(BlockSpan{-1, prompt.tokens.size(), 1});
    prompt.tokens.push_back(Token{-1, 1, pack_query(inst.params, inst.w)});
    return prompt;
}

TaskInstance detokenize(const TaskParams& params, const Prompt& prompt) {
    params.validate();
    auto N = params.domain_sizes();
    TaskInstance inst;
    inst.params = params;
    inst.z.resize(static_cast<std::size_t>(params.L));
    if (prompt.blocks.size() != static_cast<std::size_t>(params.L) + 2)
        throw ValidationError("detokenize: wrong block count");
    for (const auto& span : prompt.blocks) {
        if (span.start + span.len > prompt.tokens.size())
            throw ValidationError("detokenize: block span out of bounds");
        if (span.block >= 1 && span.block <= params.L) {
            auto dom = N[static_cast<std::size_t>(span.block - 1)];
            if (static_cast<std::int64_t>(span.len) != dom)
                throw ValidationError("detokenize: table block has wrong length");
            auto& table = inst.z[static_cast<std::size_t>(span.block - 1)];
            table.resize(span.len);
            for (std::size_t t = 0; t < span.len; ++t)
                table[t] = prompt.tokens[span.start + t].value;
        } else if (span.block == 0) {
            if (span.len != 1) throw ValidationError("detokenize: base block must be one token");
            inst.z0 = prompt.tokens[span.start].value;
        } else if (span.block == -1) {
            if (span.len != 1) throw ValidationError("detokenize: query block must be one token");
            inst.w = unpack_query(params, prompt.tokens[span.start].value);
        } else {
            throw ValidationError("detokenize: unexpected block label");
        }
    }
    inst.validate();
    return inst;
}

}  // namespace fclab
