#include "fclab/engine.hpp"

#include <algorithm>
#include <thread>

namespace fclab {

namespace {

int wacc_bits(const FixedFormat& fmt) { return 4 * fmt.frac_bits + 64; }
int exp_guard(const FixedFormat& fmt) { return wacc_bits(fmt) + 16; }

// floor(exp(u) * 2^wacc) * 2^-wacc for u <= 0; arguments at or below
// -(wacc+2) flush straight to zero (exp(u) < 2^-(wacc+2) there, which the
// floor would kill anyway), keeping certified-exp arguments small.
Dyadic flushed_exp(const Dyadic& u, int wacc, int guard) {
    if (u.is_zero()) return Dyadic(BigInt(1), 0);
    if (cmp(u, Dyadic(BigInt(-(wacc + 2)), 0)) <= 0) return Dyadic::zero();
    return floor_to_scale(exp_dyadic(u, guard), -wacc);
}

Dyadic dot(const DVec& a, const DVec& b) {
    Dyadic acc = Dyadic::zero();
    for (std::size_t i = 0; i < a.size(); ++i) acc = add(acc, mul(a[i], b[i]));
    return acc;
}

void validate_ops(const std::vector<MlpOp>& ops, int width, int depth = 0) {
    if (depth > 16) throw ValidationError("MlpProgram: branch nesting too deep");
    for (const auto& op : ops) {
        switch (op.kind) {
            case MlpOpKind::Affine: {
                if (static_cast<int>(op.W.size()) != width ||
                    static_cast<int>(op.b.size()) != width)
                    throw ValidationError("MlpProgram: affine shape mismatch");
                for (const auto& row : op.W)
                    if (static_cast<int>(row.size()) != width)
                        throw ValidationError("MlpProgram: affine shape mismatch");
                break;
            }
            case MlpOpKind::RoundInt:
            case MlpOpKind::Step:
                if (op.begin < 0 || op.end > width || op.begin > op.end)
                    throw ValidationError("MlpProgram: slot range out of bounds");
                break;
            case MlpOpKind::ToBits:
                if (op.src < 0 || op.src >= width || op.width < 1 || op.begin < 0 ||
                    op.begin + op.width > width)
                    throw ValidationError("MlpProgram: to_bits slots out of bounds");
                break;
            case MlpOpKind::DivmodConst:
                if (op.src < 0 || op.src >= width || op.q_dst < 0 || op.q_dst >= width ||
                    op.r_dst < 0 || op.r_dst >= width)
                    throw ValidationError("MlpProgram: divmod slots out of bounds");
                if (op.divisor < 1) throw ValidationError("MlpProgram: divisor must be >= 1");
                break;
            case MlpOpKind::SetConst:
                if (op.begin < 0 || op.begin >= width)
                    throw ValidationError("MlpProgram: set_const slot out of bounds");
                break;
            case MlpOpKind::Branch:
                if (op.src < 0 || op.src >= width)
                    throw ValidationError("MlpProgram: branch flag out of bounds");
                validate_ops(op.then_ops, width, depth + 1);
                validate_ops(op.else_ops, width, depth + 1);
                break;
        }
    }
}

BigInt exact_int(const Dyadic& v, const char* ctx) {
    Dyadic n = v;
    n.normalize();
    if (n.is_zero()) return BigInt(0);
    if (n.exp2 < 0)
        throw ValidationError(std::string(ctx) + ": value is not an exact integer");
    return shl(n.mant, n.exp2);
}

void validate_matrix(const Mat& m, int rows, int cols, const FixedFormat& fmt,
                     const char* name) {
    if (static_cast<int>(m.size()) != rows)
        throw ValidationError(std::string("TransformerSpec: ") + name + " row count");
    for (const auto& row : m) {
        if (static_cast<int>(row.size()) != cols)
            throw ValidationError(std::string("TransformerSpec: ") + name + " column count");
        for (const auto& e : row)
            if (e < fmt.raw_min() || e > fmt.raw_max())
                throw ValidationError(std::string("TransformerSpec: ") + name +
                                      " entry outside format range");
    }
}

// Visible pieces for a query position: [begin, end) source ranges in
// canonical block order.
std::vector<std::pair<std::size_t, std::size_t>> visible_pieces(
    const std::vector<BlockSpan>& blocks, std::size_t pos, MaskMode mask) {
    std::vector<std::pair<std::size_t, std::size_t>> pieces;
    for (const auto& span : blocks) {
        if (mask == MaskMode::Full) {
            pieces.emplace_back(span.start, span.start + span.len);
            continue;
        }
        if (pos >= span.start + span.len) {
            pieces.emplace_back(span.start, span.start + span.len);
        } else if (pos >= span.start) {
            pieces.emplace_back(span.start, pos + 1);
        }
        // blocks after the query contribute nothing under the causal mask
    }
    return pieces;
}

std::vector<BlockSpan> effective_blocks(const Prompt& prompt) {
    if (!prompt.blocks.empty()) return prompt.blocks;
    std::vector<BlockSpan> spans;
    spans.reserve(prompt.tokens.size());
    for (std::size_t i = 0; i < prompt.tokens.size(); ++i)
        spans.push_back(BlockSpan{prompt.tokens[i].block, i, 1});
    return spans;
}

void validate_blocks(const std::vector<BlockSpan>& blocks, std::size_t n) {
    std::size_t at = 0;
    for (const auto& span : blocks) {
        if (span.start != at)
            throw ValidationError("Prompt: blocks must tile positions contiguously");
        if (span.len == 0) throw ValidationError("Prompt: empty block");
        at += span.len;
    }
    if (at != n) throw ValidationError("Prompt: blocks do not cover all positions");
}

}  // namespace

void mlp_apply(const std::vector<MlpOp>& ops, DVec& v) {
    const int width = static_cast<int>(v.size());
    for (const auto& op : ops) {
        switch (op.kind) {
            case MlpOpKind::Affine: {
                DVec out(static_cast<std::size_t>(width));
                for (int r = 0; r < width; ++r) {
                    Dyadic acc = op.b[static_cast<std::size_t>(r)];
                    const auto& row = op.W[static_cast<std::size_t>(r)];
                    for (int c = 0; c < width; ++c)
                        if (!row[static_cast<std::size_t>(c)].is_zero() &&
                            !v[static_cast<std::size_t>(c)].is_zero())
                            acc = add(acc, mul(row[static_cast<std::size_t>(c)],
                                               v[static_cast<std::size_t>(c)]));
                    out[static_cast<std::size_t>(r)] = acc;
                }
                v = std::move(out);
                break;
            }
            case MlpOpKind::RoundInt:
                for (int k = op.begin; k < op.end; ++k)
                    v[static_cast<std::size_t>(k)] =
                        round_half_even_to_scale(v[static_cast<std::size_t>(k)], 0);
                break;
            case MlpOpKind::Step:
                for (int k = op.begin; k < op.end; ++k)
                    v[static_cast<std::size_t>(k)] =
                        Dyadic(BigInt(v[static_cast<std::size_t>(k)].sign() >= 0 ? 1 : 0), 0);
                break;
            case MlpOpKind::ToBits: {
                BigInt iv = exact_int(v[static_cast<std::size_t>(op.src)], "to_bits");
                if (iv < 0 || iv >= shl(BigInt(1), op.width))
                    throw ValidationError("to_bits: value out of range");
                for (int k = 0; k < op.width; ++k) {
                    bool bit = boost::multiprecision::bit_test(
                        iv, static_cast<unsigned>(op.width - 1 - k));
                    v[static_cast<std::size_t>(op.begin + k)] = Dyadic(BigInt(bit ? 1 : 0), 0);
                }
                break;
            }
            case MlpOpKind::DivmodConst: {
                BigInt iv = exact_int(v[static_cast<std::size_t>(op.src)], "divmod");
                if (iv < 0) throw ValidationError("divmod: negative value");
                BigInt q = iv / op.divisor;
                BigInt r = iv - q * op.divisor;
                v[static_cast<std::size_t>(op.q_dst)] = Dyadic(q, 0);
                v[static_cast<std::size_t>(op.r_dst)] = Dyadic(r, 0);
                break;
            }
            case MlpOpKind::SetConst:
                v[static_cast<std::size_t>(op.begin)] = op.value;
                break;
            case MlpOpKind::Branch: {
                bool taken = cmp(v[static_cast<std::size_t>(op.src)],
                                 Dyadic(BigInt(1), -1)) >= 0;
                mlp_apply(taken ? op.then_ops : op.else_ops, v);
                break;
            }
        }
    }
}

Vec quantize_vec(const DVec& v, const FixedFormat& fmt, SatFlag& sat) {
    Vec out;
    out.reserve(v.size());
    for (const auto& e : v) out.push_back(quantize(e, fmt, sat));
    return out;
}

DVec mat_vec(const Mat& m, const DVec& v, const FixedFormat& fmt) {
    DVec out;
    out.reserve(m.size());
    for (const auto& row : m) {
        Dyadic acc = Dyadic::zero();
        for (std::size_t c = 0; c < row.size(); ++c)
            if (row[c] != 0 && !v[c].is_zero())
                acc = add(acc, mul(Dyadic(row[c], -fmt.frac_bits), v[c]));
        out.push_back(acc);
    }
    return out;
}

PieceWire attention_piece(const DVec& q, const std::vector<DVec>& keys,
                          const std::vector<DVec>& values, const FixedFormat& fmt,
                          const FixedFormat& score_fmt, SatFlag& sat,
                          std::vector<BigRat>* weights_out) {
    if (keys.empty() || keys.size() != values.size())
        throw ValidationError("attention_piece: bad piece");
    const int wacc = wacc_bits(fmt);
    const int guard = exp_guard(fmt);
    const std::size_t count = keys.size();

    std::vector<Dyadic> s(count);
    for (std::size_t t = 0; t < count; ++t) s[t] = dot(q, keys[t]);
    Dyadic M = s[0];
    for (std::size_t t = 1; t < count; ++t)
        if (cmp(s[t], M) > 0) M = s[t];

    std::vector<Dyadic> w(count);
    Dyadic D = Dyadic::zero();
    for (std::size_t t = 0; t < count; ++t) {
        w[t] = flushed_exp(sub(s[t], M), wacc, guard);
        D = add(D, w[t]);
    }
    // The max-scoring term contributes exactly 1, so D >= 1 > 0.

    const std::size_t d = values[0].size();
    PieceWire wire;
    wire.ytilde.reserve(d);
    BigRat Dr = D.to_rational();
    for (std::size_t e = 0; e < d; ++e) {
        Dyadic acc = Dyadic::zero();
        for (std::size_t t = 0; t < count; ++t)
            if (!w[t].is_zero() && !values[t][e].is_zero())
                acc = add(acc, mul(w[t], values[t][e]));
        wire.ytilde.push_back(quantize(acc.to_rational() / Dr, fmt, sat));
    }
    wire.lse = quantize(add(M, log_dyadic(D, guard)), score_fmt, sat);

    if (weights_out) {
        weights_out->clear();
        weights_out->reserve(count);
        for (std::size_t t = 0; t < count; ++t)
            weights_out->push_back(w[t].to_rational() / Dr);
    }
    return wire;
}

Vec recombine_pieces(const std::vector<PieceWire>& pieces, const FixedFormat& fmt,
                     const FixedFormat& score_fmt, SatFlag& sat,
                     std::vector<BigRat>* lambdas_out) {
    if (pieces.empty()) throw ValidationError("recombine_pieces: no pieces");
    const int wacc = wacc_bits(fmt);
    const int guard = exp_guard(fmt);

    FixedRaw max_lse = pieces[0].lse;
    for (const auto& p : pieces) max_lse = std::max(max_lse, p.lse);

    std::vector<Dyadic> lambda(pieces.size());
    Dyadic total = Dyadic::zero();
    for (std::size_t j = 0; j < pieces.size(); ++j) {
        lambda[j] = flushed_exp(Dyadic(pieces[j].lse - max_lse, -score_fmt.frac_bits),
                                wacc, guard);
        total = add(total, lambda[j]);
    }

    const std::size_t d = pieces[0].ytilde.size();
    BigRat Tr = total.to_rational();
    Vec out;
    out.reserve(d);
    for (std::size_t e = 0; e < d; ++e) {
        Dyadic acc = Dyadic::zero();
        for (std::size_t j = 0; j < pieces.size(); ++j)
            if (!lambda[j].is_zero() && pieces[j].ytilde[e] != 0)
                acc = add(acc, mul(lambda[j], Dyadic(pieces[j].ytilde[e], -fmt.frac_bits)));
        out.push_back(quantize(acc.to_rational() / Tr, fmt, sat));
    }

    if (lambdas_out) {
        lambdas_out->clear();
        lambdas_out->reserve(pieces.size());
        for (const auto& l : lambda) lambdas_out->push_back(l.to_rational() / Tr);
    }
    return out;
}

FixedFormat default_score_format(const ModelDims& dims, const FixedFormat& fmt) {
    int dH = dims.d * dims.H;
    int need = 4 * fmt.int_bits + 2 * KeyEncoding::bits_for(dH) + 6;
    int budget = dims.p - 1;
    int ib = std::min(need, budget);
    int fb = std::min(fmt.frac_bits, budget - ib);
    return FixedFormat{budget - fb, fb};
}

void TransformerSpec::validate() const {
    dims.validate();
    if (format.int_bits < 0 || format.frac_bits < 0 ||
        score_format.int_bits < 0 || score_format.frac_bits < 0)
        throw ValidationError("TransformerSpec: negative format fields");
    if (format.total_bits() > dims.p || score_format.total_bits() > dims.p)
        throw ValidationError("TransformerSpec: format wider than the p-bit wire budget");
    if (static_cast<int>(layers.size()) != dims.L)
        throw ValidationError("TransformerSpec: layer count must equal dims.L");
    const int dH = dims.d * dims.H;
    for (const auto& layer : layers) {
        if (static_cast<int>(layer.heads.size()) != dims.H)
            throw ValidationError("TransformerSpec: head count must equal dims.H");
        for (const auto& head : layer.heads) {
            validate_matrix(head.base.Q, dims.d, dH, format, "Q");
            validate_matrix(head.base.K, dims.d, dH, format, "K");
            validate_matrix(head.base.V, dims.d, dH, format, "V");
            for (const auto& [pos, params] : head.overrides) {
                (void)pos;
                validate_matrix(params.Q, dims.d, dH, format, "Q override");
                validate_matrix(params.K, dims.d, dH, format, "K override");
                validate_matrix(params.V, dims.d, dH, format, "V override");
            }
        }
        validate_ops(layer.mlp.ops, dH);
        for (const auto& [pos, ops] : layer.mlp.overrides) {
            (void)pos;
            validate_ops(ops, dH);
        }
    }
    if (embed.kind == EmbedKind::Compose) {
        if (!embed.compose || embed.compose->width != dH)
            throw ValidationError("TransformerSpec: compose embed width mismatch");
    }
    if (embed.kind == EmbedKind::Circuit) {
        if (!embed.circuit || embed.circuit->width != dH)
            throw ValidationError("TransformerSpec: circuit embed width mismatch");
    }
    if (embed.kind == EmbedKind::ValueBits && embed.offset + embed.width + 1 > dH)
        throw ValidationError("TransformerSpec: value-bits embed exceeds width");
}

Activations forward(const TransformerSpec& spec, const Prompt& prompt,
                    const ForwardOptions& opts) {
    spec.validate();
    const std::size_t n = prompt.size();
    if (n == 0) throw ValidationError("forward: empty prompt");
    auto blocks = effective_blocks(prompt);
    validate_blocks(blocks, n);
    const int dH = spec.dims.d * spec.dims.H;
    const int threads = std::max(1, opts.threads);

    Activations acts;
    acts.x.resize(static_cast<std::size_t>(spec.dims.L) + 1);
    acts.y.resize(static_cast<std::size_t>(spec.dims.L));
    if (opts.trace_alpha) acts.alpha.resize(static_cast<std::size_t>(spec.dims.L));

    // Embeddings.
    SatFlag sat;
    acts.x[0].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        DVec e = embed_token(spec.embed, spec.format, dH, prompt.tokens[i], i);
        if (static_cast<int>(e.size()) != dH)
            throw ValidationError("forward: embed width mismatch at position " +
                                  std::to_string(i));
        acts.x[0][i] = quantize_vec(e, spec.format, sat);
    }

    for (int l = 1; l <= spec.dims.L; ++l) {
        const Layer& layer = spec.layers[static_cast<std::size_t>(l - 1)];
        const auto& xin = acts.x[static_cast<std::size_t>(l - 1)];

        // Keys and values per (head, source position), exact dyadics.
        std::vector<std::vector<DVec>> keys(static_cast<std::size_t>(spec.dims.H));
        std::vector<std::vector<DVec>> vals(static_cast<std::size_t>(spec.dims.H));
        for (int h = 0; h < spec.dims.H; ++h) {
            keys[static_cast<std::size_t>(h)].resize(n);
            vals[static_cast<std::size_t>(h)].resize(n);
            for (std::size_t j = 0; j < n; ++j) {
                const HeadParams& hp = layer.heads[static_cast<std::size_t>(h)].at(j);
                DVec xj = to_dyadic(xin[j], spec.format);
                keys[static_cast<std::size_t>(h)][j] = mat_vec(hp.K, xj, spec.format);
                vals[static_cast<std::size_t>(h)][j] = mat_vec(hp.V, xj, spec.format);
            }
        }

        auto& xout = acts.x[static_cast<std::size_t>(l)];
        auto& yout = acts.y[static_cast<std::size_t>(l - 1)];
        xout.resize(n);
        yout.resize(n);
        if (opts.trace_alpha) {
            acts.alpha[static_cast<std::size_t>(l - 1)].assign(
                static_cast<std::size_t>(spec.dims.H),
                std::vector<std::vector<BigRat>>(n));
        }

        std::vector<SatFlag> flags(static_cast<std::size_t>(threads));
        auto run_range = [&](std::size_t lo, std::size_t hi, SatFlag& flag) {
            for (std::size_t i = lo; i < hi; ++i) {
                auto pieces = visible_pieces(blocks, i, spec.mask);
                DVec xi = to_dyadic(xin[i], spec.format);
                Vec yi;
                yi.reserve(static_cast<std::size_t>(dH));
                for (int h = 0; h < spec.dims.H; ++h) {
                    const HeadParams& hp = layer.heads[static_cast<std::size_t>(h)].at(i);
                    DVec q = mat_vec(hp.Q, xi, spec.format);
                    std::vector<PieceWire> wires;
                    wires.reserve(pieces.size());
                    std::vector<std::vector<BigRat>> piece_weights;
                    for (const auto& [b, e] : pieces) {
                        std::vector<DVec> pk(keys[static_cast<std::size_t>(h)].begin() +
                                                 static_cast<std::ptrdiff_t>(b),
                                             keys[static_cast<std::size_t>(h)].begin() +
                                                 static_cast<std::ptrdiff_t>(e));
                        std::vector<DVec> pv(vals[static_cast<std::size_t>(h)].begin() +
                                                 static_cast<std::ptrdiff_t>(b),
                                             vals[static_cast<std::size_t>(h)].begin() +
                                                 static_cast<std::ptrdiff_t>(e));
                        std::vector<BigRat> wts;
                        wires.push_back(attention_piece(
                            q, pk, pv, spec.format, spec.score_format, flag,
                            opts.trace_alpha ? &wts : nullptr));
                        if (opts.trace_alpha) piece_weights.push_back(std::move(wts));
                    }
                    std::vector<BigRat> lambdas;
                    Vec yh = recombine_pieces(wires, spec.format, spec.score_format, flag,
                                              opts.trace_alpha ? &lambdas : nullptr);
                    yi.insert(yi.end(), yh.begin(), yh.end());
                    if (opts.trace_alpha) {
                        std::vector<BigRat> row(n, BigRat(0));
                        for (std::size_t pj = 0; pj < pieces.size(); ++pj) {
                            for (std::size_t t = 0; t < piece_weights[pj].size(); ++t)
                                row[pieces[pj].first + t] =
                                    piece_weights[pj][t] * lambdas[pj];
                        }
                        acts.alpha[static_cast<std::size_t>(l - 1)]
                                  [static_cast<std::size_t>(h)][i] = std::move(row);
                    }
                }
                yout[i] = yi;
                DVec v = to_dyadic(yi, spec.format);
                mlp_apply(layer.mlp.at(i), v);
                if (static_cast<int>(v.size()) != dH)
                    throw ValidationError("forward: MLP changed the vector width");
                xout[i] = quantize_vec(v, spec.format, flag);
            }
        };

        if (threads == 1 || n < 2) {
            run_range(0, n, sat);
        } else {
            std::vector<std::thread> pool;
            std::size_t chunk = (n + static_cast<std::size_t>(threads) - 1) /
                                static_cast<std::size_t>(threads);
            for (int t = 0; t < threads; ++t) {
                std::size_t lo = static_cast<std::size_t>(t) * chunk;
                std::size_t hi = std::min(n, lo + chunk);
                if (lo >= hi) break;
                pool.emplace_back(run_range, lo, hi,
                                  std::ref(flags[static_cast<std::size_t>(t)]));
            }
            for (auto& th : pool) th.join();
            for (const auto& f : flags) sat.saturated = sat.saturated || f.saturated;
        }
    }

    acts.saturated = sat.saturated;
    return acts;
}

std::vector<Token> generate_with_cot(const TransformerSpec& spec, const Prompt& prompt,
                                     int steps, const DecodeSpec& decode,
                                     const ForwardOptions& opts, bool* saturated) {
    if (steps < 0) throw ValidationError("generate_with_cot: steps must be >= 0");
    Prompt work = prompt;
    if (work.blocks.empty()) work.blocks = effective_blocks(prompt);
    if (saturated) *saturated = false;
    std::vector<Token> out;
    out.reserve(static_cast<std::size_t>(steps));
    for (int step = 1; step <= steps; ++step) {
        Activations acts = forward(spec, work, opts);
        if (saturated) *saturated = *saturated || acts.saturated;
        Token tok;
        try {
            tok = decode_vector(decode, spec.format, acts.x.back().back(), step);
        } catch (const std::exception& e) {
            throw ValidationError("generate_with_cot: decode failed at step " +
                                  std::to_string(step) + ": " + e.what());
        }
        out.push_back(tok);
        work.blocks.push_back(BlockSpan{tok.block, work.tokens.size(), 1});
        work.tokens.push_back(tok);
    }
    return out;
}

}  // namespace fclab
