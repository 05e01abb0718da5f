#include "fclab/jsonio.hpp"

#include "fclab/errors.hpp"

#include <cstdint>
#include <utility>

namespace fclab {

namespace {

std::string kind_name(MlpOpKind k) {
    switch (k) {
        case MlpOpKind::Affine: return "affine";
        case MlpOpKind::RoundInt: return "round_int";
        case MlpOpKind::Step: return "step";
        case MlpOpKind::ToBits: return "to_bits";
        case MlpOpKind::DivmodConst: return "divmod_const";
        case MlpOpKind::SetConst: return "set_const";
        case MlpOpKind::Branch: return "branch";
    }
    throw ValidationError("unknown mlp op kind");
}

MlpOpKind kind_from_name(const std::string& s) {
    if (s == "affine") return MlpOpKind::Affine;
    if (s == "round_int") return MlpOpKind::RoundInt;
    if (s == "step") return MlpOpKind::Step;
    if (s == "to_bits") return MlpOpKind::ToBits;
    if (s == "divmod_const") return MlpOpKind::DivmodConst;
    if (s == "set_const") return MlpOpKind::SetConst;
    if (s == "branch") return MlpOpKind::Branch;
    throw ValidationError("unknown mlp op kind '" + s + "'");
}

Json dyadic_json(const Dyadic& v) {
    Json j;
    j["m"] = BigInt(v.mant).str();
    j["e"] = v.exp2;
    return j;
}

Dyadic dyadic_from_json(const Json& j) {
    return Dyadic(bigint_from_json(member(j, "m")), int_member(j, "e"));
}

Json vec_json(const Vec& v) {
    Json a = Json::array();
    for (const auto& r : v) a.push_back(BigInt(r).str());
    return a;
}

Vec vec_from_json(const Json& j) {
    if (!j.is_array()) throw ValidationError("json: expected an array of raw values");
    Vec v;
    v.reserve(j.size());
    for (const auto& e : j) v.push_back(bigint_from_json(e));
    return v;
}

Json mat_json(const Mat& m) {
    Json a = Json::array();
    for (const auto& row : m) a.push_back(vec_json(row));
    return a;
}

Mat mat_from_json(const Json& j) {
    if (!j.is_array()) throw ValidationError("json: expected a matrix");
    Mat m;
    m.reserve(j.size());
    for (const auto& row : j) m.push_back(vec_from_json(row));
    return m;
}

Json format_json(const FixedFormat& f) {
    Json j;
    j["int_bits"] = f.int_bits;
    j["frac_bits"] = f.frac_bits;
    return j;
}

FixedFormat format_from_json(const Json& j) {
    FixedFormat f;
    f.int_bits = static_cast<int>(int_member(j, "int_bits"));
    f.frac_bits = static_cast<int>(int_member(j, "frac_bits"));
    return f;
}

Json op_to_json(const MlpOp& op);

Json ops_to_json(const std::vector<MlpOp>& ops) {
    Json a = Json::array();
    for (const auto& op : ops) a.push_back(op_to_json(op));
    return a;
}

Json op_to_json(const MlpOp& op) {
    Json j;
    j["kind"] = kind_name(op.kind);
    switch (op.kind) {
        case MlpOpKind::Affine: {
            Json w = Json::array();
            for (const auto& row : op.W) {
                Json r = Json::array();
                for (const auto& e : row) r.push_back(dyadic_json(e));
                w.push_back(std::move(r));
            }
            j["W"] = std::move(w);
            Json b = Json::array();
            for (const auto& e : op.b) b.push_back(dyadic_json(e));
            j["b"] = std::move(b);
            break;
        }
        case MlpOpKind::RoundInt:
        case MlpOpKind::Step:
            j["begin"] = op.begin;
            j["end"] = op.end;
            break;
        case MlpOpKind::ToBits:
            j["src"] = op.src;
            j["width"] = op.width;
            j["begin"] = op.begin;
            break;
        case MlpOpKind::DivmodConst:
            j["src"] = op.src;
            j["divisor"] = BigInt(op.divisor).str();
            j["q_dst"] = op.q_dst;
            j["r_dst"] = op.r_dst;
            break;
        case MlpOpKind::SetConst:
            j["begin"] = op.begin;
            j["value"] = dyadic_json(op.value);
            break;
        case MlpOpKind::Branch:
            j["src"] = op.src;
            j["then"] = ops_to_json(op.then_ops);
            j["else"] = ops_to_json(op.else_ops);
            break;
    }
    return j;
}

MlpOp op_from_json(const Json& j);

std::vector<MlpOp> ops_from_json(const Json& j) {
    if (!j.is_array()) throw ValidationError("json: expected an op list");
    std::vector<MlpOp> ops;
    ops.reserve(j.size());
    for (const auto& e : j) ops.push_back(op_from_json(e));
    return ops;
}

MlpOp op_from_json(const Json& j) {
    MlpOp op;
    op.kind = kind_from_name(string_member(j, "kind"));
    switch (op.kind) {
        case MlpOpKind::Affine: {
            const Json& w = member(j, "W");
            if (!w.is_array()) throw ValidationError("json: affine W must be a matrix");
            for (const auto& row : w) {
                std::vector<Dyadic> r;
                r.reserve(row.size());
                for (const auto& e : row) r.push_back(dyadic_from_json(e));
                op.W.push_back(std::move(r));
            }
            for (const auto& e : member(j, "b")) op.b.push_back(dyadic_from_json(e));
            break;
        }
        case MlpOpKind::RoundInt:
        case MlpOpKind::Step:
            op.begin = static_cast<int>(int_member(j, "begin"));
            op.end = static_cast<int>(int_member(j, "end"));
            break;
        case MlpOpKind::ToBits:
            op.src = static_cast<int>(int_member(j, "src"));
            op.width = static_cast<int>(int_member(j, "width"));
            op.begin = static_cast<int>(int_member(j, "begin"));
            break;
        case MlpOpKind::DivmodConst:
            op.src = static_cast<int>(int_member(j, "src"));
            op.divisor = bigint_from_json(member(j, "divisor"));
            op.q_dst = static_cast<int>(int_member(j, "q_dst"));
            op.r_dst = static_cast<int>(int_member(j, "r_dst"));
            break;
        case MlpOpKind::SetConst:
            op.begin = static_cast<int>(int_member(j, "begin"));
            op.value = dyadic_from_json(member(j, "value"));
            break;
        case MlpOpKind::Branch:
            op.src = static_cast<int>(int_member(j, "src"));
            op.then_ops = ops_from_json(member(j, "then"));
            op.else_ops = ops_from_json(member(j, "else"));
            break;
    }
    return op;
}

Json head_params_json(const HeadParams& h) {
    Json j;
    j["Q"] = mat_json(h.Q);
    j["K"] = mat_json(h.K);
    j["V"] = mat_json(h.V);
    return j;
}

HeadParams head_params_from_json(const Json& j) {
    HeadParams h;
    h.Q = mat_from_json(member(j, "Q"));
    h.K = mat_from_json(member(j, "K"));
    h.V = mat_from_json(member(j, "V"));
    return h;
}

Json embed_to_json(const EmbedSpec& e) {
    Json j;
    switch (e.kind) {
        case EmbedKind::Zeros:
            j["kind"] = "zeros";
            break;
        case EmbedKind::HashTable:
            j["kind"] = "hash_table";
            j["seed"] = e.seed;
            break;
        case EmbedKind::ValueBits:
            j["kind"] = "value_bits";
            j["offset"] = e.offset;
            j["width"] = e.width;
            break;
        case EmbedKind::Compose: {
            j["kind"] = "compose";
            const ComposeLayout& lay = *e.compose;
            j["mode"] = lay.mode == ComposeMode::Depth ? "depth"
                        : lay.mode == ComposeMode::Cot ? "cot"
                                                       : "encoder";
            j["params"] = task_params_to_json(lay.params);
            j["block_bits"] = lay.enc.block_bits;
            j["index_bits"] = lay.enc.index_bits;
            j["scale_raw"] = BigInt(lay.scale_raw).str();
            j["width"] = lay.width;
            break;
        }
        case EmbedKind::Circuit: {
            j["kind"] = "circuit";
            const CircuitEmbedLayout& lay = *e.circuit;
            j["id_bits"] = lay.id_bits;
            j["tag_bits"] = lay.tag_bits;
            j["width"] = lay.width;
            j["group_tags"] = lay.group_tags;
            break;
        }
    }
    return j;
}

EmbedSpec embed_from_json(const Json& j) {
    EmbedSpec e;
    const std::string kind = string_member(j, "kind");
    if (kind == "zeros") {
        e.kind = EmbedKind::Zeros;
    } else if (kind == "hash_table") {
        e.kind = EmbedKind::HashTable;
        const Json& seed = member(j, "seed");
        if (!seed.is_number_unsigned() && !seed.is_number_integer())
            throw ValidationError("json: hash_table seed must be an integer");
        e.seed = seed.get<std::uint64_t>();
    } else if (kind == "value_bits") {
        e.kind = EmbedKind::ValueBits;
        e.offset = static_cast<int>(int_member(j, "offset"));
        e.width = static_cast<int>(int_member(j, "width"));
    } else if (kind == "compose") {
        e.kind = EmbedKind::Compose;
        ComposeLayout lay;
        const std::string mode = string_member(j, "mode");
        if (mode == "depth")
            lay.mode = ComposeMode::Depth;
        else if (mode == "cot")
            lay.mode = ComposeMode::Cot;
        else if (mode == "encoder")
            lay.mode = ComposeMode::Encoder;
        else
            throw ValidationError("json: unknown compose mode '" + mode + "'");
        lay.params = task_params_from_json(member(j, "params"));
        lay.enc.block_bits = static_cast<int>(int_member(j, "block_bits"));
        lay.enc.index_bits = static_cast<int>(int_member(j, "index_bits"));
        lay.scale_raw = bigint_from_json(member(j, "scale_raw"));
        lay.width = static_cast<int>(int_member(j, "width"));
        e.compose = std::move(lay);
    } else if (kind == "circuit") {
        e.kind = EmbedKind::Circuit;
        CircuitEmbedLayout lay;
        lay.id_bits = static_cast<int>(int_member(j, "id_bits"));
        lay.tag_bits = static_cast<int>(int_member(j, "tag_bits"));
        lay.width = static_cast<int>(int_member(j, "width"));
        const Json& tags = member(j, "group_tags");
        if (!tags.is_array()) throw ValidationError("json: group_tags must be an array");
        for (const auto& t : tags) {
            if (!t.is_number_integer() && !t.is_number_unsigned())
                throw ValidationError("json: group tags must be integers");
            lay.group_tags.push_back(t.get<std::int64_t>());
        }
        e.circuit = std::move(lay);
    } else {
        throw ValidationError("json: unknown embed kind '" + kind + "'");
    }
    return e;
}

}  // namespace

std::string canonical_text(const Json& j) { return j.dump(2) + "\n"; }

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

Json bigint_json(const BigInt& v) { return Json(v.str()); }

BigInt bigint_from_json(const Json& j) {
    if (j.is_number_integer() || j.is_number_unsigned())
        return BigInt(j.get<std::int64_t>());
    if (!j.is_string())
        throw ValidationError("json: expected a decimal integer string");
    try {
        return BigInt(j.get<std::string>());
    } catch (const std::exception&) {
        throw ValidationError("json: '" + j.get<std::string>() +
                              "' is not a decimal integer");
    }
}

const Json& member(const Json& j, const char* key) {
    if (!j.is_object())
        throw ValidationError(std::string("json: expected an object with key '") + key +
                              "'");
    auto it = j.find(key);
    if (it == j.end())
        throw ValidationError(std::string("json: missing key '") + key + "'");
    return *it;
}

std::int64_t int_member(const Json& j, const char* key) {
    const Json& v = member(j, key);
    if (!v.is_number_integer() && !v.is_number_unsigned())
        throw ValidationError(std::string("json: key '") + key + "' must be an integer");
    return v.get<std::int64_t>();
}

std::string string_member(const Json& j, const char* key) {
    const Json& v = member(j, key);
    if (!v.is_string())
        throw ValidationError(std::string("json: key '") + key + "' must be a string");
    return v.get<std::string>();
}

bool bool_member(const Json& j, const char* key) {
    const Json& v = member(j, key);
    if (!v.is_boolean())
        throw ValidationError(std::string("json: key '") + key + "' must be a boolean");
    return v.get<bool>();
}

Json parse_document(const std::string& text, const std::string& schema) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const std::exception& e) {
        throw ValidationError(std::string("json: parse failure: ") + e.what());
    }
    const std::string got = string_member(j, "schema");
    if (got != schema)
        throw ValidationError("json: expected schema '" + schema + "', found '" + got +
                              "'");
    return j;
}

// --- schedule ---

Json dims_to_json(const ModelDims& dims) {
    Json j;
    j["H"] = dims.H;
    j["d"] = dims.d;
    j["p"] = dims.p;
    j["L"] = dims.L;
    return j;
}

ModelDims dims_from_json(const Json& j) {
    ModelDims dims;
    dims.H = static_cast<int>(int_member(j, "H"));
    dims.d = static_cast<int>(int_member(j, "d"));
    dims.p = static_cast<int>(int_member(j, "p"));
    dims.L = static_cast<int>(int_member(j, "L"));
    return dims;
}

Json schedule_to_json(const Schedule& s) {
    Json j;
    j["K"] = bigint_json(s.K);
    j["sqrtK"] = bigint_json(s.sqrtK);
    j["m"] = bigint_json(s.m);
    Json n = Json::array();
    for (const auto& v : s.n) n.push_back(bigint_json(v));
    j["n"] = std::move(n);
    Json N = Json::array();
    for (const auto& v : s.N) N.push_back(bigint_json(v));
    j["N"] = std::move(N);
    Json x = Json::array();
    for (const auto& v : s.x) x.push_back(bigint_json(v));
    j["x"] = std::move(x);
    Json theta = Json::array();
    for (const auto& v : s.Theta) theta.push_back(to_string(v));
    j["Theta"] = std::move(theta);
    Json ld = Json::array();
    for (const auto& v : s.log2Delta) ld.push_back(bigint_json(v));
    j["log2Delta"] = std::move(ld);
    return j;
}

Json check_to_json(const VerifyCheck& c) {
    Json j;
    j["name"] = c.name;
    j["lhs"] = c.lhs;
    j["cmp"] = c.cmp;
    j["rhs"] = c.rhs;
    j["pass"] = c.pass;
    return j;
}

Json checks_to_json(const std::vector<VerifyCheck>& checks) {
    Json a = Json::array();
    for (const auto& c : checks) a.push_back(check_to_json(c));
    return a;
}

Json verify_report_to_json(const VerifyReport& r) {
    Json j;
    j["checks"] = checks_to_json(r.checks);
    j["prompt_length"] = bigint_json(r.prompt_length);
    j["threshold_holds"] = r.threshold_holds;
    j["all_pass"] = r.all_pass();
    return j;
}

// --- task ---

Json task_params_to_json(const TaskParams& p) {
    Json j;
    j["L"] = p.L;
    j["m"] = p.m;
    j["n"] = p.n;
    return j;
}

TaskParams task_params_from_json(const Json& j) {
    TaskParams p;
    p.L = static_cast<int>(int_member(j, "L"));
    p.m = int_member(j, "m");
    const Json& n = member(j, "n");
    if (!n.is_array()) throw ValidationError("json: task n must be an array");
    for (const auto& v : n) {
        if (!v.is_number_integer() && !v.is_number_unsigned())
            throw ValidationError("json: task n entries must be integers");
        p.n.push_back(v.get<std::int64_t>());
    }
    return p;
}

Json task_instance_to_json(const TaskInstance& inst) {
    Json j;
    j["schema"] = "fclab/task/v1";
    j["params"] = task_params_to_json(inst.params);
    j["z0"] = inst.z0;
    j["z"] = inst.z;
    j["w"] = inst.w;
    return j;
}

TaskInstance task_instance_from_json(const Json& j) {
    TaskInstance inst;
    inst.params = task_params_from_json(member(j, "params"));
    inst.z0 = int_member(j, "z0");
    const Json& z = member(j, "z");
    if (!z.is_array()) throw ValidationError("json: task z must be an array of tables");
    for (const auto& table : z) {
        if (!table.is_array())
            throw ValidationError("json: each task table must be an array");
        std::vector<std::int64_t> t;
        t.reserve(table.size());
        for (const auto& v : table) {
            if (!v.is_number_integer() && !v.is_number_unsigned())
                throw ValidationError("json: table entries must be integers");
            t.push_back(v.get<std::int64_t>());
        }
        inst.z.push_back(std::move(t));
    }
    const Json& w = member(j, "w");
    if (!w.is_array()) throw ValidationError("json: task w must be an array");
    for (const auto& v : w) {
        if (!v.is_number_integer() && !v.is_number_unsigned())
            throw ValidationError("json: w entries must be integers");
        inst.w.push_back(v.get<std::int64_t>());
    }
    inst.validate();
    return inst;
}

Json prompt_to_json(const Prompt& p) {
    Json j;
    j["schema"] = "fclab/prompt/v1";
    Json tokens = Json::array();
    for (const auto& t : p.tokens) {
        Json tok;
        tok["block"] = t.block;
        tok["index"] = t.index;
        tok["value"] = t.value;
        tokens.push_back(std::move(tok));
    }
    j["tokens"] = std::move(tokens);
    Json blocks = Json::array();
    for (const auto& b : p.blocks) {
        Json span;
        span["block"] = b.block;
        span["start"] = b.start;
        span["len"] = b.len;
        blocks.push_back(std::move(span));
    }
    j["blocks"] = std::move(blocks);
    return j;
}

Prompt prompt_from_json(const Json& j) {
    Prompt p;
    const Json& tokens = member(j, "tokens");
    if (!tokens.is_array()) throw ValidationError("json: tokens must be an array");
    for (const auto& t : tokens) {
        Token tok;
        tok.block = static_cast<int>(int_member(t, "block"));
        tok.index = int_member(t, "index");
        tok.value = int_member(t, "value");
        p.tokens.push_back(tok);
    }
    const Json& blocks = member(j, "blocks");
    if (!blocks.is_array()) throw ValidationError("json: blocks must be an array");
    for (const auto& b : blocks) {
        BlockSpan span;
        span.block = static_cast<int>(int_member(b, "block"));
        span.start = static_cast<std::size_t>(int_member(b, "start"));
        span.len = static_cast<std::size_t>(int_member(b, "len"));
        p.blocks.push_back(span);
    }
    return p;
}

// --- transformer specs ---

Json spec_to_json(const TransformerSpec& spec) {
    Json j;
    j["schema"] = "fclab/spec/v1";
    j["dims"] = dims_to_json(spec.dims);
    j["format"] = format_json(spec.format);
    j["score_format"] = format_json(spec.score_format);
    j["mask"] = spec.mask == MaskMode::Causal ? "causal" : "full";
    j["embed"] = embed_to_json(spec.embed);
    Json layers = Json::array();
    for (const auto& layer : spec.layers) {
        Json jl;
        Json heads = Json::array();
        for (const auto& head : layer.heads) {
            Json jh;
            jh["base"] = head_params_json(head.base);
            Json ov = Json::object();
            for (const auto& [pos, params] : head.overrides)
                ov[std::to_string(pos)] = head_params_json(params);
            jh["overrides"] = std::move(ov);
            heads.push_back(std::move(jh));
        }
        jl["heads"] = std::move(heads);
        Json mlp;
        mlp["ops"] = ops_to_json(layer.mlp.ops);
        Json ov = Json::object();
        for (const auto& [pos, prog] : layer.mlp.overrides)
            ov[std::to_string(pos)] = ops_to_json(prog);
        mlp["overrides"] = std::move(ov);
        jl["mlp"] = std::move(mlp);
        layers.push_back(std::move(jl));
    }
    j["layers"] = std::move(layers);
    return j;
}

TransformerSpec spec_from_json(const Json& j) {
    TransformerSpec spec;
    spec.dims = dims_from_json(member(j, "dims"));
    spec.format = format_from_json(member(j, "format"));
    spec.score_format = format_from_json(member(j, "score_format"));
    const std::string mask = string_member(j, "mask");
    if (mask == "causal")
        spec.mask = MaskMode::Causal;
    else if (mask == "full")
        spec.mask = MaskMode::Full;
    else
        throw ValidationError("json: unknown mask mode '" + mask + "'");
    spec.embed = embed_from_json(member(j, "embed"));
    const Json& layers = member(j, "layers");
    if (!layers.is_array()) throw ValidationError("json: layers must be an array");
    for (const auto& jl : layers) {
        Layer layer;
        const Json& heads = member(jl, "heads");
        if (!heads.is_array()) throw ValidationError("json: heads must be an array");
        for (const auto& jh : heads) {
            AttentionHead head;
            head.base = head_params_from_json(member(jh, "base"));
            const Json& ov = member(jh, "overrides");
            if (!ov.is_object())
                throw ValidationError("json: head overrides must be an object");
            for (auto it = ov.begin(); it != ov.end(); ++it)
                head.overrides[static_cast<std::size_t>(std::stoll(it.key()))] =
                    head_params_from_json(it.value());
            layer.heads.push_back(std::move(head));
        }
        const Json& mlp = member(jl, "mlp");
        layer.mlp.ops = ops_from_json(member(mlp, "ops"));
        const Json& ov = member(mlp, "overrides");
        if (!ov.is_object())
            throw ValidationError("json: mlp overrides must be an object");
        for (auto it = ov.begin(); it != ov.end(); ++it)
            layer.mlp.overrides[static_cast<std::size_t>(std::stoll(it.key()))] =
                ops_from_json(it.value());
        spec.layers.push_back(std::move(layer));
    }
    spec.validate();
    return spec;
}

// --- builder reports ---

Json margin_report_to_json(const MarginReport& r) {
    Json j;
    j["scale_raw"] = BigInt(r.scale_raw).str();
    j["claimed_gap"] = to_string(r.claimed_gap);
    j["checks"] = checks_to_json(r.checks);
    j["all_pass"] = r.all_pass();
    return j;
}

// --- circuits ---

Json circuit_to_json(const SymmetricCircuit& c) {
    Json j;
    j["schema"] = "fclab/circuit/v1";
    j["inputCount"] = c.input_count;
    Json layers = Json::array();
    for (const auto& layer : c.layers) {
        Json jl = Json::array();
        for (const auto& g : layer) {
            Json jg;
            jg["inputs"] = g.inputs;
            jg["table"] = g.table;
            jl.push_back(std::move(jg));
        }
        layers.push_back(std::move(jl));
    }
    j["layers"] = std::move(layers);
    if (c.output >= 0) j["output"] = c.output;
    return j;
}

SymmetricCircuit circuit_from_json(const Json& j) {
    SymmetricCircuit c;
    c.input_count = static_cast<int>(int_member(j, "inputCount"));
    const Json& layers = member(j, "layers");
    if (!layers.is_array())
        throw ValidationError("json: circuit layers must be an array");
    for (const auto& jl : layers) {
        if (!jl.is_array())
            throw ValidationError("json: each circuit layer must be an array of gates");
        std::vector<SymmetricGate> layer;
        for (const auto& jg : jl) {
            SymmetricGate g;
            const Json& inputs = member(jg, "inputs");
            if (!inputs.is_array())
                throw ValidationError("json: gate inputs must be an array");
            for (const auto& v : inputs) {
                if (!v.is_number_integer() && !v.is_number_unsigned())
                    throw ValidationError("json: gate inputs must be integers");
                g.inputs.push_back(v.get<int>());
            }
            const Json& table = member(jg, "table");
            if (!table.is_array())
                throw ValidationError("json: gate table must be an array");
            for (const auto& v : table) {
                if (!v.is_number_integer() && !v.is_number_unsigned())
                    throw ValidationError("json: gate table entries must be integers");
                g.table.push_back(v.get<int>());
            }
            layer.push_back(std::move(g));
        }
        c.layers.push_back(std::move(layer));
    }
    if (j.contains("output")) c.output = static_cast<int>(int_member(j, "output"));
    c.validate();
    return c;
}

Json compile_report_to_json(const CompileReport& r) {
    Json j;
    j["schema"] = "fclab/circuit-report/v1";
    j["depth"] = r.depth;
    j["heads"] = r.heads;
    j["positions"] = r.positions;
    j["head_width"] = r.head_width;
    j["positions_used"] = r.positions_used;
    j["input_slot"] = r.input_slot;
    j["output_home"] = r.output_home;
    j["output_cell"] = r.output_cell;
    j["sigma_raw"] = BigInt(r.sigma_raw).str();
    j["margins"] = checks_to_json(r.margins);
    j["margins_pass"] = r.margins_pass();
    Json gates = Json::array();
    for (const auto& g : r.gates) {
        Json jg;
        jg["gate"] = g.gate;
        jg["layer"] = g.layer;
        jg["home"] = g.home;
        jg["cell"] = g.cell;
        jg["head_begin"] = g.head_begin;
        jg["head_end"] = g.head_end;
        jg["spread"] = g.spread;
        jg["tag"] = g.tag;
        gates.push_back(std::move(jg));
    }
    j["gates"] = std::move(gates);
    return j;
}

}  // namespace fclab
