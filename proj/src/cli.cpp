#include "fclab/cli.hpp"

#include "fclab/comm.hpp"
#include "fclab/errors.hpp"
#include "fclab/jsonio.hpp"
#include "fclab/rng.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fclab {

namespace {

constexpr const char* kToolVersion = "fclab 0.1.0";
constexpr const char* kReportSchema = "fclab/report/v1";

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write file '" + path + "'");
    out << text;
    if (!out) throw ValidationError("write to '" + path + "' failed");
}

// Everything a report's manifest records about the invocation.
struct Ctx {
    std::string command;
    std::vector<std::string> args;
    Json inputs = Json::object();  // path -> content digest
    Json seeds = Json::object();
    Json schemas = Json::object();
};

std::string load_input(Ctx& ctx, const std::string& path) {
    std::string text = read_file(path);
    ctx.inputs[path] = fnv1a_hex(text);
    return text;
}

Json manifest_json(const Ctx& ctx) {
    Json m;
    std::string cmd = "fclab";
    for (const auto& a : ctx.args) cmd += " " + a;
    m["command"] = cmd;
    m["inputs"] = ctx.inputs;
    m["seeds"] = ctx.seeds;
    m["schemas"] = ctx.schemas;
    m["tool"] = kToolVersion;
    return m;
}

std::string render_json_report(const Ctx& ctx, Json payload) {
    payload["_manifest"] = manifest_json(ctx);
    payload["command"] = ctx.command;
    payload["schema"] = kReportSchema;
    return canonical_text(payload);
}

std::string render_csv(const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows) {
    std::string out;
    for (std::size_t i = 0; i < header.size(); ++i)
        out += (i ? "," : "") + header[i];
    out += "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
            out += (i ? "," : "") + row[i];
        out += "\n";
    }
    return out;
}

TaskInstance load_task(Ctx& ctx, const std::string& path) {
    Json doc = parse_document(load_input(ctx, path), "fclab/task/v1");
    ctx.schemas["task"] = "fclab/task/v1";
    return task_instance_from_json(doc);
}

TransformerSpec load_spec(Ctx& ctx, const std::string& path) {
    Json doc = parse_document(load_input(ctx, path), "fclab/spec/v1");
    ctx.schemas["spec"] = "fclab/spec/v1";
    return spec_from_json(doc);
}

SymmetricCircuit load_circuit(Ctx& ctx, const std::string& path) {
    Json doc;
    try {
        doc = Json::parse(load_input(ctx, path));
    } catch (const std::exception& e) {
        throw ValidationError(std::string("json: parse failure: ") + e.what());
    }
    // The schema stamp is optional on circuit files, but must match if present.
    if (doc.contains("schema") && string_member(doc, "schema") != "fclab/circuit/v1")
        throw ValidationError("json: expected schema 'fclab/circuit/v1'");
    ctx.schemas["circuit"] = "fclab/circuit/v1";
    return circuit_from_json(doc);
}

// --- subcommand payloads -------------------------------------------------

int cmd_schedule(Ctx& ctx, const ModelDims& dims, bool verify,
                 const std::string& format, std::string& out) {
    dims.validate();
    Schedule s = compute_schedule(dims);
    int exit_code = 0;

    Json payload;
    payload["dims"] = dims_to_json(dims);
    payload["schedule"] = schedule_to_json(s);
    if (verify) {
        VerifyReport vr = verify_lower_bound_arithmetic(s, dims);
        payload["verify"] = verify_report_to_json(vr);
        if (!vr.all_pass()) exit_code = 1;
    }

    if (format == "csv") {
        std::vector<std::vector<std::string>> rows;
        for (int l = 0; l <= dims.L; ++l) {
            std::vector<std::string> row(6);
            row[0] = std::to_string(l);
            if (l < dims.L) {
                row[1] = BigInt(s.N[static_cast<std::size_t>(l)]).str();
                row[3] = BigInt(s.x[static_cast<std::size_t>(l)]).str();
            }
            if (l >= 1 && l <= dims.L - 1) {
                row[2] = BigInt(s.n[static_cast<std::size_t>(l - 1)]).str();
                row[4] = to_string(s.Theta[static_cast<std::size_t>(l - 1)]);
            }
            if (l >= 2) row[5] = BigInt(s.log2Delta[static_cast<std::size_t>(l - 2)]).str();
            rows.push_back(std::move(row));
        }
        out = render_csv({"level", "N", "n", "x", "Theta", "log2Delta"}, rows);
    } else {
        out = render_json_report(ctx, std::move(payload));
    }
    return exit_code;
}

int cmd_gen_task(Ctx& ctx, const TaskParams& params, std::uint64_t seed,
                 const std::string& out_path, std::string& out) {
    params.validate();
    ctx.seeds["seed"] = seed;
    TaskInstance inst = generate(params, seed);
    Json doc = task_instance_to_json(inst);
    ctx.schemas["task"] = "fclab/task/v1";

    Json payload;
    payload["params"] = task_params_to_json(params);
    if (!out_path.empty()) {
        const std::string text = canonical_text(doc);
        write_file(out_path, text);
        payload["out"] = out_path;
        payload["out_digest"] = fnv1a_hex(text);
    } else {
        payload["instance"] = std::move(doc);
    }
    out = render_json_report(ctx, std::move(payload));
    return 0;
}

int cmd_eval_task(Ctx& ctx, const std::string& path, std::string& out) {
    TaskInstance inst = load_task(ctx, path);
    CompositionChain chain = evaluate(inst);
    Json payload;
    payload["chain"] = chain.i;
    payload["answer"] = chain.answer();
    out = render_json_report(ctx, std::move(payload));
    return 0;
}

int cmd_solve(Ctx& ctx, const std::string& builder, const std::string& task_path,
              const std::string& emit_spec, int threads, const std::string& format,
              std::string& out) {
    TaskInstance inst = load_task(ctx, task_path);
    SolverBundle bundle;
    if (builder == "depth")
        bundle = build_depth_solver(inst.params);
    else if (builder == "cot")
        bundle = build_cot_solver(inst.params);
    else if (builder == "encoder")
        bundle = build_encoder_solver(inst.params);
    else
        throw ValidationError("unknown builder '" + builder +
                              "' (expected depth, cot, or encoder)");
    SolverRun run = run_solver(bundle, inst, threads);

    Json payload;
    payload["builder"] = builder;
    payload["answer"] = run.answer;
    payload["chain"] = run.chain;
    payload["depth"] = bundle.depth;
    payload["steps"] = bundle.steps;
    payload["saturated"] = run.saturated;
    payload["margins"] = margin_report_to_json(bundle.margins);
    if (!emit_spec.empty()) {
        const std::string text = canonical_text(spec_to_json(bundle.spec));
        write_file(emit_spec, text);
        ctx.schemas["spec"] = "fclab/spec/v1";
        payload["emitted_spec"] = emit_spec;
        payload["emitted_digest"] = fnv1a_hex(text);
    }

    if (format == "csv") {
        std::vector<std::vector<std::string>> rows;
        for (const auto& c : bundle.margins.checks)
            rows.push_back({c.name, c.lhs, c.cmp, c.rhs, c.pass ? "true" : "false"});
        out = render_csv({"name", "lhs", "cmp", "rhs", "pass"}, rows);
    } else {
        out = render_json_report(ctx, std::move(payload));
    }
    return 0;
}

int cmd_run(Ctx& ctx, const std::string& spec_path, const std::string& prompt_path,
            bool trace, int threads, std::string& out) {
    TransformerSpec spec = load_spec(ctx, spec_path);

    Json pdoc;
    try {
        pdoc = Json::parse(load_input(ctx, prompt_path));
    } catch (const std::exception& e) {
        throw ValidationError(std::string("json: parse failure: ") + e.what());
    }
    const std::string schema = string_member(pdoc, "schema");
    Prompt prompt;
    if (schema == "fclab/task/v1") {
        prompt = tokenize(task_instance_from_json(pdoc));
        ctx.schemas["prompt"] = "fclab/task/v1";
    } else if (schema == "fclab/prompt/v1") {
        prompt = prompt_from_json(pdoc);
        ctx.schemas["prompt"] = "fclab/prompt/v1";
    } else {
        throw ValidationError("run: prompt file must be a task instance or a prompt");
    }

    ForwardOptions opts;
    opts.trace_alpha = trace;
    opts.threads = threads;
    Activations acts = forward(spec, prompt, opts);

    Json payload;
    payload["positions"] = prompt.size();
    payload["layers"] = spec.layers.size();
    payload["saturated"] = acts.saturated;
    Json final = Json::array();
    for (const auto& r : acts.x.back().back()) final.push_back(BigInt(r).str());
    payload["final"] = std::move(final);
    if (trace) {
        Json alpha = Json::array();
        for (const auto& layer : acts.alpha) {
            Json jl = Json::array();
            for (const auto& head : layer) {
                Json jh = Json::array();
                for (const auto& row : head) {
                    Json jr = Json::array();
                    for (const auto& a : row) jr.push_back(to_string(a));
                    jh.push_back(std::move(jr));
                }
                jl.push_back(std::move(jh));
            }
            alpha.push_back(std::move(jl));
        }
        payload["attention"] = std::move(alpha);
    }
    out = render_json_report(ctx, std::move(payload));
    return 0;
}

int cmd_verify_reduction(Ctx& ctx, const std::string& spec_path,
                         const std::string& task_path, int trials,
                         std::uint64_t seed, int threads, const std::string& format,
                         std::string& out) {
    if (trials < 1) throw ValidationError("verify-reduction: trials must be >= 1");
    TransformerSpec spec = load_spec(ctx, spec_path);
    ctx.seeds["seed"] = seed;

    TaskParams params;
    if (!task_path.empty()) {
        params = load_task(ctx, task_path).params;
    } else if (spec.embed.kind == EmbedKind::Compose && spec.embed.compose) {
        params = spec.embed.compose->params;
    } else {
        throw ValidationError(
            "verify-reduction: the spec carries no task parameters; pass --task");
    }

    ProtocolDef def = reduce_transformer(spec, params);
    const std::int64_t per_query =
        static_cast<std::int64_t>(spec.dims.H) *
        (static_cast<std::int64_t>(spec.dims.d) * spec.dims.p + spec.dims.p);

    Json budgets = Json::array();
    bool budgets_ok = true;
    for (std::size_t s = 0; s < def.msg_bits.size(); ++s) {
        Json row;
        row["player"] = static_cast<int>(s) - 1;
        row["tokens"] = def.m[s];
        row["msg_bits"] = def.msg_bits[s];
        row["formula_bits"] = def.m[s] * per_query;
        row["cap"] = 2 * def.B * def.m[s];
        const bool ok = def.msg_bits[s] == def.m[s] * per_query &&
                        def.msg_bits[s] <= 2 * def.B * def.m[s];
        row["ok"] = ok;
        budgets_ok = budgets_ok && ok;
        budgets.push_back(std::move(row));
    }

    ForwardOptions opts;
    opts.threads = threads;
    Json rows = Json::array();
    std::vector<std::vector<std::string>> csv_rows;
    int equal_count = 0;
    for (int t = 0; t < trials; ++t) {
        const std::uint64_t trial_seed = seed + static_cast<std::uint64_t>(t);
        TaskInstance inst = generate(params, trial_seed);
        ProtocolRun run = run_protocol(def, protocol_inputs(inst));
        Activations acts = forward(spec, tokenize(inst), opts);
        BitString direct = serialize_vec(acts.x.back().back(), spec.dims.p);
        const bool equal = run.answer == direct;
        if (equal) ++equal_count;
        Json row;
        row["trial"] = t;
        row["seed"] = trial_seed;
        row["equal"] = equal;
        rows.push_back(std::move(row));
        csv_rows.push_back({std::to_string(t), std::to_string(trial_seed),
                            equal ? "true" : "false"});
    }

    Json payload;
    payload["B"] = def.B;
    payload["per_query_bits"] = per_query;
    payload["budgets"] = std::move(budgets);
    payload["budgets_ok"] = budgets_ok;
    payload["trials"] = trials;
    payload["equal"] = equal_count;
    payload["all_equal"] = equal_count == trials;

    if (format == "csv") {
        out = render_csv({"trial", "seed", "equal"}, csv_rows);
    } else {
        payload["rows"] = std::move(rows);
        out = render_json_report(ctx, std::move(payload));
    }
    return (equal_count == trials && budgets_ok) ? 0 : 1;
}

int cmd_fool(Ctx& ctx, const std::string& spec_path, const std::string& family_path,
             int threads, std::string& out) {
    TransformerSpec spec = load_spec(ctx, spec_path);
    Json fam = parse_document(load_input(ctx, family_path), "fclab/family/v1");
    ctx.schemas["family"] = "fclab/family/v1";

    TaskParams params = task_params_from_json(member(fam, "params"));
    params.validate();
    std::uint64_t seed = 0;
    if (fam.contains("seed")) seed = static_cast<std::uint64_t>(int_member(fam, "seed"));
    ctx.seeds["family_seed"] = seed;

    TaskInstance base = generate(params, seed);
    const auto N = params.domain_sizes();
    std::vector<TaskInstance> instances;
    const std::string kind = string_member(fam, "kind");
    if (kind == "constant_tables") {
        // One instance per constant value of the top table; every answer is
        // distinct, so any view collision certifies a fooling pair.
        for (std::int64_t c = 1; c <= N.back(); ++c) {
            TaskInstance inst = base;
            inst.z.back().assign(inst.z.back().size(), c);
            instances.push_back(std::move(inst));
        }
    } else if (kind == "explicit") {
        const Json& docs = member(fam, "instances");
        if (!docs.is_array() || docs.empty())
            throw ValidationError("family: instances must be a non-empty array");
        for (const auto& d : docs) {
            TaskInstance inst = task_instance_from_json(d);
            if (!(inst.params == params))
                throw ValidationError("family: instances must share the family params");
            instances.push_back(std::move(inst));
        }
        base = instances.front();
    } else {
        throw ValidationError("family: unknown kind '" + kind + "'");
    }

    ProtocolDef def = reduce_transformer(spec, params);
    const std::size_t top_slot =
        static_cast<std::size_t>(ProtocolDef::slot(def.top_player));
    std::vector<std::vector<Token>> base_inputs = protocol_inputs(base);
    std::vector<std::vector<Token>> family;
    std::vector<std::int64_t> answers;
    family.reserve(instances.size());
    for (const auto& inst : instances) {
        family.push_back(protocol_inputs(inst)[top_slot]);
        answers.push_back(evaluate(inst).answer());
    }
    std::set<std::int64_t> distinct(answers.begin(), answers.end());

    const std::int64_t view = view_bits(def, -1);
    Json payload;
    payload["family_size"] = family.size();
    payload["view_bits"] = view;
    payload["distinct_answers"] = distinct.size();
    payload["pigeonhole_forced"] =
        view < 62 && static_cast<std::int64_t>(distinct.size()) >
                         (std::int64_t{1} << view);

    auto oracle = [&answers](std::size_t k) { return answers[k]; };
    auto pair = find_fooling_pair(def, base_inputs, family, oracle, threads);
    if (!pair) {
        payload["found"] = false;
        out = render_json_report(ctx, std::move(payload));
        return 1;
    }

    // Replay both certified inputs from scratch: the views must agree bit
    // for bit while the required answers differ.
    auto replay_view = [&](std::size_t k) {
        auto inputs = base_inputs;
        inputs[top_slot] = family[k];
        return view_for(run_protocol(def, inputs), -1);
    };
    TranscriptView va = replay_view(pair->index_a);
    TranscriptView vb = replay_view(pair->index_b);
    const bool certified = va == vb && va == pair->shared_view &&
                           pair->answer_a != pair->answer_b;

    payload["found"] = true;
    Json jp;
    jp["index_a"] = pair->index_a;
    jp["index_b"] = pair->index_b;
    jp["answer_a"] = pair->answer_a;
    jp["answer_b"] = pair->answer_b;
    jp["view_hex"] = pair->shared_view.hex();
    payload["pair"] = std::move(jp);
    payload["replay_identical"] = certified;
    out = render_json_report(ctx, std::move(payload));
    return certified ? 0 : 1;
}

int cmd_compile_circuit(Ctx& ctx, const std::string& in_path,
                        const std::string& out_path, const std::string& report_path,
                        const FixedFormat& fmt, const CompileOptions& copts,
                        std::string& out) {
    SymmetricCircuit c = load_circuit(ctx, in_path);
    auto [spec, rep] = compile_circuit(c, fmt, copts);

    Json payload;
    payload["depth"] = rep.depth;
    payload["heads"] = rep.heads;
    payload["positions"] = rep.positions;
    payload["head_width"] = rep.head_width;
    payload["sigma_raw"] = BigInt(rep.sigma_raw).str();
    payload["margins_pass"] = rep.margins_pass();
    payload["gates"] = rep.gates.size();
    if (!out_path.empty()) {
        const std::string text = canonical_text(spec_to_json(spec));
        write_file(out_path, text);
        ctx.schemas["spec"] = "fclab/spec/v1";
        payload["out"] = out_path;
        payload["out_digest"] = fnv1a_hex(text);
    }
    if (!report_path.empty()) {
        const std::string text = canonical_text(compile_report_to_json(rep));
        write_file(report_path, text);
        ctx.schemas["circuit_report"] = "fclab/circuit-report/v1";
        payload["report"] = report_path;
        payload["report_digest"] = fnv1a_hex(text);
    }
    out = render_json_report(ctx, std::move(payload));
    return 0;
}

int cmd_check_circuit(Ctx& ctx, const std::string& in_path, bool exhaustive,
                      int trials, std::uint64_t seed, int threads,
                      const FixedFormat& fmt, const std::string& format,
                      std::string& out) {
    SymmetricCircuit c = load_circuit(ctx, in_path);
    auto [spec, rep] = compile_circuit(c, fmt, CompileOptions{});

    std::vector<std::vector<int>> inputs;
    if (exhaustive) {
        if (c.input_count > 16)
            throw ValidationError(
                "check-circuit: more than 16 inputs; use --trials instead");
        for (std::uint32_t mask = 0; mask < (1u << c.input_count); ++mask) {
            std::vector<int> x(static_cast<std::size_t>(c.input_count));
            for (int i = 0; i < c.input_count; ++i)
                x[static_cast<std::size_t>(i)] = (mask >> i) & 1;
            inputs.push_back(std::move(x));
        }
    } else {
        if (trials < 1) throw ValidationError("check-circuit: trials must be >= 1");
        ctx.seeds["seed"] = seed;
        Rng rng(seed);
        for (int t = 0; t < trials; ++t) {
            std::vector<int> x(static_cast<std::size_t>(c.input_count));
            for (auto& b : x) b = static_cast<int>(rng.below(2));
            inputs.push_back(std::move(x));
        }
    }

    ForwardOptions opts;
    opts.threads = threads;
    const int wires = c.input_count + c.gate_count();
    Json rows = Json::array();
    std::vector<std::vector<std::string>> csv_rows;
    int agree_count = 0;
    for (const auto& x : inputs) {
        const std::vector<int> want_all = eval_all_wires(c, x);
        Activations acts = forward(spec, circuit_prompt(rep.positions, x), opts);
        const int want = want_all[static_cast<std::size_t>(c.output_wire())];
        const int got = read_output_bit(acts, fmt, c, rep);
        bool wires_ok = true;
        for (int w = 0; w < wires; ++w)
            wires_ok = wires_ok && read_wire_bit(acts, fmt, c, rep, w) ==
                                       want_all[static_cast<std::size_t>(w)];
        const bool agree = got == want && wires_ok;
        if (agree) ++agree_count;
        std::string bits;
        for (int b : x) bits += b ? '1' : '0';
        Json row;
        row["input"] = bits;
        row["want"] = want;
        row["got"] = got;
        row["wires_ok"] = wires_ok;
        row["agree"] = agree;
        rows.push_back(std::move(row));
        csv_rows.push_back({bits, std::to_string(want), std::to_string(got),
                            wires_ok ? "true" : "false", agree ? "true" : "false"});
    }

    Json payload;
    payload["checked"] = inputs.size();
    payload["agreements"] = agree_count;
    payload["all_agree"] = agree_count == static_cast<int>(inputs.size());
    payload["depth"] = rep.depth;
    payload["positions"] = rep.positions;

    if (format == "csv") {
        out = render_csv({"input", "want", "got", "wires_ok", "agree"}, csv_rows);
    } else {
        payload["rows"] = std::move(rows);
        out = render_json_report(ctx, std::move(payload));
    }
    return agree_count == static_cast<int>(inputs.size()) ? 0 : 1;
}

std::string render_error(const Ctx& ctx, const std::string& type,
                         const std::string& message) {
    Json payload;
    payload["_manifest"] = manifest_json(ctx);
    payload["command"] = ctx.command;
    payload["schema"] = kReportSchema;
    Json err;
    err["type"] = type;
    err["message"] = message;
    payload["error"] = std::move(err);
    return canonical_text(payload);
}

}  // namespace

CliResult run_cli(const std::vector<std::string>& args) {
    Ctx ctx;
    ctx.args = args;

    CLI::App app{"Fixed-precision transformer laboratory"};
    app.require_subcommand(0, 1);
    std::string format = "json";

    // schedule
    auto* sched = app.add_subcommand("schedule", "Exact parameter schedule for given dims");
    ModelDims dims;
    bool verify = false;
    sched->add_option("--H", dims.H, "attention heads")->required();
    sched->add_option("--d", dims.d, "head dimension")->required();
    sched->add_option("--p", dims.p, "bits of precision")->required();
    sched->add_option("--L", dims.L, "levels")->required();
    sched->add_flag("--verify", verify, "evaluate the inequality chain");
    sched->add_option("--format", format, "json or csv");

    // gen-task
    auto* gen = app.add_subcommand("gen-task", "Generate a random task instance");
    TaskParams gparams;
    std::vector<std::int64_t> gn;
    std::uint64_t gseed = 0;
    std::string gout;
    gen->add_option("--L", gparams.L, "composition depth")->required();
    gen->add_option("--m", gparams.m, "base domain size")->required();
    gen->add_option("--n", gn, "query alphabet sizes n_1..n_{L-1}")->delimiter(',');
    gen->add_option("--seed", gseed, "generator seed");
    gen->add_option("--out", gout, "write the instance to this file");

    // eval-task
    auto* ev = app.add_subcommand("eval-task", "Evaluate an instance with the oracle");
    std::string ev_file;
    ev->add_option("file", ev_file, "task instance JSON")->required();

    // solve
    auto* solve = app.add_subcommand("solve", "Build a model and run it on an instance");
    std::string builder, solve_task, emit_spec;
    int threads = 1;
    solve->add_option("--builder", builder, "depth, cot, or encoder")->required();
    solve->add_option("--task", solve_task, "task instance JSON")->required();
    solve->add_option("--emit-spec", emit_spec, "write the model spec to this file");
    solve->add_option("--threads", threads, "worker threads");
    solve->add_option("--format", format, "json or csv");

    // run
    auto* run = app.add_subcommand("run", "Forward-evaluate a spec on a prompt");
    std::string run_spec, run_prompt;
    bool trace = false;
    run->add_option("--spec", run_spec, "transformer spec JSON")->required();
    run->add_option("--prompt", run_prompt, "task instance or prompt JSON")->required();
    run->add_flag("--trace", trace, "include exact attention probabilities");
    run->add_option("--threads", threads, "worker threads");

    // verify-reduction
    auto* vred = app.add_subcommand("verify-reduction",
                                    "Protocol simulation vs direct forward pass");
    std::string vr_spec, vr_task;
    int vr_trials = 1;
    std::uint64_t vr_seed = 0;
    vred->add_option("--spec", vr_spec, "transformer spec JSON")->required();
    vred->add_option("--task", vr_task, "task instance JSON providing the params");
    vred->add_option("--trials", vr_trials, "random instances to compare");
    vred->add_option("--seed", vr_seed, "first trial seed");
    vred->add_option("--threads", threads, "worker threads");
    vred->add_option("--format", format, "json or csv");

    // fool
    auto* fool = app.add_subcommand("fool", "Search a family for a fooling pair");
    std::string fool_spec, fool_family;
    fool->add_option("--spec", fool_spec, "transformer spec JSON")->required();
    fool->add_option("--family-spec", fool_family, "input family JSON")->required();
    fool->add_option("--threads", threads, "worker threads");

    // compile-circuit
    auto* cc = app.add_subcommand("compile-circuit",
                                  "Compile a symmetric circuit to a spec");
    std::string cc_in, cc_out, cc_report;
    FixedFormat cfmt{8, 16};
    CompileOptions copts;
    cc->add_option("--in", cc_in, "circuit JSON")->required();
    cc->add_option("--out", cc_out, "write the spec here");
    cc->add_option("--report", cc_report, "write the placement report here");
    cc->add_option("--int-bits", cfmt.int_bits, "activation integer bits");
    cc->add_option("--frac-bits", cfmt.frac_bits, "activation fraction bits");
    cc->add_option("--max-positions", copts.max_positions, "sequence length cap");
    cc->add_option("--pad-groups", copts.extra_pad_groups,
                   "extra padding positions per wide gate");

    // check-circuit
    auto* chk = app.add_subcommand("check-circuit",
                                   "Compare the compiled model against the circuit");
    std::string chk_in;
    bool exhaustive = false;
    int chk_trials = 16;
    std::uint64_t chk_seed = 0;
    chk->add_option("--in", chk_in, "circuit JSON")->required();
    chk->add_flag("--exhaustive", exhaustive, "check every input");
    chk->add_option("--trials", chk_trials, "random inputs to check");
    chk->add_option("--seed", chk_seed, "input sampling seed");
    chk->add_option("--threads", threads, "worker threads");
    chk->add_option("--int-bits", cfmt.int_bits, "activation integer bits");
    chk->add_option("--frac-bits", cfmt.frac_bits, "activation fraction bits");
    chk->add_option("--format", format, "json or csv");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::CallForHelp& e) {
        return {0, app.help()};
    } catch (const CLI::ParseError& e) {
        return {2, std::string(e.what()) + "\n" + app.help()};
    }

    CLI::App* chosen = nullptr;
    for (auto* sub : app.get_subcommands()) chosen = sub;
    if (!chosen) return {2, "missing subcommand\n" + app.help()};
    ctx.command = chosen->get_name();
    if (format != "json" && format != "csv")
        return {2, render_error(ctx, "ValidationError",
                                "unknown --format '" + format + "'")};

    std::string out;
    try {
        int code = 0;
        if (chosen == sched) {
            code = cmd_schedule(ctx, dims, verify, format, out);
        } else if (chosen == gen) {
            gparams.n = gn;
            code = cmd_gen_task(ctx, gparams, gseed, gout, out);
        } else if (chosen == ev) {
            code = cmd_eval_task(ctx, ev_file, out);
        } else if (chosen == solve) {
            code = cmd_solve(ctx, builder, solve_task, emit_spec, threads, format, out);
        } else if (chosen == run) {
            code = cmd_run(ctx, run_spec, run_prompt, trace, threads, out);
        } else if (chosen == vred) {
            code = cmd_verify_reduction(ctx, vr_spec, vr_task, vr_trials, vr_seed,
                                        threads, format, out);
        } else if (chosen == fool) {
            code = cmd_fool(ctx, fool_spec, fool_family, threads, out);
        } else if (chosen == cc) {
            code = cmd_compile_circuit(ctx, cc_in, cc_out, cc_report, cfmt, copts, out);
        } else if (chosen == chk) {
            code = cmd_check_circuit(ctx, chk_in, exhaustive, chk_trials, chk_seed,
                                     threads, cfmt, format, out);
        } else {
            return {2, "unknown subcommand\n" + app.help()};
        }
        return {code, out};
    } catch (const ValidationError& e) {
        return {2, render_error(ctx, "ValidationError", e.what())};
    } catch (const UnsupportedConfigError& e) {
        return {2, render_error(ctx, "UnsupportedConfigError", e.what())};
    } catch (const InsufficientPrecisionError& e) {
        return {1, render_error(ctx, "InsufficientPrecisionError", e.what())};
    } catch (const CapacityError& e) {
        return {1, render_error(ctx, "CapacityError", e.what())};
    } catch (const ProtocolViolationError& e) {
        return {1, render_error(ctx, "ProtocolViolationError", e.what())};
    } catch (const std::exception& e) {
        return {1, render_error(ctx, "InternalError", e.what())};
    }
}

}  // namespace fclab
