#pragma once

#include "fclab/builders.hpp"
#include "fclab/circuits.hpp"
#include "fclab/engine.hpp"
#include "fclab/schedule.hpp"
#include "fclab/task.hpp"

#include "json.hpp"

#include <string>

namespace fclab {

// All documents and reports use one canonical JSON rendering: keys sorted
// (the underlying object is map-backed), two-space indent, integers only
// (big integers and rationals as decimal strings), trailing newline. Equal
// in-memory values therefore serialize to identical bytes.
using Json = nlohmann::json;

std::string canonical_text(const Json& j);

// FNV-1a 64-bit digest,16 hex digits; the manifest fingerprint of inputs.
std::string fnv1a_hex(const std::string& bytes);

// Big integers <-> decimal strings (rationals render as "num/den").
Json bigint_json(const BigInt& v);
BigInt bigint_from_json(const Json& j);

// Typed accessors that turn missing keys / wrong types into ValidationError
// (the CLI maps those to exit code 2).
const Json& member(const Json& j, const char* key);
std::int64_t int_member(const Json& j, const char* key);
std::string string_member(const Json& j, const char* key);
bool bool_member(const Json& j, const char* key);

// Parses text and requires a `schema` field equal to `schema`.
Json parse_document(const std::string& text, const std::string& schema);

// --- schedule ---
Json dims_to_json(const ModelDims& dims);
ModelDims dims_from_json(const Json& j);
Json schedule_to_json(const Schedule& s);
Json check_to_json(const VerifyCheck& c);
Json checks_to_json(const std::vector<VerifyCheck>& checks);
Json verify_report_to_json(const VerifyReport& r);

// --- task ---
Json task_params_to_json(const TaskParams& p);
TaskParams task_params_from_json(const Json& j);
Json task_instance_to_json(const TaskInstance& inst);  // schema fclab/task/v1
TaskInstance task_instance_from_json(const Json& j);
Json prompt_to_json(const Prompt& p);                  // schema fclab/prompt/v1
Prompt prompt_from_json(const Json& j);

// --- transformer specs ---
Json spec_to_json(const TransformerSpec& spec);        // schema fclab/spec/v1
TransformerSpec spec_from_json(const Json& j);

// --- builder reports ---
Json margin_report_to_json(const MarginReport& r);

// --- circuits ---
Json circuit_to_json(const SymmetricCircuit& c);       // {inputCount, layers}
SymmetricCircuit circuit_from_json(const Json& j);
Json compile_report_to_json(const CompileReport& r);

}  // namespace fclab
