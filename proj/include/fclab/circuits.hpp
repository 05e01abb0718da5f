#pragma once

#include "fclab/engine.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace fclab {

// ---------------------------------------------------------------------------
// Constant-depth symmetric circuits: every gate computes a fixed function of
// the POPCOUNT of its inputs. Wires are numbered 0-based: ids [0, input_count)
// are the input bits, then gates take consecutive ids in layer order. A gate
// may read any input bit or any gate of a strictly lower layer.
// ---------------------------------------------------------------------------
struct SymmetricGate {
    std::vector<int> inputs;  // wire ids (fan-in = inputs.size(), >= 1)
    std::vector<int> table;   // f(0..w) as bits; length = fan-in + 1
};

struct SymmetricCircuit {
    int input_count = 0;
    std::vector<std::vector<SymmetricGate>> layers;
    int output = -1;  // output wire id; -1 = last gate of the last layer

    int depth() const { return static_cast<int>(layers.size()); }
    int gate_count() const;
    int wires() const;  // total fan-in across all gates
    int output_wire() const;
    void validate() const;  // throws ValidationError (dangling refs, bad tables)
};

// Layered evaluation. eval_all_wires returns one bit per wire (inputs first,
// then every gate in id order); eval_circuit returns the output gate's bit.
std::vector<int> eval_all_wires(const SymmetricCircuit& c, const std::vector<int>& x);
int eval_circuit(const SymmetricCircuit& c, const std::vector<int>& x);

// ---------------------------------------------------------------------------
// Compilation to a full-mask encoder. Each circuit layer becomes six
// attention+MLP sublayers: (1) gather inputs with retrieval heads, (2) collect
// spread partial sums by averaged attention rescaled by the group size,
// (3) copy the sum into a per-gate slot bank, (4) half-integer thresholds,
// (5) per-count indicators weighted by the gate table, (6) final sum back
// into the gate's value cell. Gates with fan-in <= H share positions
// (first-fit head packing); wider gates spread their partial sums over
// ceil(w/H) tagged positions. Every position keeps its state alive through a
// dedicated self-retrieval head, so gate values persist for later layers.
// ---------------------------------------------------------------------------
struct GatePlacement {
    int gate = 0;   // wire id
    int layer = 0;  // circuit layer, 0-based
    int home = 0;   // position whose value cell holds the gate's bit
    int cell = 0;   // state-block slot of that cell
    int head_begin = 0;  // gather heads used at the home position
    int head_end = 0;
    std::vector<int> spread;  // partial-sum positions (empty for packed gates)
    std::int64_t tag = 0;     // spread-group tag (0 for packed gates)
};

struct CompileReport {
    int depth = 0;       // attention layers emitted (6 per circuit layer)
    int heads = 0;       // gather-head budget H; the engine spec carries H+1
    int positions = 0;   // chosen sequence length n'
    int head_width = 0;  // per-head slot count d
    std::vector<int> positions_used;   // positions touched per circuit layer
    std::vector<GatePlacement> gates;  // wire-id order (gate ids only)
    int output_home = 0;
    int output_cell = 0;
    int input_slot = 0;      // state-block slot of the input-bit cells
    FixedRaw sigma_raw = 0;  // retrieval scale on the activation grid
    std::vector<VerifyCheck> margins;

    bool margins_pass() const;
    const GatePlacement& placement(int wire) const;  // by gate wire id
};

struct CompileOptions {
    int max_positions = 4096;
    // Extra all-zero partial-sum positions per spread group; the padded
    // positions carry constant 0 and must never change any output.
    int extra_pad_groups = 0;
};

std::pair<TransformerSpec, CompileReport> compile_circuit(
    const SymmetricCircuit& c, const FixedFormat& fmt,
    const CompileOptions& opts = {});

// Prompt of `positions` singleton-block tokens; token i carries bit x[i]
// (0 beyond the input bits). Position ids feed the compiled retrieval keys.
Prompt circuit_prompt(int positions, const std::vector<int>& x);

// Reads a wire's bit out of the activations: input wires from x[0], gates
// from the activation after their sixth sublayer. Throws ValidationError if
// the cell does not hold an exact bit.
int read_wire_bit(const Activations& acts, const FixedFormat& fmt,
                  const SymmetricCircuit& c, const CompileReport& rep, int wire);
int read_output_bit(const Activations& acts, const FixedFormat& fmt,
                    const SymmetricCircuit& c, const CompileReport& rep);

}  // namespace fclab
