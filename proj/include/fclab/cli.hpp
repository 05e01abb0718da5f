#pragma once

#include <string>
#include <vector>

namespace fclab {

// Outcome of one CLI invocation: the exit code and the full stdout payload
// (reports end with a newline). Exit codes: 0 success, 1 a check failed or a
// construction could not be certified, 2 usage / validation errors.
struct CliResult {
    int exit_code = 0;
    std::string out;
};

// Dispatches one subcommand. `args` excludes the program name, e.g.
// {"schedule", "--H", "1", "--d", "1", "--p", "1", "--L", "2", "--verify"}.
CliResult run_cli(const std::vector<std::string>& args);

}  // namespace fclab
