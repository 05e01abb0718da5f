#include "fclab/cli.hpp"

#include <cstdio>

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    fclab::CliResult r = fclab::run_cli(args);
    std::fwrite(r.out.data(), 1, r.out.size(), stdout);
    return r.exit_code;
}
