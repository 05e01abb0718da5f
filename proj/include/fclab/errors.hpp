#pragma once

#include <stdexcept>
#include <string>

namespace fclab {

// Input or structural validation failure (malformed instance, bad ranges,
// dangling wire references, unknown tokens). CLI maps these to exit code 2.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Configuration outside the supported domain (e.g. the inequality-chain
// verifier needs at least two levels).
struct UnsupportedConfigError : std::runtime_error {
    explicit UnsupportedConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A weight construction cannot guarantee correctness at the requested
// fixed-point format; message names the violated margin.
struct InsufficientPrecisionError : std::runtime_error {
    explicit InsufficientPrecisionError(const std::string& msg) : std::runtime_error(msg) {}
};

// A protocol participant broke the model contract (wrong message size,
// mismatched input lengths). Message names (epoch, sender, receiver).
struct ProtocolViolationError : std::runtime_error {
    explicit ProtocolViolationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Circuit compilation exceeded a packing budget; message carries the counts.
struct CapacityError : std::runtime_error {
    explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fclab
