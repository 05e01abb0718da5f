#pragma once

#include <cstdint>
#include <random>

namespace fclab {

// Deterministic random source used everywhere randomness is needed.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard, seeded directly with the user seed. Bounded draws use rejection
// sampling on the raw 64-bit output (std::uniform_int_distribution is
// implementation-defined and therefore not reproducible across toolchains).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform draw from {0, 1, ..., bound-1}; bound >= 1.
    std::uint64_t below(std::uint64_t bound) {
        if (bound <= 1) return 0;
        // Rejection sampling: accept draws below the largest multiple of
        // bound, so every residue is equally likely.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        for (;;) {
            std::uint64_t v = gen_();
            if (v < limit) return v % bound;
        }
    }

    // Uniform draw from {lo, ..., hi}, inclusive; lo <= hi.
    std::int64_t range(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(
                        below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    bool coin() { return (gen_() & 1u) != 0; }

private:
    std::mt19937_64 gen_;
};

}  // namespace fclab
