#pragma once

#include "fclab/task.hpp"

#include <vector>

namespace fclab {

// Binary key scheme used by the hand-built retrieval heads: a key is the
// block id followed by the entry index, D = blockBits + indexBits bits in
// total. Keys are exposed to attention as the pair (a, 1-a) so a scaled
// query scores scale*D on the unique full match and at most scale*(D-1)
// on everything else.
//
// Block-id space (blockBits = ceil(log2(L+2)) values, all used):
//   id 0        : the out-of-band class. (0, index 1) is the query-token
//                 anchor (the one position holding the query tuple w);
//                 (0, index 2) is the inert key given to generated tokens,
//                 which must never be retrieved.
//   id b+1      : task block b for b in [0:L].
struct KeyEncoding {
    int block_bits = 1;
    int index_bits = 1;

    int D() const { return block_bits + index_bits; }

    static constexpr int kAnchorBlockId = 0;
    static constexpr std::int64_t kAnchorIndex = 1;
    static constexpr std::int64_t kInertIndex = 2;

    static int block_id_for(int task_block) { return task_block + 1; }

    static KeyEncoding for_task(const TaskParams& params) {
        params.validate();
        auto N = params.domain_sizes();
        std::int64_t maxN = 1;
        for (auto v : N) maxN = std::max(maxN, v);
        KeyEncoding enc;
        enc.block_bits = bits_for(params.L + 2);
        enc.index_bits = bits_for(maxN);
        return enc;
    }

    // Number of bits needed to represent values in [0, count-1], >= 1.
    static int bits_for(std::int64_t count) {
        int b = 1;
        while ((std::int64_t{1} << b) < count) ++b;
        return b;
    }

    // D bits: block id (msb-first), then index-1 (msb-first).
    std::vector<int> key_bits(int block_id, std::int64_t index) const {
        if (block_id < 0 || block_id >= (1 << block_bits))
            throw ValidationError("KeyEncoding: block id out of range");
        if (index < 1 || index > (std::int64_t{1} << index_bits))
            throw ValidationError("KeyEncoding: index out of range");
        std::vector<int> bits(static_cast<std::size_t>(D()));
        for (int i = 0; i < block_bits; ++i)
            bits[static_cast<std::size_t>(i)] =
                static_cast<int>((block_id >> (block_bits - 1 - i)) & 1);
        std::int64_t e = index - 1;
        for (int i = 0; i < index_bits; ++i)
            bits[static_cast<std::size_t>(block_bits + i)] =
                static_cast<int>((e >> (index_bits - 1 - i)) & 1);
        return bits;
    }

    std::vector<int> anchor_bits() const { return key_bits(kAnchorBlockId, kAnchorIndex); }
    std::vector<int> inert_bits() const { return key_bits(kAnchorBlockId, kInertIndex); }

    bool operator==(const KeyEncoding& o) const {
        return block_bits == o.block_bits && index_bits == o.index_bits;
    }
};

}  // namespace fclab
