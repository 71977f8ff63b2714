#pragma once

#include <map>
#include <set>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "epochstore/heap.hpp"

namespace epochstore {

struct RecoveredBlock {
    BlockRef ref;
    PayloadHeader hdr;
};

// Survivor blocks in heap scan order (ascending offset), plus strided shards
// for parallel structure rebuilds: shard i of k yields elements i, i+k, ...
class RecoveredSet {
  public:
    class ShardIterator {
      public:
        using value_type = RecoveredBlock;
        using difference_type = std::ptrdiff_t;
        using reference = const RecoveredBlock&;
        using pointer = const RecoveredBlock*;
        using iterator_category = std::forward_iterator_tag;

        ShardIterator() = default;
        ShardIterator(const std::vector<RecoveredBlock>* v, std::size_t idx, std::size_t stride)
            : v_(v), idx_(idx), stride_(stride) {}
        reference operator*() const { return (*v_)[idx_]; }
        pointer operator->() const { return &(*v_)[idx_]; }
        ShardIterator& operator++() {
            idx_ = std::min(idx_ + stride_, v_->size());
            return *this;
        }
        ShardIterator operator++(int) {
            ShardIterator t = *this;
            ++*this;
            return t;
        }
        bool operator==(const ShardIterator& o) const { return idx_ == o.idx_; }
        bool operator!=(const ShardIterator& o) const { return idx_ != o.idx_; }

      private:
        const std::vector<RecoveredBlock>* v_ = nullptr;
        std::size_t idx_ = 0;
        std::size_t stride_ = 1;
    };

    struct Shard {
        ShardIterator first, last;
        ShardIterator begin() const { return first; }
        ShardIterator end() const { return last; }
    };

    const std::vector<RecoveredBlock>& blocks() const { return blocks_; }
    std::size_t size() const { return blocks_.size(); }
    bool empty() const { return blocks_.empty(); }

    Shard shard(std::size_t i, std::size_t k) const {
        std::size_t start = std::min(i, blocks_.size());
        return {ShardIterator(&blocks_, start, k), ShardIterator(&blocks_, blocks_.size(), k)};
    }

    std::uint64_t crash_epoch = 0;
    std::uint64_t cutoff = 0;
    std::size_t zombies_scrubbed = 0;

  private:
    friend RecoveredSet recover(Heap&);
    std::vector<RecoveredBlock> blocks_;
};

// Runs fn(0) .. fn(k-1), one call per shard index. Shards get their own
// threads only when the host can run more than one at once; on a single-CPU
// host they execute inline — the same partition of the work without the
// oversubscription cost of timeslicing k threads on one core.
template <typename Fn>
inline void run_sharded(Fn&& fn, unsigned k) {
    if (k <= 1 || std::thread::hardware_concurrency() == 1) {
        for (unsigned i = 0; i < k; ++i) fn(i);
        return;
    }
    std::vector<std::thread> ts;
    ts.reserve(k);
    for (unsigned i = 0; i < k; ++i) ts.emplace_back(fn, i);
    for (auto& t : ts) t.join();
}

// Restores the heap to its recoverable prefix after a crash (or reopen):
//   - blocks stamped with the two most recent epochs, or never stamped at
//     all, are discarded — they belong to epochs that were still volatile;
//   - per uid, one removal record kills the whole group, otherwise the
//     highest-epoch version survives (offset breaks the tie defensively);
//   - every non-survivor with a live header is scrubbed, written back, and
//     committed with one fence so a second crash replays identically;
//   - the allocator is rebuilt so survivors stay allocated.
// The clock is left at its crash value; new work resumes in that epoch.
inline RecoveredSet recover(Heap& heap) {
    const std::uint64_t crash = heap.clock();
    const std::uint64_t cutoff = crash - 2;

    std::vector<RecoveredBlock> scan;
    heap.view().for_each_block([&](BlockRef ref, const PayloadHeader& h) {
        scan.push_back({ref, h});
    });

    struct Group {
        bool dead = false;
        bool has = false;
        std::uint64_t epoch = 0;
        std::uint64_t offset = 0;
    };
    std::unordered_map<std::uint64_t, Group> groups;
    groups.reserve(scan.size());
    for (const RecoveredBlock& b : scan) {
        if (b.hdr.epoch < kInitialEpoch || b.hdr.epoch > cutoff) continue;
        if (b.hdr.payload_len > heap.block_capacity(b.ref))
            throw CorruptImageError("payload length exceeds block capacity");
        Group& g = groups[b.hdr.uid];
        if (b.hdr.blk_type == static_cast<std::uint8_t>(BlkType::Del)) {
            g.dead = true;
            continue;
        }
        if (!g.has || b.hdr.epoch > g.epoch ||
            (b.hdr.epoch == g.epoch && b.ref.offset > g.offset)) {
            g.has = true;
            g.epoch = b.hdr.epoch;
            g.offset = b.ref.offset;
        }
    }

    std::unordered_set<std::uint64_t> survivor_offsets;
    survivor_offsets.reserve(groups.size());
    for (const auto& [uid, g] : groups)
        if (g.has && !g.dead) survivor_offsets.insert(g.offset);

    RecoveredSet out;
    out.crash_epoch = crash;
    out.cutoff = cutoff;
    std::vector<BlockRef> keep;
    keep.reserve(survivor_offsets.size());
    for (const RecoveredBlock& b : scan) {
        if (survivor_offsets.count(b.ref.offset)) {
            out.blocks_.push_back(b);
            keep.push_back(b.ref);
        } else {
            heap.free_block(b.ref);
            heap.write_back(b.ref.offset, kHeaderLine);
            ++out.zombies_scrubbed;
        }
    }
    if (out.zombies_scrubbed) heap.fence();
    heap.reset_allocation(keep);
    return out;
}

// Independent single-pass statement of the survivor rule, used to cross-check
// recover(): two sweeps over uid groups instead of an incremental fold.
// Returns uid -> surviving block offset.
inline std::map<std::uint64_t, std::uint64_t> reference_filter(const HeapView& v) {
    const std::uint64_t cutoff = v.clock() - 2;
    std::set<std::uint64_t> killed;
    std::map<std::uint64_t, std::pair<std::uint64_t, std::uint64_t>> best;  // uid -> (epoch, off)
    v.for_each_block([&](BlockRef ref, const PayloadHeader& h) {
        if (h.epoch < kInitialEpoch || h.epoch > cutoff) return;
        if (h.blk_type == static_cast<std::uint8_t>(BlkType::Del)) {
            killed.insert(h.uid);
            return;
        }
        std::pair<std::uint64_t, std::uint64_t> cand{h.epoch, ref.offset};
        auto it = best.find(h.uid);
        if (it == best.end() || cand > it->second) best[h.uid] = cand;
    });
    std::map<std::uint64_t, std::uint64_t> out;
    for (const auto& [uid, eo] : best)
        if (!killed.count(uid)) out[uid] = eo.second;
    return out;
}

}  // namespace epochstore
