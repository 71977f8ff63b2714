#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <functional>
#include <initializer_list>
#include <mutex>
#include <span>
#include <thread>
#include <unordered_map>
#include <vector>

#include "epochstore/heap.hpp"

namespace epochstore {

// When to push mutated lines toward the persistent medium.
enum class Strategy {
    DirectWB,    // write back eagerly at every mutation
    BufferedWB,  // queue; drain the oldest half synchronously when full
    PerEpoch,    // queue; write back only when the epoch retires
};

enum class AdvanceMode { BackgroundThread, Manual };

struct AdvancerConfig {
    AdvanceMode mode = AdvanceMode::BackgroundThread;
    std::chrono::milliseconds interval{50};
};

// Checkpoints inside advance_epoch, in execution order. Hooks fire on the
// advancing thread; tests use them to assert durability state mid-advance.
enum class AdvancePhase {
    AfterWait = 1,       // no operation at epoch-1 or older remains active
    AfterScrub = 2,      // two-epochs-old free queue scrubbed (headers zeroed)
    AfterWriteBack = 3,  // previous epoch's queued lines + scrubs written back
    AfterFence = 4,      // everything above committed
    Done = 5,            // clock bumped and its line written back (not fenced)
};

// Deliberate misbehavior switches used to prove the audit layer can catch
// real implementation faults. All default off.
struct FaultInjection {
    bool skip_advance_fence = false;    // omit the commit fence before the clock bump
    bool free_wrong_slot = false;       // scrub the one-epoch-old queue instead of two
    bool skip_copy_on_old_epoch = false;  // mutate prior-epoch payloads in place
};

struct RuntimeOptions {
    Strategy strategy = Strategy::PerEpoch;
    AdvancerConfig advancer{};
    std::size_t buffer_capacity = 1000;  // BufferedWB queue limit per epoch slot
    bool audit = false;                  // record op/advance/recycle traces
    FaultInjection faults{};
    // Fires once per begin_op between publishing the epoch claim and
    // re-reading the clock; lets tests force the claim/verify retry path.
    std::function<void(std::uint64_t claimed)> begin_op_hook{};
    std::function<void(AdvancePhase, std::uint64_t from_epoch)> advance_hook{};
};

// Audit records (only collected with RuntimeOptions::audit).
struct OpTouch {
    std::uint64_t op_epoch;
    std::uint64_t offset;
    std::uint64_t header_epoch;  // block's epoch stamp after the touch
    std::uint64_t uid;
};

struct AdvanceRecord {
    std::uint64_t from_epoch;
    // Backend event-sequence windows for the offline ordering check:
    // all queued write-backs land in [wb_begin, wb_end), the commit fence in
    // [fence_begin, fence_end), the clock store+write-back in [clock_begin,
    // clock_end).
    std::uint64_t wb_begin, wb_end;
    std::uint64_t fence_begin, fence_end;
    std::uint64_t clock_begin, clock_end;
    std::size_t scrubbed;
    std::size_t entries_written;
};

struct RecycleEvent {
    std::uint64_t offset;
    std::uint64_t enq_epoch;     // epoch whose free queue held the block
    std::uint64_t advance_from;  // clock value of the advance that freed it
};

class EpochRuntime;

// A linearizable operation pinned to one epoch. Movable, not copyable; ends
// (unregisters from the tracker) on destruction or explicit end().
class Op {
  public:
    Op(Op&& o) noexcept
        : rt_(o.rt_), slot_(o.slot_), epoch_(o.epoch_), retries_(o.retries_) {
        o.rt_ = nullptr;
    }
    Op& operator=(Op&&) = delete;
    Op(const Op&) = delete;
    ~Op() { end(); }

    inline void end();
    std::uint64_t epoch() const { return epoch_; }
    std::uint32_t retries() const { return retries_; }

  private:
    friend class EpochRuntime;
    Op(EpochRuntime* rt, std::uint32_t slot, std::uint64_t epoch, std::uint32_t retries)
        : rt_(rt), slot_(slot), epoch_(epoch), retries_(retries) {}
    EpochRuntime* rt_;
    std::uint32_t slot_;
    std::uint64_t epoch_;
    std::uint32_t retries_;
};

// Buffered durably linearizable persistence runtime.
//
// Completed operations become durable in epoch-sized batches: a crash may
// drop the two most recent epochs, never anything older, and never yields a
// state that isn't a prefix of the history at an epoch boundary. Payload
// blocks carry their birth epoch; mutating a block born in an earlier epoch
// clones it first so the old version stays intact until it is provably
// recoverable-or-dead (two epoch advances later).
class EpochRuntime {
  public:
    static constexpr std::uint32_t kMaxThreads = 256;
    static constexpr std::uint64_t kUidRange = 1u << 16;

    explicit EpochRuntime(Heap heap, RuntimeOptions opt = {})
        : heap_(std::move(heap)), opt_(opt), id_(next_id()) {
        clock_.store(heap_.clock(), std::memory_order_seq_cst);
        if (opt_.advancer.mode == AdvanceMode::BackgroundThread)
            advancer_ = std::thread([this] { advancer_main(); });
    }

    ~EpochRuntime() {
        try {
            close();
        } catch (...) {
        }
    }

    EpochRuntime(const EpochRuntime&) = delete;
    EpochRuntime& operator=(const EpochRuntime&) = delete;

    // Stops the advancer and makes every completed operation durable: two
    // advances push the current epoch's lines out, the final fence commits
    // the last clock value. Idempotent.
    void close() {
        stop_advancer();
        if (closed_) return;
        advance_epoch();
        advance_epoch();
        heap_.fence();
        closed_ = true;
    }

    std::uint64_t epoch() const { return clock_.load(std::memory_order_seq_cst); }
    Heap& heap() { return heap_; }
    const Heap& heap() const { return heap_; }
    const BackendCounters& counters() const { return heap_.counters(); }

    // ---- operations -------------------------------------------------------

    Op begin_op() { return begin_op(std::span<const BlockRef>{}); }

    Op begin_op(std::initializer_list<BlockRef> pre_created) {
        return begin_op(std::span<const BlockRef>(pre_created.begin(), pre_created.size()));
    }

    // Claims the current epoch: publish the claim, re-read the clock, retry
    // if an advance slipped in between. Any block allocated ahead of time
    // (pre_created) gets stamped with the verified epoch and queued for
    // persistence, so its content counts as written by this operation.
    Op begin_op(std::span<const BlockRef> pre_created) {
        std::uint32_t idx = my_slot_index();
        auto& slot = slots_[idx].active;
        std::uint32_t retries = 0;
        std::uint64_t e;
        for (;;) {
            e = clock_.load(std::memory_order_seq_cst);
            slot.store(e, std::memory_order_seq_cst);
            if (retries == 0 && opt_.begin_op_hook) opt_.begin_op_hook(e);
            if (clock_.load(std::memory_order_seq_cst) == e) break;
            slot.store(0, std::memory_order_seq_cst);
            ++retries;
        }
        ops_begun_.fetch_add(1, std::memory_order_relaxed);
        retries_total_.fetch_add(retries, std::memory_order_relaxed);
        Op op(this, idx, e, retries);
        for (const BlockRef& ref : pre_created) {
            heap_.store_u64(ref.offset + 8, e);  // header epoch field
            enqueue_persist(e, ref.offset, ref.len);
            touch(op, ref);
        }
        return op;
    }

    // Allocates a payload block ahead of an operation (e.g. outside a lock).
    // The header is complete except the epoch stamp, which begin_op fills.
    BlockRef pnew_pre(std::uint32_t payload_len, const void* data = nullptr) {
        std::uint32_t idx = my_slot_index();
        BlockRef ref = heap_.alloc_block(payload_len);
        if (data && payload_len) heap_.store(heap_.payload_offset(ref), data, payload_len);
        PayloadHeader h{};
        h.magic = kHeaderMagic;
        h.blk_type = static_cast<std::uint8_t>(BlkType::Alloc);
        h.epoch = 0;
        h.uid = next_uid(idx);
        h.payload_len = payload_len;
        heap_.write_header(ref, h);
        return ref;
    }

    BlockRef pnew(Op& op, std::uint32_t payload_len, const void* data = nullptr) {
        BlockRef ref = heap_.alloc_block(payload_len);
        if (data && payload_len) heap_.store(heap_.payload_offset(ref), data, payload_len);
        PayloadHeader h{};
        h.magic = kHeaderMagic;
        h.blk_type = static_cast<std::uint8_t>(BlkType::Alloc);
        h.epoch = op.epoch();
        h.uid = next_uid(op.slot_);
        h.payload_len = payload_len;
        heap_.write_header(ref, h);
        enqueue_persist(op.epoch(), ref.offset, ref.len);
        touch(op, ref);
        return ref;
    }

    // Writes n bytes at payload offset off. In place when the block already
    // belongs to this epoch; otherwise clones (same uid, type Update), sends
    // the old version to the free queue of this epoch, and returns the clone.
    BlockRef set_field(Op& op, BlockRef ref, std::uint64_t off, const void* src,
                       std::size_t n) {
        PayloadHeader h = heap_.read_header(ref);
        if (h.epoch > op.epoch()) throw OldSeeNewError();
        if (off + n > h.payload_len) throw StateError("field write beyond payload");
        if (h.epoch == op.epoch() || opt_.faults.skip_copy_on_old_epoch) {
            heap_.store(heap_.payload_offset(ref) + off, src, n);
            enqueue_persist(op.epoch(), ref.offset, ref.len);
            touch(op, ref);
            return ref;
        }
        BlockRef nb = clone_block(op, ref, h, h.payload_len);
        heap_.store(heap_.payload_offset(nb) + off, src, n);
        enqueue_persist(op.epoch(), nb.offset, nb.len);
        push_freed(op.epoch(), ref, op.epoch());
        touch(op, nb);
        return nb;
    }

    // Like set_field, but the result has payload length new_len (content
    // beyond the copied prefix is unspecified until written). Stays in place
    // when the block is epoch-current and the new length fits its class.
    BlockRef set_field_resize(Op& op, BlockRef ref, std::uint32_t new_len,
                              std::uint64_t off, const void* src, std::size_t n) {
        PayloadHeader h = heap_.read_header(ref);
        if (h.epoch > op.epoch()) throw OldSeeNewError();
        if (off + n > new_len) throw StateError("field write beyond payload");
        if ((h.epoch == op.epoch() || opt_.faults.skip_copy_on_old_epoch) &&
            new_len <= heap_.block_capacity(ref)) {
            heap_.store_u32(ref.offset + 24, new_len);  // header payload_len field
            heap_.store(heap_.payload_offset(ref) + off, src, n);
            enqueue_persist(op.epoch(), ref.offset, ref.len);
            touch(op, ref);
            return ref;
        }
        BlockRef nb = clone_block(op, ref, h, new_len);
        heap_.store(heap_.payload_offset(nb) + off, src, n);
        enqueue_persist(op.epoch(), nb.offset, nb.len);
        push_freed(op.epoch(), ref, op.epoch());
        touch(op, nb);
        return nb;
    }

    void get_field(Op& op, BlockRef ref, std::uint64_t off, void* dst, std::size_t n) const {
        PayloadHeader h = heap_.read_header(ref);
        if (h.epoch > op.epoch()) throw OldSeeNewError();
        if (off + n > h.payload_len) throw StateError("field read beyond payload");
        std::memcpy(dst, heap_.data() + heap_.payload_offset(ref) + off, n);
    }

    // Raw payload access for readers already serialized by the caller (e.g.
    // under the same lock that orders writers). No epoch verification.
    const std::uint8_t* payload_ptr(BlockRef ref) const {
        return heap_.data() + heap_.payload_offset(ref);
    }

    PayloadHeader header(BlockRef ref) const { return heap_.read_header(ref); }

    // Removes a payload block.
    //  - born this epoch, never cloned: nothing of it can outlive a crash of
    //    this epoch; scrub and reuse immediately.
    //  - born this epoch as a clone: flip it to a removal record in place and
    //    queue it for freeing (the record kills its uid at recovery).
    //  - born earlier: emit a removal record stamped with this epoch; the old
    //    version waits two advances, the record three.
    void pdelete(Op& op, BlockRef ref) {
        PayloadHeader h = heap_.read_header(ref);
        if (h.epoch > op.epoch()) throw OldSeeNewError();
        if (h.epoch == op.epoch()) {
            if (h.blk_type == static_cast<std::uint8_t>(BlkType::Alloc)) {
                free_now(op, ref);
            } else {
                heap_.store_u8(ref.offset + 4, static_cast<std::uint8_t>(BlkType::Del));
                enqueue_persist(op.epoch(), ref.offset, kHeaderLine);
                push_freed(op.epoch(), ref, op.epoch());
            }
            return;
        }
        BlockRef anti = make_anti(op, h.uid);
        push_freed(op.epoch() + 1, anti, op.epoch() + 1);
        push_freed(op.epoch(), ref, op.epoch());
    }

    // First half of deferred reclamation: publish the removal record now,
    // hand the block itself to preclaim once no reader can still hold it.
    void pretire(Op& op, BlockRef ref) {
        PayloadHeader h = heap_.read_header(ref);
        if (h.epoch > op.epoch()) throw OldSeeNewError();
        if (h.epoch < op.epoch()) {
            BlockRef anti = make_anti(op, h.uid);
            std::lock_guard<std::mutex> g(anti_mu_);
            anti_registry_[ref.offset] = anti;
        } else if (h.blk_type != static_cast<std::uint8_t>(BlkType::Alloc)) {
            heap_.store_u8(ref.offset + 4, static_cast<std::uint8_t>(BlkType::Del));
            enqueue_persist(op.epoch(), ref.offset, kHeaderLine);
        }
        // born-this-epoch Alloc: its removal record is the absence of the
        // block itself; preclaim reclaims it.
    }

    // Second half; runs outside any operation once readers are done. Blocks
    // whose content pre-dates the previous epoch are reusable immediately;
    // recent ones wait in the free queues like a plain delete.
    void preclaim(BlockRef ref) {
        std::uint64_t c = clock_.load(std::memory_order_seq_cst);
        BlockRef anti{};
        {
            std::lock_guard<std::mutex> g(anti_mu_);
            auto it = anti_registry_.find(ref.offset);
            if (it != anti_registry_.end()) {
                anti = it->second;
                anti_registry_.erase(it);
            }
        }
        PayloadHeader h = heap_.read_header(ref);
        if (h.epoch + 1 < c) {  // content horizon already passed
            scrub_now(ref, c);
            if (!anti.null()) push_freed(h.epoch, anti, h.epoch);
        } else if (h.epoch == c &&
                   h.blk_type == static_cast<std::uint8_t>(BlkType::Alloc) && anti.null()) {
            scrub_now(ref, c);
        } else {
            push_freed(c, ref, c);
            if (!anti.null()) push_freed(c + 1, anti, c + 1);
        }
    }

    // Scrub and reuse immediately, re-queuing the header line so the zeroed
    // state reaches the medium with this epoch's batch.
    void free_now(Op& op, BlockRef ref) {
        heap_.free_block(ref);
        enqueue_persist(op.epoch(), ref.offset, kHeaderLine);
        heap_.recycle_block(ref);
    }

    // ---- epoch advance ----------------------------------------------------

    // Moves the clock from e to e+1:
    //   1. wait for every operation at epoch e-1 or older,
    //   2. scrub blocks freed in epoch e-2 (reuse deferred past step 5),
    //   3. write back epoch e-1's queued lines plus the step-2 scrubs,
    //   4. fence — commits step 3 and, crucially, the still-pending clock
    //      line carrying e, so scrubs can never become durable ahead of the
    //      clock value that justifies them,
    //   5. store clock e+1 and write its line back (left pending for the
    //      next advance's fence).
    void advance_epoch() {
        std::lock_guard<std::mutex> adv(advance_mu_);
        const std::uint64_t e = clock_.load(std::memory_order_seq_cst);

        wait_all(e - 1);
        phase(AdvancePhase::AfterWait, e);

        std::uint64_t free_epoch = e - 2 + (opt_.faults.free_wrong_slot ? 1 : 0);
        std::vector<FreedEntry> to_scrub;
        {
            FreedSlot& fs = freed_[free_epoch & 3];
            std::lock_guard<std::mutex> g(fs.mu);
            to_scrub.swap(fs.v);
        }
        std::vector<std::pair<std::uint64_t, std::uint32_t>> wb_ranges;
        for (const FreedEntry& fe : to_scrub) {
            heap_.free_block(fe.ref);
            wb_ranges.emplace_back(fe.ref.offset, kHeaderLine);
        }
        phase(AdvancePhase::AfterScrub, e);

        std::deque<PersistEntry> batch;
        {
            PersistSlot& ps = persist_[(e - 1) & 3];
            std::lock_guard<std::mutex> g(ps.mu);
            batch.swap(ps.q);
            ps.dedup.clear();
        }
        std::uint64_t wb_begin = event_seq();
        for (const PersistEntry& pe : batch) wb_ranges.emplace_back(pe.off, pe.len);
        for (const auto& [off, len] : wb_ranges) heap_.write_back(off, len);
        last_wb_ranges_ = wb_ranges;
        std::uint64_t wb_end = event_seq();
        phase(AdvancePhase::AfterWriteBack, e);

        std::uint64_t fence_begin = wb_end;
        if (!opt_.faults.skip_advance_fence) heap_.fence();
        std::uint64_t fence_end = event_seq();
        phase(AdvancePhase::AfterFence, e);

        std::uint64_t clock_begin = fence_end;
        heap_.set_clock(e + 1);
        clock_.store(e + 1, std::memory_order_seq_cst);
        heap_.write_back(kClockOffset, 8);
        std::uint64_t clock_end = event_seq();

        for (const FreedEntry& fe : to_scrub) {
            heap_.recycle_block(fe.ref);
            if (opt_.audit) {
                std::lock_guard<std::mutex> g(audit_mu_);
                recycles_.push_back({fe.ref.offset, fe.enq_epoch, e});
            }
        }
        if (opt_.audit) {
            std::lock_guard<std::mutex> g(audit_mu_);
            advance_records_.push_back({e, wb_begin, wb_end, fence_begin, fence_end,
                                        clock_begin, clock_end, to_scrub.size(),
                                        batch.size()});
        }
        advances_.fetch_add(1, std::memory_order_relaxed);
        phase(AdvancePhase::Done, e);
    }

    // ---- diagnostics ------------------------------------------------------

    std::size_t pending_persists(std::uint64_t epoch) const {
        const PersistSlot& ps = persist_[epoch & 3];
        std::lock_guard<std::mutex> g(ps.mu);
        return ps.q.size();
    }

    std::size_t pending_frees(std::uint64_t epoch) const {
        const FreedSlot& fs = freed_[epoch & 3];
        std::lock_guard<std::mutex> g(fs.mu);
        return fs.v.size();
    }

    // Valid on the advancing thread during hooks, or between advances.
    const std::vector<std::pair<std::uint64_t, std::uint32_t>>& last_advance_write_backs()
        const {
        return last_wb_ranges_;
    }

    std::vector<OpTouch> op_touches() const {
        std::lock_guard<std::mutex> g(audit_mu_);
        return op_touches_;
    }
    std::vector<AdvanceRecord> advance_records() const {
        std::lock_guard<std::mutex> g(audit_mu_);
        return advance_records_;
    }
    std::vector<RecycleEvent> recycle_events() const {
        std::lock_guard<std::mutex> g(audit_mu_);
        return recycles_;
    }
    std::uint64_t ops_begun() const { return ops_begun_.load(std::memory_order_relaxed); }
    std::uint64_t retries_total() const {
        return retries_total_.load(std::memory_order_relaxed);
    }
    std::uint64_t advances() const { return advances_.load(std::memory_order_relaxed); }

  private:
    friend class Op;

    struct alignas(64) ThreadSlot {
        std::atomic<std::uint64_t> active{0};
    };
    struct UidCache {
        std::uint64_t next = 0;
        std::uint64_t remaining = 0;
    };
    struct PersistEntry {
        std::uint64_t off;
        std::uint32_t len;
    };
    struct PersistSlot {
        mutable std::mutex mu;
        std::deque<PersistEntry> q;
        std::unordered_map<std::uint64_t, PersistEntry*> dedup;
    };
    struct FreedEntry {
        BlockRef ref;
        std::uint64_t enq_epoch;
    };
    struct FreedSlot {
        mutable std::mutex mu;
        std::vector<FreedEntry> v;
    };

    static std::uint64_t next_id() {
        static std::atomic<std::uint64_t> n{1};
        return n.fetch_add(1);
    }

    std::uint32_t my_slot_index() {
        thread_local std::unordered_map<std::uint64_t, std::uint32_t> tl;
        auto it = tl.find(id_);
        if (it != tl.end()) return it->second;
        std::uint32_t idx = slots_used_.fetch_add(1);
        if (idx >= kMaxThreads) throw StateError("thread limit exceeded");
        tl.emplace(id_, idx);
        return idx;
    }

    // Durably reserves uid ranges in bulk: the reservation line is written
    // back immediately and commits with the next fence, which always precedes
    // any state in which a uid from the range is recoverable.
    std::uint64_t next_uid(std::uint32_t slot) {
        UidCache& c = uid_cache_[slot];
        if (c.remaining == 0) {
            std::lock_guard<std::mutex> g(uid_mu_);
            std::uint64_t cur = heap_.uid_counter();
            heap_.set_uid_counter(cur + kUidRange);
            heap_.write_back(kUidOffset, 8);
            c.next = cur;
            c.remaining = kUidRange;
        }
        --c.remaining;
        return c.next++;
    }

    void end_op(std::uint32_t slot) {
        slots_[slot].active.store(0, std::memory_order_seq_cst);
    }

    // Blocks until no registered operation runs at `target` or older. Claims
    // published before an operation's verify step are visible here.
    void wait_all(std::uint64_t target) {
        std::uint32_t n = std::min(slots_used_.load(std::memory_order_acquire), kMaxThreads);
        for (std::uint32_t i = 0; i < n; ++i) {
            int spins = 0;
            for (;;) {
                std::uint64_t v = slots_[i].active.load(std::memory_order_seq_cst);
                if (v == 0 || v > target) break;
                if (++spins > 64) std::this_thread::yield();
            }
        }
    }

    BlockRef clone_block(Op& op, BlockRef ref, const PayloadHeader& h,
                         std::uint32_t new_len) {
        BlockRef nb = heap_.alloc_block(new_len);
        std::uint32_t copy = std::min(h.payload_len, new_len);
        if (copy)
            heap_.store(heap_.payload_offset(nb),
                        heap_.data() + heap_.payload_offset(ref), copy);
        PayloadHeader nh{};
        nh.magic = kHeaderMagic;
        nh.blk_type = static_cast<std::uint8_t>(BlkType::Update);
        nh.epoch = op.epoch();
        nh.uid = h.uid;
        nh.payload_len = new_len;
        heap_.write_header(nb, nh);
        return nb;
    }

    // Zero-payload removal record: {Del, op epoch, victim's uid}, queued with
    // this epoch's batch so it is durable before the epoch can enter the
    // recoverable prefix.
    BlockRef make_anti(Op& op, std::uint64_t uid) {
        BlockRef anti = heap_.alloc_block(0);
        PayloadHeader h{};
        h.magic = kHeaderMagic;
        h.blk_type = static_cast<std::uint8_t>(BlkType::Del);
        h.epoch = op.epoch();
        h.uid = uid;
        h.payload_len = 0;
        heap_.write_header(anti, h);
        enqueue_persist(op.epoch(), anti.offset, anti.len);
        return anti;
    }

    void scrub_now(BlockRef ref, std::uint64_t epoch) {
        heap_.free_block(ref);
        enqueue_persist(epoch, ref.offset, kHeaderLine);
        heap_.recycle_block(ref);
    }

    void push_freed(std::uint64_t epoch, BlockRef ref, std::uint64_t enq_epoch) {
        FreedSlot& fs = freed_[epoch & 3];
        std::lock_guard<std::mutex> g(fs.mu);
        fs.v.push_back({ref, enq_epoch});
    }

    // One queue entry per block offset and epoch; repeat mutations of the
    // same block within an epoch cost nothing extra at write-back time.
    void enqueue_persist(std::uint64_t epoch, std::uint64_t off, std::uint32_t len) {
        if (opt_.strategy == Strategy::DirectWB) {
            heap_.write_back(off, len);
            return;
        }
        PersistSlot& ps = persist_[epoch & 3];
        std::lock_guard<std::mutex> g(ps.mu);
        auto it = ps.dedup.find(off);
        if (it != ps.dedup.end()) {
            it->second->len = std::max(it->second->len, len);
            return;
        }
        ps.q.push_back({off, len});
        ps.dedup.emplace(off, &ps.q.back());
        if (opt_.strategy == Strategy::BufferedWB && ps.q.size() >= opt_.buffer_capacity) {
            std::size_t drain = (opt_.buffer_capacity + 1) / 2;
            for (std::size_t i = 0; i < drain && !ps.q.empty(); ++i) {
                PersistEntry pe = ps.q.front();
                ps.q.pop_front();
                ps.dedup.erase(pe.off);
                heap_.write_back(pe.off, pe.len);
            }
        }
    }

    void touch(Op& op, BlockRef ref) {
        if (!opt_.audit) return;
        PayloadHeader h = heap_.read_header(ref);
        std::lock_guard<std::mutex> g(audit_mu_);
        op_touches_.push_back({op.epoch(), ref.offset, h.epoch, h.uid});
    }

    void phase(AdvancePhase p, std::uint64_t e) {
        if (opt_.advance_hook) opt_.advance_hook(p, e);
    }

    std::uint64_t event_seq() const { return heap_.backend().event_seq(); }

    void advancer_main() {
        std::unique_lock<std::mutex> lk(stop_mu_);
        for (;;) {
            if (stop_cv_.wait_for(lk, opt_.advancer.interval, [this] { return stop_; }))
                return;
            lk.unlock();
            advance_epoch();
            lk.lock();
        }
    }

    void stop_advancer() {
        {
            std::lock_guard<std::mutex> g(stop_mu_);
            stop_ = true;
        }
        stop_cv_.notify_all();
        if (advancer_.joinable()) advancer_.join();
    }

    Heap heap_;
    RuntimeOptions opt_;
    std::uint64_t id_;
    std::atomic<std::uint64_t> clock_{0};

    std::array<ThreadSlot, kMaxThreads> slots_{};
    std::array<UidCache, kMaxThreads> uid_cache_{};
    std::atomic<std::uint32_t> slots_used_{0};
    std::mutex uid_mu_;

    std::array<PersistSlot, 4> persist_{};
    std::array<FreedSlot, 4> freed_{};
    std::mutex advance_mu_;

    std::mutex anti_mu_;
    std::unordered_map<std::uint64_t, BlockRef> anti_registry_;

    mutable std::mutex audit_mu_;
    std::vector<OpTouch> op_touches_;
    std::vector<AdvanceRecord> advance_records_;
    std::vector<RecycleEvent> recycles_;
    std::vector<std::pair<std::uint64_t, std::uint32_t>> last_wb_ranges_;

    std::atomic<std::uint64_t> ops_begun_{0};
    std::atomic<std::uint64_t> retries_total_{0};
    std::atomic<std::uint64_t> advances_{0};

    std::thread advancer_;
    std::mutex stop_mu_;
    std::condition_variable stop_cv_;
    bool stop_ = false;
    bool closed_ = false;
};

inline void Op::end() {
    if (rt_) {
        rt_->end_op(slot_);
        rt_ = nullptr;
    }
}

// 16-byte (value, epoch) cell for optimistic writers: an update tagged with a
// newer epoch than the caller's operation aborts the caller instead of being
// silently overwritten, preserving epoch-monotone linearization.
class EpochCasCell {
  public:
    struct alignas(16) Word {
        std::uint64_t value;
        std::uint64_t epoch;
    };

    explicit EpochCasCell(std::uint64_t initial = 0) : w_(Word{initial, 0}) {}

    std::uint64_t load() const { return w_.load(std::memory_order_acquire).value; }
    Word load_word() const { return w_.load(std::memory_order_acquire); }

    bool compare_exchange(const Op& op, std::uint64_t expected, std::uint64_t desired) {
        Word cur = w_.load(std::memory_order_acquire);
        if (cur.epoch > op.epoch()) throw EpochAdvancedError();
        if (cur.value != expected) return false;
        return w_.compare_exchange_strong(cur, Word{desired, op.epoch()},
                                          std::memory_order_acq_rel,
                                          std::memory_order_acquire);
    }

  private:
    std::atomic<Word> w_;
};

}  // namespace epochstore
