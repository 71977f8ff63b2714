// Epoch runtime tests: payload lifecycle (clone-on-older-epoch, removal
// records, deferred reclamation), the five-step advance and its durability
// ordering, write-back strategies, the claim/verify begin protocol, and the
// epoch-tagged CAS cell.
#include <gtest/gtest.h>

#include <cstring>
#include <thread>

#include "epochstore/runtime.hpp"
#include "epochstore/sim_backend.hpp"

using namespace epochstore;

namespace {

struct Fixture {
    SimBackend* be = nullptr;  // owned by the heap
    std::unique_ptr<EpochRuntime> rt;

    explicit Fixture(RuntimeOptions opt = {}, SimBackend::Options bopt = {},
                     std::uint64_t total = 1u << 20) {
        auto backend = std::make_unique<SimBackend>(std::size_t(total), bopt);
        be = backend.get();
        HeapGeometry g;
        g.total_bytes = total;
        Heap heap = Heap::create(g, std::move(backend));
        rt = std::make_unique<EpochRuntime>(std::move(heap), opt);
    }
};

RuntimeOptions manual_opts() {
    RuntimeOptions o;
    o.advancer.mode = AdvanceMode::Manual;
    o.audit = true;
    return o;
}

std::uint64_t persisted_clock(SimBackend& be) {
    std::uint64_t v;
    std::memcpy(&v, be.persistent_image().data() + kClockOffset, 8);
    return v;
}

}  // namespace

TEST(Runtime, FreshRuntimeStartsAtInitialEpoch) {
    Fixture f(manual_opts());
    EXPECT_EQ(f.rt->epoch(), kInitialEpoch);
}

TEST(Runtime, ResumesFromReopenedClock) {
    auto backend = std::make_unique<SimBackend>(std::size_t(1u << 20));
    SimBackend* be = backend.get();
    HeapGeometry g;
    Heap heap = Heap::create(g, std::move(backend));
    heap.set_clock(9);
    heap.write_back(kClockOffset, 8);
    heap.fence();
    (void)be;
    EpochRuntime rt(std::move(heap), manual_opts());
    EXPECT_EQ(rt.epoch(), 9u);
    Op op = rt.begin_op();
    EXPECT_EQ(op.epoch(), 9u);
    BlockRef b = rt.pnew(op, 4, "abc");
    EXPECT_EQ(rt.header(b).epoch, 9u);
}

TEST(Runtime, PnewStampsEpochAndQueuesOnce) {
    Fixture f(manual_opts());
    Op op = f.rt->begin_op();
    BlockRef b = f.rt->pnew(op, 16, "hello");
    PayloadHeader h = f.rt->header(b);
    EXPECT_EQ(h.epoch, 4u);
    EXPECT_EQ(h.blk_type, static_cast<std::uint8_t>(BlkType::Alloc));
    EXPECT_EQ(h.payload_len, 16u);
    EXPECT_EQ(f.rt->pending_persists(4), 1u);
    // Repeat writes to the same block this epoch do not grow the queue.
    std::uint32_t x = 7;
    BlockRef b2 = f.rt->set_field(op, b, 8, &x, 4);
    EXPECT_EQ(b2, b);  // same epoch: in place
    EXPECT_EQ(f.rt->pending_persists(4), 1u);
    std::uint32_t back = 0;
    f.rt->get_field(op, b, 8, &back, 4);
    EXPECT_EQ(back, 7u);
}

TEST(Runtime, PreCreatedBlocksAreStampedAtBegin) {
    Fixture f(manual_opts());
    BlockRef pre = f.rt->pnew_pre(8, "payload");
    EXPECT_EQ(f.rt->header(pre).epoch, 0u);
    f.rt->advance_epoch();  // begin should stamp with the *verified* epoch (5)
    Op op = f.rt->begin_op({pre});
    EXPECT_EQ(op.epoch(), 5u);
    EXPECT_EQ(f.rt->header(pre).epoch, 5u);
    EXPECT_EQ(f.rt->pending_persists(5), 1u);
}

TEST(Runtime, CopyOnOlderEpochPreservesUidAndDefersOldVersion) {
    Fixture f(manual_opts());
    BlockRef v1;
    std::uint64_t uid;
    {
        Op op = f.rt->begin_op();
        v1 = f.rt->pnew(op, 8, "version1");
        uid = f.rt->header(v1).uid;
    }
    f.rt->advance_epoch();  // clock 5
    BlockRef v2;
    {
        Op op = f.rt->begin_op();
        v2 = f.rt->set_field(op, v1, 7, "2", 1);
    }
    EXPECT_NE(v2.offset, v1.offset);
    PayloadHeader h2 = f.rt->header(v2);
    EXPECT_EQ(h2.uid, uid);
    EXPECT_EQ(h2.epoch, 5u);
    EXPECT_EQ(h2.blk_type, static_cast<std::uint8_t>(BlkType::Update));
    EXPECT_EQ(std::memcmp(f.rt->payload_ptr(v2), "version2", 8), 0);
    // Old version still readable (its epoch is old) and queued for freeing.
    EXPECT_EQ(f.rt->header(v1).magic, kHeaderMagic);
    EXPECT_EQ(f.rt->pending_frees(5), 1u);
    // It is scrubbed exactly two advances after enqueue: 5 -> freed while
    // advancing from 7.
    f.rt->advance_epoch();  // from 5
    f.rt->advance_epoch();  // from 6
    EXPECT_EQ(f.rt->header(v1).magic, kHeaderMagic);
    f.rt->advance_epoch();  // from 7: scrub
    EXPECT_EQ(f.rt->header(v1).magic, 0u);
    auto recycles = f.rt->recycle_events();
    ASSERT_EQ(recycles.size(), 1u);
    EXPECT_EQ(recycles[0].offset, v1.offset);
    EXPECT_EQ(recycles[0].enq_epoch, 5u);
    EXPECT_EQ(recycles[0].advance_from, 7u);
    EXPECT_EQ(recycles[0].advance_from, recycles[0].enq_epoch + 2);
}

TEST(Runtime, SameEpochAllocDeleteVanishesImmediately) {
    Fixture f(manual_opts());
    Op op = f.rt->begin_op();
    BlockRef b = f.rt->pnew(op, 8, "temp");
    f.rt->pdelete(op, b);
    EXPECT_EQ(f.rt->header(b).magic, 0u);
    EXPECT_EQ(f.rt->pending_frees(4), 0u);  // reused now, not deferred
    // The scrubbed header line still rides this epoch's batch (dedup keeps
    // the original entry).
    EXPECT_EQ(f.rt->pending_persists(4), 1u);
}

TEST(Runtime, SameEpochCloneDeleteFlipsToRemovalRecord) {
    Fixture f(manual_opts());
    BlockRef v1;
    {
        Op op = f.rt->begin_op();
        v1 = f.rt->pnew(op, 8, "version1");
    }
    f.rt->advance_epoch();  // clock 5
    Op op = f.rt->begin_op();
    BlockRef v2 = f.rt->set_field(op, v1, 0, "X", 1);  // clone at 5
    f.rt->pdelete(op, v2);                             // same-epoch, Update type
    PayloadHeader h = f.rt->header(v2);
    EXPECT_EQ(h.magic, kHeaderMagic);  // still present as a removal record
    EXPECT_EQ(h.blk_type, static_cast<std::uint8_t>(BlkType::Del));
    EXPECT_EQ(f.rt->pending_frees(5), 2u);  // old version + flipped record
}

TEST(Runtime, CrossEpochDeleteEmitsRemovalRecord) {
    Fixture f(manual_opts());
    BlockRef b;
    std::uint64_t uid;
    {
        Op op = f.rt->begin_op();
        b = f.rt->pnew(op, 8, "original");
        uid = f.rt->header(b).uid;
    }
    f.rt->advance_epoch();  // clock 5
    {
        Op op = f.rt->begin_op();
        f.rt->pdelete(op, b);
    }
    // Record goes into this epoch's batch; victim waits two advances, the
    // record itself three.
    EXPECT_EQ(f.rt->pending_persists(5), 1u);
    EXPECT_EQ(f.rt->pending_frees(5), 1u);
    EXPECT_EQ(f.rt->pending_frees(6), 1u);
    // Find the record: live block with Del type and the victim's uid.
    bool found = false;
    for (auto& [ref, h] : f.rt->heap().view().live_blocks())
        if (h.blk_type == static_cast<std::uint8_t>(BlkType::Del)) {
            EXPECT_EQ(h.uid, uid);
            EXPECT_EQ(h.epoch, 5u);
            found = true;
        }
    EXPECT_TRUE(found);
    // Victim scrubbed at advance-from-7, record at advance-from-8.
    f.rt->advance_epoch();
    f.rt->advance_epoch();
    EXPECT_EQ(f.rt->header(b).magic, kHeaderMagic);
    f.rt->advance_epoch();  // from 7
    EXPECT_EQ(f.rt->header(b).magic, 0u);
    std::size_t live_del = 0;
    for (auto& [ref, h] : f.rt->heap().view().live_blocks())
        live_del += h.blk_type == static_cast<std::uint8_t>(BlkType::Del);
    EXPECT_EQ(live_del, 1u);
    f.rt->advance_epoch();  // from 8
    for (auto& [ref, h] : f.rt->heap().view().live_blocks())
        EXPECT_NE(h.blk_type, static_cast<std::uint8_t>(BlkType::Del));
}

TEST(Runtime, DurableClockTrailsCacheClockByAtMostOne) {
    Fixture f(manual_opts());
    for (int i = 0; i < 6; ++i) {
        std::uint64_t cache = f.rt->epoch();
        std::uint64_t durable = persisted_clock(*f.be);
        EXPECT_TRUE(durable == cache || durable + 1 == cache)
            << "cache " << cache << " durable " << durable;
        f.rt->advance_epoch();
    }
}

// A delete whose epoch is still volatile must leave the original recoverable:
// with the clock line as the only unstable line after three advances, the
// image that kept the old clock shows the victim intact plus the record.
TEST(Runtime, RecentDeleteKeepsOriginalInOlderImage) {
    Fixture f(manual_opts());
    BlockRef b;
    std::uint64_t uid;
    {
        Op op = f.rt->begin_op();
        b = f.rt->pnew(op, 8, "original");
        uid = f.rt->header(b).uid;
    }
    f.rt->advance_epoch();  // clock 5
    {
        Op op = f.rt->begin_op();
        f.rt->pdelete(op, b);
    }
    f.rt->advance_epoch();  // clock 6; victim's content committed
    f.rt->advance_epoch();  // clock 7; record committed, durable clock 6
    auto images = f.be->enumerate_crash_images();
    ASSERT_EQ(images.size(), 2u) << "only the clock line should be unstable";
    bool checked = false;
    for (auto& img : images) {
        HeapView v(img.data(), img.size());
        if (v.clock() != 6) continue;
        checked = true;
        bool original = false, record = false;
        v.for_each_block([&](BlockRef, const PayloadHeader& h) {
            if (h.uid != uid) return;
            if (h.blk_type == static_cast<std::uint8_t>(BlkType::Alloc)) {
                EXPECT_EQ(h.epoch, 4u);
                original = true;
            }
            if (h.blk_type == static_cast<std::uint8_t>(BlkType::Del)) {
                EXPECT_EQ(h.epoch, 5u);
                record = true;
            }
        });
        EXPECT_TRUE(original) << "victim must still be recoverable";
        EXPECT_TRUE(record);
    }
    EXPECT_TRUE(checked);
}

TEST(Runtime, AdvanceWritesBackThenFencesThenBumpsClock) {
    RuntimeOptions ro = manual_opts();
    SimBackend::Options bo;
    bo.record_events = true;
    Fixture f(ro, bo);
    // Two blocks born at 4, cloned at 5 -> two old versions queued at 5.
    BlockRef a, b;
    {
        Op op = f.rt->begin_op();
        a = f.rt->pnew(op, 8, "aaaaaaaa");
        b = f.rt->pnew(op, 8, "bbbbbbbb");
    }
    f.rt->advance_epoch();  // from 4 -> 5
    {
        Op op = f.rt->begin_op();
        f.rt->set_field(op, a, 0, "A", 1);
        f.rt->set_field(op, b, 0, "B", 1);
    }
    f.rt->advance_epoch();  // from 5 -> 6
    {
        Op op = f.rt->begin_op();
        f.rt->pnew(op, 8, "c1");
        f.rt->pnew(op, 8, "c2");
        f.rt->pnew(op, 8, "c3");
    }
    f.rt->advance_epoch();  // from 6 -> 7
    auto fences_before = f.be->counters().snapshot().fences;
    f.rt->advance_epoch();  // from 7 -> 8: scrub the two old versions,
                            // write back the three epoch-6 blocks
    auto recs = f.rt->advance_records();
    const AdvanceRecord& r = recs.back();
    EXPECT_EQ(r.from_epoch, 7u);
    EXPECT_EQ(r.scrubbed, 2u);
    EXPECT_EQ(r.entries_written, 3u);
    EXPECT_EQ(f.be->counters().snapshot().fences, fences_before + 1);

    // Offline ordering check on the event log: write-backs, then one fence,
    // then the clock store carrying 8.
    auto events = f.be->events_snapshot();
    std::size_t wb_in_window = 0;
    bool fence_in_window = false, clock_store_in_window = false;
    for (const auto& ev : events) {
        if (ev.kind == BackendEvent::WriteBack && ev.seq >= r.wb_begin && ev.seq < r.wb_end)
            ++wb_in_window;
        if (ev.kind == BackendEvent::Fence && ev.seq >= r.fence_begin && ev.seq < r.fence_end)
            fence_in_window = true;
        if (ev.kind == BackendEvent::Store && ev.seq >= r.clock_begin &&
            ev.seq < r.clock_end && ev.line_first == kClockOffset / kLineBytes &&
            ev.value == 8)
            clock_store_in_window = true;
    }
    EXPECT_GE(wb_in_window, 5u);  // 3 queued blocks + 2 scrub lines
    EXPECT_TRUE(fence_in_window);
    EXPECT_TRUE(clock_store_in_window);
    EXPECT_LE(r.wb_end, r.fence_begin + 1);
    EXPECT_LE(r.fence_end, r.clock_begin + 1);

    // Every audited touch stamped its block with the operation's epoch.
    for (const OpTouch& t : f.rt->op_touches()) EXPECT_EQ(t.header_epoch, t.op_epoch);
}

TEST(Runtime, PostFenceCheckpointSeesWrittenLinesClean) {
    RuntimeOptions ro = manual_opts();
    SimBackend* be_probe = nullptr;
    EpochRuntime* rt_probe = nullptr;
    bool checked = false;
    bool clean = true;
    ro.advance_hook = [&](AdvancePhase p, std::uint64_t) {
        if (p != AdvancePhase::AfterFence || !rt_probe) return;
        for (auto& [off, len] : rt_probe->last_advance_write_backs()) {
            checked = true;
            clean &= be_probe->range_clean(off, len);
        }
    };
    Fixture f(ro);
    be_probe = f.be;
    rt_probe = f.rt.get();
    {
        Op op = f.rt->begin_op();
        f.rt->pnew(op, 8, "x");
    }
    f.rt->advance_epoch();
    f.rt->advance_epoch();  // writes the epoch-4 block back
    EXPECT_TRUE(checked);
    EXPECT_TRUE(clean);
}

TEST(Runtime, SkippedFenceLeavesLinesPendingAtCheckpoint) {
    RuntimeOptions ro = manual_opts();
    ro.faults.skip_advance_fence = true;
    SimBackend* be_probe = nullptr;
    EpochRuntime* rt_probe = nullptr;
    bool any_not_clean = false;
    ro.advance_hook = [&](AdvancePhase p, std::uint64_t) {
        if (p != AdvancePhase::AfterFence || !rt_probe) return;
        for (auto& [off, len] : rt_probe->last_advance_write_backs())
            any_not_clean |= !be_probe->range_clean(off, len);
    };
    Fixture f(ro);
    be_probe = f.be;
    rt_probe = f.rt.get();
    {
        Op op = f.rt->begin_op();
        f.rt->pnew(op, 8, "x");
    }
    f.rt->advance_epoch();
    f.rt->advance_epoch();
    EXPECT_TRUE(any_not_clean) << "without the fence the lines must stay pending";
}

TEST(Runtime, WrongFreeSlotFaultIsVisibleInRecycleAudit) {
    RuntimeOptions ro = manual_opts();
    ro.faults.free_wrong_slot = true;
    Fixture f(ro);
    BlockRef b;
    {
        Op op = f.rt->begin_op();
        b = f.rt->pnew(op, 8, "seed");
    }
    f.rt->advance_epoch();  // clock 5
    {
        Op op = f.rt->begin_op();
        f.rt->set_field(op, b, 0, "Y", 1);  // old version queued at 5
    }
    f.rt->advance_epoch();  // from 5
    f.rt->advance_epoch();  // from 6: faulty advance frees the epoch-5 queue early
    auto recycles = f.rt->recycle_events();
    ASSERT_FALSE(recycles.empty());
    EXPECT_NE(recycles[0].advance_from, recycles[0].enq_epoch + 2);
}

TEST(Runtime, InPlaceMutationFaultIsVisibleInTouchAudit) {
    RuntimeOptions ro = manual_opts();
    ro.faults.skip_copy_on_old_epoch = true;
    Fixture f(ro);
    BlockRef b;
    {
        Op op = f.rt->begin_op();
        b = f.rt->pnew(op, 8, "original");
    }
    f.rt->advance_epoch();
    {
        Op op = f.rt->begin_op();
        BlockRef b2 = f.rt->set_field(op, b, 0, "Z", 1);
        EXPECT_EQ(b2, b) << "fault forces in-place mutation";
    }
    bool mismatch = false;
    for (const OpTouch& t : f.rt->op_touches()) mismatch |= t.header_epoch != t.op_epoch;
    EXPECT_TRUE(mismatch);
}

TEST(Runtime, NewerBlocksAreInvisibleToOlderOps) {
    Fixture f(manual_opts());
    Op old_op = f.rt->begin_op();  // epoch 4
    f.rt->advance_epoch();
    BlockRef newer;
    std::thread t([&] {
        Op op = f.rt->begin_op();  // epoch 5
        newer = f.rt->pnew(op, 8, "future!");
    });
    t.join();
    char buf[4];
    EXPECT_THROW(f.rt->get_field(old_op, newer, 0, buf, 4), OldSeeNewError);
    EXPECT_THROW(f.rt->set_field(old_op, newer, 0, "x", 1), OldSeeNewError);
    EXPECT_THROW(f.rt->set_field_resize(old_op, newer, 16, 0, "x", 1), OldSeeNewError);
    EXPECT_THROW(f.rt->pdelete(old_op, newer), OldSeeNewError);
    EXPECT_THROW(f.rt->pretire(old_op, newer), OldSeeNewError);
}

TEST(Runtime, StrategyDirectWritesBackEagerly) {
    RuntimeOptions ro = manual_opts();
    ro.strategy = Strategy::DirectWB;
    Fixture f(ro);
    auto before = f.be->counters().snapshot().writes_back;
    Op op = f.rt->begin_op();
    BlockRef b = f.rt->pnew(op, 16, "0123456789abcdef");
    for (int i = 0; i < 3; ++i) f.rt->set_field(op, b, 0, "x", 1);
    auto after = f.be->counters().snapshot().writes_back;
    EXPECT_GE(after - before, 4u);  // one per mutation, no dedup
    EXPECT_EQ(f.rt->pending_persists(4), 0u);
}

TEST(Runtime, StrategyPerEpochDefersAndDeduplicates) {
    Fixture f(manual_opts());  // PerEpoch default
    auto base = f.be->counters().snapshot().writes_back;
    {
        Op op = f.rt->begin_op();
        BlockRef b = f.rt->pnew(op, 16, "0123456789abcdef");
        for (int i = 0; i < 3; ++i) f.rt->set_field(op, b, 0, "x", 1);
    }
    // Only the uid reservation line was written back so far.
    EXPECT_EQ(f.be->counters().snapshot().writes_back - base, 1u);
    f.rt->advance_epoch();
    f.rt->advance_epoch();  // epoch-4 batch: exactly one block entry
    auto recs = f.rt->advance_records();
    EXPECT_EQ(recs.back().entries_written, 1u) << "four mutations, one queued line set";
}

TEST(Runtime, StrategyBufferedDrainsHalfWhenFull) {
    RuntimeOptions ro = manual_opts();
    ro.strategy = Strategy::BufferedWB;
    ro.buffer_capacity = 8;
    Fixture f(ro);
    auto base = f.be->counters().snapshot().writes_back;
    Op op = f.rt->begin_op();
    for (int i = 0; i < 8; ++i) f.rt->pnew(op, 8, "block!!");
    auto drained = f.be->counters().snapshot().writes_back - base;
    EXPECT_GE(drained, 4u) << "hitting capacity must drain half the queue";
    EXPECT_EQ(f.rt->pending_persists(4), 4u);
}

TEST(Runtime, CloseMakesCompletedOpsDurable) {
    Fixture f(manual_opts());
    std::uint64_t uid;
    {
        Op op = f.rt->begin_op();
        BlockRef b = f.rt->pnew(op, 10, "persist me");
        uid = f.rt->header(b).uid;
    }
    f.rt->close();
    auto img = f.be->persistent_image();
    HeapView v(img.data(), img.size());
    EXPECT_EQ(v.clock(), 6u);  // two advances past the op's epoch
    bool found = false;
    v.for_each_block([&](BlockRef ref, const PayloadHeader& h) {
        if (h.uid != uid) return;
        found = true;
        EXPECT_EQ(h.epoch, 4u);
        EXPECT_EQ(std::memcmp(img.data() + ref.offset + kHeaderLine, "persist me", 10), 0);
    });
    EXPECT_TRUE(found);
    // cutoff = durable clock - 2 reaches the op's epoch: nothing is lost.
    EXPECT_GE(v.clock() - 2, 4u);
}

TEST(Runtime, BackgroundAdvancerTicksAtConfiguredRate) {
    RuntimeOptions ro;
    ro.advancer.mode = AdvanceMode::BackgroundThread;
    ro.advancer.interval = std::chrono::milliseconds(50);
    Fixture f(ro);
    std::this_thread::sleep_for(std::chrono::seconds(1));
    std::uint64_t ticks = f.rt->epoch() - kInitialEpoch;
    EXPECT_GE(ticks, 15u);
    EXPECT_LE(ticks, 25u);
}

TEST(Runtime, BeginRetriesWhenAdvanceInterleaves) {
    RuntimeOptions ro = manual_opts();
    EpochRuntime* rt_probe = nullptr;
    bool fired = false;
    ro.begin_op_hook = [&](std::uint64_t) {
        if (!fired && rt_probe) {
            fired = true;
            rt_probe->advance_epoch();
        }
    };
    Fixture f(ro);
    rt_probe = f.rt.get();
    Op op = f.rt->begin_op();
    EXPECT_TRUE(fired);
    EXPECT_EQ(op.epoch(), 5u) << "the op must land in the post-advance epoch";
    EXPECT_EQ(op.retries(), 1u);
    EXPECT_EQ(f.rt->retries_total(), 1u);
}

TEST(Runtime, PretireThenPreclaimAfterHorizonFreesImmediately) {
    Fixture f(manual_opts());
    BlockRef b;
    std::uint64_t uid;
    {
        Op op = f.rt->begin_op();
        b = f.rt->pnew(op, 8, "victim!!");
        uid = f.rt->header(b).uid;
    }
    f.rt->advance_epoch();  // 5
    f.rt->advance_epoch();  // 6
    {
        Op op = f.rt->begin_op();  // epoch 6; target epoch 4 < 5
        f.rt->pretire(op, b);
    }
    // Removal record exists and is queued with epoch 6's batch.
    EXPECT_EQ(f.rt->pending_persists(6), 1u);
    f.rt->preclaim(b);
    EXPECT_EQ(f.rt->header(b).magic, 0u) << "past-horizon victim is reusable now";
    // The record sits in the victim-epoch queue, drained at the next advance.
    EXPECT_EQ(f.rt->pending_frees(4), 1u);
    f.rt->advance_epoch();  // from 6 drains the epoch-4 slot
    std::size_t dels = 0;
    for (auto& [ref, h] : f.rt->heap().view().live_blocks())
        dels += h.blk_type == static_cast<std::uint8_t>(BlkType::Del) && h.uid == uid;
    EXPECT_EQ(dels, 0u);
}

TEST(Runtime, PretireThenPreclaimRecentDefersBoth) {
    Fixture f(manual_opts());
    BlockRef b;
    {
        Op op = f.rt->begin_op();
        b = f.rt->pnew(op, 8, "victim!!");
    }
    f.rt->advance_epoch();  // 5
    {
        Op op = f.rt->begin_op();  // epoch 5; target epoch 4 == epoch-1
        f.rt->pretire(op, b);
    }
    f.rt->preclaim(b);
    EXPECT_EQ(f.rt->header(b).magic, kHeaderMagic) << "recent victim must wait";
    EXPECT_EQ(f.rt->pending_frees(5), 1u);  // victim
    EXPECT_EQ(f.rt->pending_frees(6), 1u);  // record
}

TEST(Runtime, EpochCasLinearizesUnderContention) {
    Fixture f(manual_opts());
    EpochCasCell cell(0);
    constexpr int kThreads = 4, kIters = 10000;
    std::vector<std::thread> ts;
    for (int t = 0; t < kThreads; ++t)
        ts.emplace_back([&] {
            for (int i = 0; i < kIters; ++i) {
                Op op = f.rt->begin_op();
                for (;;) {
                    std::uint64_t v = cell.load();
                    if (cell.compare_exchange(op, v, v + 1)) break;
                }
            }
        });
    for (auto& t : ts) t.join();
    EXPECT_EQ(cell.load(), std::uint64_t(kThreads) * kIters);
}

TEST(Runtime, EpochCasAbortsStaleOperations) {
    Fixture f(manual_opts());
    EpochCasCell cell(1);
    Op stale = f.rt->begin_op();  // epoch 4
    f.rt->advance_epoch();
    std::thread t([&] {
        Op fresh = f.rt->begin_op();  // epoch 5
        EXPECT_TRUE(cell.compare_exchange(fresh, 1, 2));
    });
    t.join();
    EXPECT_THROW(cell.compare_exchange(stale, 2, 3), EpochAdvancedError);
}

TEST(Runtime, UidsAreUniqueAcrossThreadsAndDurablyReserved) {
    Fixture f(manual_opts());
    std::mutex mu;
    std::vector<std::uint64_t> uids;
    std::vector<std::thread> ts;
    for (int t = 0; t < 4; ++t)
        ts.emplace_back([&] {
            std::vector<std::uint64_t> local;
            for (int i = 0; i < 200; ++i) {
                Op op = f.rt->begin_op();
                BlockRef b = f.rt->pnew(op, 4, "uid!");
                local.push_back(f.rt->header(b).uid);
                f.rt->pdelete(op, b);
            }
            std::lock_guard<std::mutex> g(mu);
            uids.insert(uids.end(), local.begin(), local.end());
        });
    for (auto& t : ts) t.join();
    std::sort(uids.begin(), uids.end());
    EXPECT_TRUE(std::adjacent_find(uids.begin(), uids.end()) == uids.end());
    // The durable reservation always leads every handed-out uid.
    EXPECT_GT(f.rt->heap().uid_counter(), uids.back());
}
