// Persistence heap + simulator backend tests. The simulator's crash sampling
// and line-state transitions are the foundation everything else trusts, so
// they get independent oracles here (brute-force image predicates, exhaustive
// enumeration, randomized allocator soundness).
#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "epochstore/heap.hpp"
#include "epochstore/sim_backend.hpp"
#include "epochstore/file_backend.hpp"

using namespace epochstore;

namespace {

Heap make_heap(std::uint64_t total = 1u << 20,
               std::vector<std::uint32_t> classes = {64, 256, 1088, 4160},
               SimBackend::Options opt = {}) {
    HeapGeometry g;
    g.total_bytes = total;
    g.size_classes = std::move(classes);
    return Heap::create(g, std::make_unique<SimBackend>(std::size_t(total), opt));
}

SimBackend& sim(Heap& h) { return static_cast<SimBackend&>(h.backend()); }

}  // namespace

TEST(Format, HeaderIsOneLinePadded) {
    static_assert(sizeof(PayloadHeader) == 32);
    static_assert(kHeaderLine == 64);
    PayloadHeader h;
    h.magic = kHeaderMagic;
    h.blk_type = static_cast<std::uint8_t>(BlkType::Update);
    h.epoch = 0x1122334455667788ull;
    h.uid = 42;
    h.payload_len = 7;
    std::uint8_t buf[32];
    encode_header(h, buf);
    PayloadHeader r = decode_header(buf);
    EXPECT_EQ(r.magic, kHeaderMagic);
    EXPECT_EQ(r.blk_type, static_cast<std::uint8_t>(BlkType::Update));
    EXPECT_EQ(r.epoch, 0x1122334455667788ull);
    EXPECT_EQ(r.uid, 42u);
    EXPECT_EQ(r.payload_len, 7u);
}

TEST(Geometry, RejectsBadShapes) {
    HeapGeometry g;
    g.size_classes = {100};
    EXPECT_THROW(validate_geometry(g), GeometryError);
    g.size_classes = {256, 64};
    EXPECT_THROW(validate_geometry(g), GeometryError);
    g.size_classes = {};
    EXPECT_THROW(validate_geometry(g), GeometryError);
    g.size_classes = {64};
    g.slabs_per_class = 0;
    EXPECT_THROW(validate_geometry(g), GeometryError);
    g.slabs_per_class = 8;
    g.total_bytes = 128;
    EXPECT_THROW(validate_geometry(g), GeometryError);
    g = HeapGeometry{};
    EXPECT_NO_THROW(validate_geometry(g));
}

TEST(Geometry, RegionsAreDisjointAndSized) {
    HeapGeometry g;
    g.total_bytes = 1u << 20;
    g.size_classes = {64, 256, 1024};
    auto rs = compute_regions(g);
    ASSERT_EQ(rs.size(), 3u);
    EXPECT_EQ(rs[0].region_offset, kBlocksOffset);
    for (std::size_t i = 0; i < rs.size(); ++i) {
        EXPECT_EQ(rs[i].block_count, rs[0].block_count);
        EXPECT_EQ(rs[i].block_count % g.slabs_per_class, 0u);
        if (i) {
            EXPECT_EQ(rs[i].region_offset, rs[i - 1].region_end());
        }
    }
    EXPECT_LE(rs.back().region_end(), g.total_bytes);
}

TEST(HeapCreate, FreshHeapHasInitialClockAndNoBlocks) {
    Heap h = make_heap();
    EXPECT_EQ(h.clock(), kInitialEpoch);
    EXPECT_EQ(h.uid_counter(), 1u);
    EXPECT_TRUE(h.view().live_blocks().empty());
}

TEST(HeapOpen, RoundTripsMetadata) {
    Heap h = make_heap();
    h.set_clock(9);
    h.write_back(kClockOffset, 8);
    h.fence();
    // Reopen from the committed image.
    HeapImage img(sim(h).crash_image(0));
    Heap h2 = Heap::open(std::make_unique<SimBackend>(img.bytes()));
    EXPECT_EQ(h2.clock(), 9u);
    EXPECT_TRUE(h2.view().live_blocks().empty());
    EXPECT_EQ(h2.regions().size(), h.regions().size());
}

TEST(HeapOpen, RejectsTruncatedAndCorrupt) {
    Heap h = make_heap();
    std::vector<std::uint8_t> bytes = sim(h).crash_image(0);
    std::vector<std::uint8_t> shorter(bytes.begin(), bytes.begin() + 128);
    EXPECT_THROW(Heap::open(std::make_unique<SimBackend>(shorter)), SuperblockError);
    bytes[0] ^= 0xFF;
    EXPECT_THROW(Heap::open(std::make_unique<SimBackend>(bytes)), SuperblockError);
}

TEST(Alloc, PicksSmallestFittingClass) {
    HeapGeometry g;
    g.total_bytes = 1u << 20;
    g.size_classes = {64, 256, 1024};
    Heap h = Heap::create(g, std::make_unique<SimBackend>(std::size_t(g.total_bytes)));
    BlockRef r = h.alloc_block(100);  // 100 + 64 > 64, fits 256
    EXPECT_EQ(r.len, 256u);
    EXPECT_EQ(h.block_capacity(r), 192u);
    BlockRef r0 = h.alloc_block(0);
    EXPECT_EQ(r0.len, 64u);
    BlockRef r2 = h.alloc_block(192);
    EXPECT_EQ(r2.len, 256u);
    BlockRef r3 = h.alloc_block(193);
    EXPECT_EQ(r3.len, 1024u);
    EXPECT_THROW(h.alloc_block(1024 - 64 + 1), OversizeError);
}

TEST(Alloc, ReuseKeepsFootprintBounded) {
    Heap h = make_heap(4u << 20, {64, 256});
    const int n = 10000;
    std::vector<BlockRef> refs;
    std::set<std::uint64_t> first_round;
    for (int i = 0; i < n; ++i) {
        BlockRef r = h.alloc_block(100);
        first_round.insert(r.offset);
        refs.push_back(r);
    }
    for (auto& r : refs) {
        PayloadHeader hd;
        hd.magic = kHeaderMagic;
        hd.blk_type = static_cast<std::uint8_t>(BlkType::Alloc);
        h.write_header(r, hd);
        h.free_block(r);
        h.recycle_block(r);
    }
    refs.clear();
    std::set<std::uint64_t> uniq;
    std::size_t fresh = 0;
    for (int i = 0; i < n; ++i) {
        BlockRef r = h.alloc_block(100);
        if (!first_round.count(r.offset)) ++fresh;
        refs.push_back(r);
        uniq.insert(r.offset);
    }
    EXPECT_EQ(uniq.size(), refs.size());
    // Per-thread caches may hold back a bounded number of recycled blocks;
    // beyond that slop, reuse must stay inside the first round's footprint.
    EXPECT_LE(fresh, 128u) << "reuse escaped the first footprint";
}

TEST(Free, ScrubsWithoutFlushingAndDetectsDoubleFree) {
    Heap h = make_heap();
    BlockRef r = h.alloc_block(64);
    PayloadHeader hd;
    hd.magic = kHeaderMagic;
    hd.blk_type = static_cast<std::uint8_t>(BlkType::Alloc);
    hd.epoch = 5;
    hd.uid = 7;
    hd.payload_len = 64;
    h.write_header(r, hd);
    auto before = h.counters().snapshot();
    h.free_block(r);
    auto after = h.counters().snapshot();
    EXPECT_EQ(h.read_header(r).magic, 0u);
    EXPECT_EQ(before.writes_back, after.writes_back);
    EXPECT_EQ(before.lines_flushed, after.lines_flushed);
    EXPECT_THROW(h.free_block(r), DoubleFreeError);
}

TEST(Backend, StoreWriteBackFenceLifecycle) {
    SimBackend be(4096);
    std::uint8_t v[8] = {1, 2, 3, 4, 5, 6, 7, 8};
    be.store(256, v, 8);
    EXPECT_EQ(be.line_state(4), SimBackend::LineState::Dirty);
    EXPECT_EQ(be.persistent_image()[256], 0);
    be.write_back(256, 8);
    EXPECT_EQ(be.line_state(4), SimBackend::LineState::Pending);
    EXPECT_EQ(be.persistent_image()[256], 0) << "write_back alone must not commit";
    be.fence();
    EXPECT_EQ(be.line_state(4), SimBackend::LineState::Clean);
    EXPECT_EQ(be.persistent_image()[256], 1);

    auto s = be.counters().snapshot();
    EXPECT_EQ(s.writes_back, 1u);
    EXPECT_EQ(s.fences, 1u);
    EXPECT_EQ(s.lines_flushed, 1u);

    // write_back of a clean line: counters move, state does not.
    be.write_back(256, 8);
    EXPECT_EQ(be.line_state(4), SimBackend::LineState::Clean);
    s = be.counters().snapshot();
    EXPECT_EQ(s.writes_back, 2u);
    EXPECT_EQ(s.lines_flushed, 2u);

    // fence with nothing pending still counts.
    be.fence();
    EXPECT_EQ(be.counters().snapshot().fences, 2u);
}

TEST(Backend, TwoStoresOneLineOneWriteBack) {
    SimBackend be(4096);
    std::uint32_t a = 0xAAAAAAAA, b = 0xBBBBBBBB;
    be.store(128, &a, 4);
    be.store(160, &b, 4);  // same 64-byte line
    be.write_back(128, 64);
    be.fence();
    std::uint32_t ra, rb;
    std::memcpy(&ra, be.persistent_image().data() + 128, 4);
    std::memcpy(&rb, be.persistent_image().data() + 160, 4);
    EXPECT_EQ(ra, a);
    EXPECT_EQ(rb, b);
}

TEST(CrashImage, NoUnstableLinesMeansExactPersistentImage) {
    SimBackend be(4096);
    std::uint64_t x = 99;
    be.store(0, &x, 8);
    be.write_back(0, 8);
    be.fence();
    for (std::uint64_t seed = 0; seed < 4; ++seed)
        EXPECT_EQ(be.crash_image(seed), be.persistent_image());
}

TEST(CrashImage, OverlaysOnlyUnstableLines) {
    SimBackend be(4096);
    std::uint64_t x = 1, y = 2, z = 3;
    be.store(0, &x, 8);
    be.write_back(0, 8);
    be.fence();            // line 0 clean, committed
    be.store(64, &y, 8);   // line 1 dirty
    be.store(128, &z, 8);  // line 2 dirty
    be.write_back(128, 8); // line 2 pending
    bool saw_y = false, missed_y = false, saw_z = false, missed_z = false;
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        auto img = be.crash_image(seed);
        std::uint64_t ry, rz, rx;
        std::memcpy(&rx, img.data() + 0, 8);
        std::memcpy(&ry, img.data() + 64, 8);
        std::memcpy(&rz, img.data() + 128, 8);
        EXPECT_EQ(rx, 1u) << "clean lines always match the persistent image";
        EXPECT_TRUE(ry == 0 || ry == 2u);
        EXPECT_TRUE(rz == 0 || rz == 3u);
        (ry == 2u ? saw_y : missed_y) = true;
        (rz == 3u ? saw_z : missed_z) = true;
    }
    EXPECT_TRUE(saw_y && missed_y && saw_z && missed_z)
        << "sampling should explore both inclusion and exclusion";
}

TEST(CrashImage, ExhaustiveEnumerationCoversAllSubsets) {
    SimBackend be(4096);
    std::uint64_t y = 2, z = 3;
    be.store(64, &y, 8);
    be.store(128, &z, 8);
    auto images = be.enumerate_crash_images();
    ASSERT_EQ(images.size(), 4u);
    std::set<std::pair<std::uint64_t, std::uint64_t>> combos;
    for (auto& img : images) {
        std::uint64_t ry, rz;
        std::memcpy(&ry, img.data() + 64, 8);
        std::memcpy(&rz, img.data() + 128, 8);
        combos.insert({ry, rz});
    }
    EXPECT_EQ(combos.size(), 4u);
}

TEST(CrashImage, LineIsAtomic) {
    SimBackend be(4096);
    std::vector<std::uint8_t> pa(64, 0xAA), pb(64, 0xBB);
    be.store(192, pa.data(), 64);
    be.write_back(192, 64);
    be.fence();
    be.store(192, pb.data(), 64);  // dirty over committed
    for (auto& img : be.enumerate_crash_images()) {
        bool all_a = true, all_b = true;
        for (int i = 0; i < 64; ++i) {
            all_a &= img[192 + i] == 0xAA;
            all_b &= img[192 + i] == 0xBB;
        }
        EXPECT_TRUE(all_a || all_b) << "a line must never tear";
    }
}

// For any crash image: if a line written back strictly after fence F appears,
// every line whose write_back preceded F also appears (those lines committed
// at F and are part of the persistent base).
TEST(CrashImage, FenceOrderingProperty) {
    std::mt19937_64 rng(7);
    for (int round = 0; round < 50; ++round) {
        SimBackend be(16384);
        std::vector<std::uint64_t> pre_fence, post_fence;
        for (int i = 0; i < 6; ++i) {
            std::uint64_t line = rng() % 128;  // lines [0,128): written back before the fence
            std::uint64_t marker = 0x1000 + line;
            be.store(line * 64, &marker, 8);
            be.write_back(line * 64, 8);
            pre_fence.push_back(line);
        }
        be.fence();
        for (int i = 0; i < 6; ++i) {
            std::uint64_t line = 128 + rng() % 64;
            std::uint64_t marker = 0x1000 + line;
            be.store(line * 64, &marker, 8);
            be.write_back(line * 64, 8);
            post_fence.push_back(line);
        }
        for (std::uint64_t seed = 0; seed < 8; ++seed) {
            auto img = be.crash_image(seed);
            auto present = [&](std::uint64_t line) {
                std::uint64_t v;
                std::memcpy(&v, img.data() + line * 64, 8);
                return v == 0x1000 + line;
            };
            bool any_post = false;
            for (auto l : post_fence) any_post |= present(l);
            if (any_post) {
                for (auto l : pre_fence)
                    EXPECT_TRUE(present(l)) << "pre-fence line missing while post-fence visible";
            }
        }
    }
}

// The clock-write discipline the runtime relies on: payload lines written
// back and fenced before the clock store can never be absent from an image
// that contains the new clock value.
TEST(CrashImage, ClockNeverLeadsFencedPayload) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        SimBackend be(4096);
        std::uint64_t payload = 0xDEADBEEF;
        be.store(512, &payload, 8);
        be.write_back(512, 8);
        be.fence();
        std::uint64_t clock = 11;
        be.store(kClockOffset, &clock, 8);
        be.write_back(kClockOffset, 8);
        auto img = be.crash_image(seed);
        std::uint64_t c, p;
        std::memcpy(&c, img.data() + kClockOffset, 8);
        std::memcpy(&p, img.data() + 512, 8);
        if (c == 11) {
            EXPECT_EQ(p, 0xDEADBEEFu);
        }
        EXPECT_EQ(p, 0xDEADBEEFu) << "fenced payload must be unconditionally durable";
    }
}

TEST(Iterate, AddressOrderAndTombstoneSkipping) {
    Heap h = make_heap();
    auto mk = [&](std::uint64_t uid, std::uint64_t epoch) {
        BlockRef r = h.alloc_block(32);
        PayloadHeader hd;
        hd.magic = kHeaderMagic;
        hd.blk_type = static_cast<std::uint8_t>(BlkType::Alloc);
        hd.epoch = epoch;
        hd.uid = uid;
        hd.payload_len = 32;
        h.write_header(r, hd);
        return r;
    };
    auto a = mk(1, 4), b = mk(2, 5), c = mk(3, 6), d = mk(4, 7);
    (void)a;
    (void)c;
    h.free_block(d);
    auto blocks = h.view().live_blocks();
    ASSERT_EQ(blocks.size(), 3u);
    EXPECT_TRUE(std::is_sorted(blocks.begin(), blocks.end(),
                               [](auto& x, auto& y) { return x.first.offset < y.first.offset; }));
    bool saw_b = false;
    for (auto& [ref, hd] : blocks) saw_b |= ref == b && hd.uid == 2;
    EXPECT_TRUE(saw_b);
}

TEST(Alloc, RandomizedSoundness) {
    Heap h = make_heap(2u << 20, {64, 256, 1088});
    std::mt19937_64 rng(42);
    std::map<std::uint64_t, std::uint32_t> live;  // offset -> len
    for (int step = 0; step < 20000; ++step) {
        if (live.empty() || rng() % 2 == 0) {
            std::uint32_t len = static_cast<std::uint32_t>(rng() % 900);
            BlockRef r = h.alloc_block(len);
            // no overlap with any live block
            auto it = live.upper_bound(r.offset);
            if (it != live.end()) {
                ASSERT_LE(r.offset + r.len, it->first);
            }
            if (it != live.begin()) {
                --it;
                ASSERT_GE(r.offset, it->first + it->second);
            }
            PayloadHeader hd;
            hd.magic = kHeaderMagic;
            hd.blk_type = static_cast<std::uint8_t>(BlkType::Alloc);
            hd.epoch = kInitialEpoch;
            hd.uid = step + 1;
            hd.payload_len = len;
            h.write_header(r, hd);
            live[r.offset] = r.len;
        } else {
            auto it = live.begin();
            std::advance(it, rng() % live.size());
            BlockRef r{it->first, it->second};
            h.free_block(r);
            h.recycle_block(r);
            live.erase(it);
        }
    }
    EXPECT_EQ(h.view().live_blocks().size(), live.size());
}

TEST(ResetAllocation, KeepsOnlyGivenRefsAllocated) {
    Heap h = make_heap();
    std::vector<BlockRef> keep;
    for (int i = 0; i < 10; ++i) {
        BlockRef r = h.alloc_block(10);
        PayloadHeader hd;
        hd.magic = kHeaderMagic;
        hd.blk_type = static_cast<std::uint8_t>(BlkType::Alloc);
        hd.epoch = kInitialEpoch;
        hd.uid = i + 1;
        hd.payload_len = 10;
        h.write_header(r, hd);
        if (i % 2 == 0) keep.push_back(r);
    }
    h.reset_allocation(keep);
    std::set<std::uint64_t> kept;
    for (auto& r : keep) kept.insert(r.offset);
    // Allocating everything back must never return a kept offset.
    for (;;) {
        BlockRef r{};
        try {
            r = h.alloc_block(10);
        } catch (const OutOfMemoryError&) {
            break;
        }
        EXPECT_FALSE(kept.count(r.offset));
    }
}

TEST(FileBackend, CreateWriteReopen) {
    std::string path = ::testing::TempDir() + "/epochstore_heap_test.bin";
    HeapGeometry g;
    g.total_bytes = 1u << 20;
    {
        Heap h = Heap::create(g, FileBackend::create(path, g.total_bytes));
        BlockRef r = h.alloc_block(64);
        PayloadHeader hd;
        hd.magic = kHeaderMagic;
        hd.blk_type = static_cast<std::uint8_t>(BlkType::Alloc);
        hd.epoch = kInitialEpoch;
        hd.uid = 77;
        hd.payload_len = 64;
        h.write_header(r, hd);
        const char msg[] = "hello durable world";
        h.store(h.payload_offset(r), msg, sizeof msg);
        h.write_back(r.offset, r.len);
        h.set_clock(6);
        h.write_back(kClockOffset, 8);
        h.fence();
    }
    Heap h2 = Heap::open(FileBackend::open(path));
    EXPECT_EQ(h2.clock(), 6u);
    auto blocks = h2.view().live_blocks();
    ASSERT_EQ(blocks.size(), 1u);
    EXPECT_EQ(blocks[0].second.uid, 77u);
    EXPECT_STREQ(reinterpret_cast<const char*>(h2.data() + h2.payload_offset(blocks[0].first)),
                 "hello durable world");
    ::unlink(path.c_str());
}

TEST(FileBackend, RefusesCrashImages) {
    std::string path = ::testing::TempDir() + "/epochstore_nocrash.bin";
    auto be = FileBackend::create(path, 1u << 16);
    EXPECT_FALSE(be->supports_crash_images());
    EXPECT_THROW(be->crash_image(1), UnsupportedError);
    ::unlink(path.c_str());
}
