#pragma once

#include <algorithm>
#include <cstring>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "epochstore/backend.hpp"
#include "epochstore/geometry.hpp"

namespace epochstore {

// ---------------------------------------------------------------------------
// Read-only view over heap bytes (live heap or crash image): parses the
// metadata and enumerates live blocks in address order.
// ---------------------------------------------------------------------------
class HeapView {
  public:
    HeapView(const std::uint8_t* bytes, std::size_t n) : bytes_(bytes), n_(n) {
        if (n_ < kBlocksOffset) throw SuperblockError("truncated metadata");
        sb_ = decode_superblock(bytes_);
        if (sb_.total_bytes > n_) throw SuperblockError("file shorter than declared size");
        regions_ = decode_directory(bytes_ + kDirOffset, sb_.class_count);
        for (const auto& r : regions_)
            if (r.region_end() > sb_.total_bytes)
                throw SuperblockError("directory region exceeds heap");
    }

    const Superblock& superblock() const { return sb_; }
    const std::vector<ClassRegion>& regions() const { return regions_; }

    std::uint64_t clock() const { return load_u64(kClockOffset); }
    std::uint64_t uid_counter() const { return load_u64(kUidOffset); }

    std::uint64_t load_u64(std::uint64_t off) const {
        std::uint64_t v;
        std::memcpy(&v, bytes_ + off, 8);
        return v;
    }

    const std::uint8_t* bytes() const { return bytes_; }
    std::size_t size() const { return n_; }

    // Live blocks (valid header magic) in address order.
    template <class F>
    void for_each_block(F&& fn) const {
        for (const auto& r : regions_) {
            for (std::uint32_t i = 0; i < r.block_count; ++i) {
                std::uint64_t off = r.region_offset + std::uint64_t(i) * r.class_size;
                PayloadHeader h = decode_header(bytes_ + off);
                if (h.magic == kHeaderMagic)
                    fn(BlockRef{off, r.class_size}, h);
            }
        }
    }

    std::vector<std::pair<BlockRef, PayloadHeader>> live_blocks() const {
        std::vector<std::pair<BlockRef, PayloadHeader>> out;
        for_each_block([&](BlockRef ref, const PayloadHeader& h) { out.emplace_back(ref, h); });
        return out;
    }

  private:
    const std::uint8_t* bytes_;
    std::size_t n_;
    Superblock sb_;
    std::vector<ClassRegion> regions_;
};

// A self-contained snapshot of heap bytes (typically a crash image).
class HeapImage {
  public:
    explicit HeapImage(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}
    HeapView view() const { return HeapView(bytes_.data(), bytes_.size()); }
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

  private:
    std::vector<std::uint8_t> bytes_;
};

// ---------------------------------------------------------------------------
// Heap: slab-arena allocator over a persistence backend.
//
// File layout (little-endian):
//   line 0   superblock {magic "MTGH", version u32, geometry, clock_offset}
//   line 1   epoch clock u64
//   line 2   uid counter u64
//   line 3-4 slab directory {class_size u32, block_count u32, region_offset u64}*
//   0x140+   one contiguous block region per size class
//
// Every block starts with a 32-byte header padded to one 64-byte line; the
// payload begins at the next line. The header magic is valid iff the block is
// live; free_block scrubs the header (tombstone) and the block rejoins the
// free lists only via recycle_block — callers sequence that against their own
// durability barrier.
// ---------------------------------------------------------------------------
class Heap {
  public:
    static Heap create(const HeapGeometry& g, std::unique_ptr<PersistenceBackend> be) {
        validate_geometry(g);
        if (be->size() < g.total_bytes)
            throw GeometryError("backend smaller than total_bytes");
        auto regions = compute_regions(g);

        Superblock sb;
        sb.total_bytes = g.total_bytes;
        sb.line_bytes = g.line_bytes;
        sb.class_count = static_cast<std::uint32_t>(g.size_classes.size());
        sb.slabs_per_class = g.slabs_per_class;
        sb.clock_offset = kClockOffset;
        for (std::size_t i = 0; i < g.size_classes.size(); ++i)
            sb.class_sizes[i] = g.size_classes[i];

        std::uint8_t line[128];
        encode_superblock(sb, line);
        be->store(kSuperOffset, line, 64);
        std::uint64_t clock = kInitialEpoch;
        be->store(kClockOffset, &clock, 8);
        std::uint64_t uid = 1;
        be->store(kUidOffset, &uid, 8);
        encode_directory(regions, line);
        be->store(kDirOffset, line, 128);
        be->write_back(0, kBlocksOffset);
        be->fence();

        Heap h(std::move(be), sb, std::move(regions));
        // Fresh backends are zero-filled: every block is free, headers scrubbed.
        for (std::size_t c = 0; c < h.regions_.size(); ++c) {
            auto& pool = h.pools_[c];
            pool.free.reserve(h.regions_[c].block_count);
            for (std::uint32_t i = h.regions_[c].block_count; i > 0; --i)
                pool.free.push_back(h.regions_[c].region_offset +
                                    std::uint64_t(i - 1) * h.regions_[c].class_size);
        }
        return h;
    }

    static Heap open(std::unique_ptr<PersistenceBackend> be) {
        HeapView v(be->data(), be->size());
        Heap h(std::move(be), v.superblock(),
               std::vector<ClassRegion>(v.regions()));
        // Blocks with live magic are allocated; everything else is free.
        for (std::size_t c = 0; c < h.regions_.size(); ++c) {
            const auto& r = h.regions_[c];
            auto& pool = h.pools_[c];
            for (std::uint32_t i = r.block_count; i > 0; --i) {
                std::uint64_t off = r.region_offset + std::uint64_t(i - 1) * r.class_size;
                PayloadHeader hd = decode_header(h.be_->data() + off);
                if (hd.magic != kHeaderMagic) pool.free.push_back(off);
            }
        }
        return h;
    }

    Heap(Heap&& o) noexcept
        : be_(std::move(o.be_)), sb_(o.sb_), regions_(std::move(o.regions_)), gen_(o.gen_) {
        for (std::size_t i = 0; i < kMaxSizeClasses; ++i)
            pools_[i].free = std::move(o.pools_[i].free);
        registry_point(gen_, this);
        o.gen_ = 0;
    }
    Heap& operator=(Heap&&) = delete;
    Heap(const Heap&) = delete;

    ~Heap() {
        if (gen_) registry_point(gen_, nullptr);
    }

    // ---- raw access -------------------------------------------------------
    const std::uint8_t* data() const { return be_->data(); }
    std::size_t size() const { return sb_.total_bytes; }
    void store(std::uint64_t off, const void* p, std::size_t n) { be_->store(off, p, n); }
    void store_u64(std::uint64_t off, std::uint64_t v) { be_->store(off, &v, 8); }
    void store_u32(std::uint64_t off, std::uint32_t v) { be_->store(off, &v, 4); }
    void store_u8(std::uint64_t off, std::uint8_t v) { be_->store(off, &v, 1); }
    std::uint64_t load_u64(std::uint64_t off) const {
        std::uint64_t v;
        std::memcpy(&v, be_->data() + off, 8);
        return v;
    }
    void write_back(std::uint64_t off, std::uint64_t len) { be_->write_back(off, len); }
    void fence() { be_->fence(); }

    PersistenceBackend& backend() { return *be_; }
    const PersistenceBackend& backend() const { return *be_; }
    const BackendCounters& counters() const { return be_->counters(); }

    HeapView view() const { return HeapView(be_->data(), be_->size()); }

    std::uint64_t clock() const { return load_u64(kClockOffset); }
    void set_clock(std::uint64_t e) { store_u64(kClockOffset, e); }
    std::uint64_t uid_counter() const { return load_u64(kUidOffset); }
    void set_uid_counter(std::uint64_t v) { store_u64(kUidOffset, v); }

    const std::vector<ClassRegion>& regions() const { return regions_; }

    // ---- headers ----------------------------------------------------------
    PayloadHeader read_header(BlockRef ref) const { return decode_header(be_->data() + ref.offset); }

    // Contract: fields land before the magic does.
    void write_header(BlockRef ref, PayloadHeader h) {
        std::uint8_t buf[32];
        std::uint32_t magic = h.magic;
        h.magic = 0;
        encode_header(h, buf);
        be_->store(ref.offset, buf, 32);
        if (magic) be_->store(ref.offset, &magic, 4);
    }

    std::uint64_t payload_offset(BlockRef ref) const { return ref.offset + kHeaderLine; }
    std::uint32_t block_capacity(BlockRef ref) const { return ref.len - kHeaderLine; }

    // ---- allocation -------------------------------------------------------
    BlockRef alloc_block(std::uint32_t payload_len) {
        std::size_t c = fit_class(payload_len);
        ThreadCache& tc = cache_for(this);
        auto& local = tc.per_class[c];
        if (local.empty()) refill(c, local);
        std::uint64_t off = local.back();
        local.pop_back();
        return BlockRef{off, regions_[c].class_size};
    }

    // Scrub the header (tombstone). The caller owns writing the header line
    // back and deciding when the block may be reused (recycle_block).
    void free_block(BlockRef ref) {
        PayloadHeader h = read_header(ref);
        if (h.magic != kHeaderMagic)
            throw DoubleFreeError("block at offset " + std::to_string(ref.offset) +
                                  " is not live");
        static const std::uint8_t zeros[32] = {};
        be_->store(ref.offset, zeros, 32);
    }

    void recycle_block(BlockRef ref) {
        std::size_t c = class_of(ref);
        ThreadCache& tc = cache_for(this);
        auto& local = tc.per_class[c];
        local.push_back(ref.offset);
        if (local.size() > kCacheFlush) {
            std::lock_guard<std::mutex> g(pools_[c].mu);
            while (local.size() > kCacheRefill) {
                pools_[c].free.push_back(local.back());
                local.pop_back();
            }
        }
    }

    // Rebuild the free lists from scratch: exactly the given refs stay
    // allocated. Used after recovery; invalidates all thread caches.
    void reset_allocation(const std::vector<BlockRef>& live) {
        std::unordered_set<std::uint64_t> keep;
        keep.reserve(live.size() * 2);
        for (const auto& r : live) keep.insert(r.offset);
        rotate_generation();
        for (std::size_t c = 0; c < regions_.size(); ++c) {
            const auto& r = regions_[c];
            std::lock_guard<std::mutex> g(pools_[c].mu);
            pools_[c].free.clear();
            for (std::uint32_t i = r.block_count; i > 0; --i) {
                std::uint64_t off = r.region_offset + std::uint64_t(i - 1) * r.class_size;
                if (!keep.count(off)) pools_[c].free.push_back(off);
            }
        }
    }

    std::size_t free_blocks(std::size_t class_idx) const {
        std::lock_guard<std::mutex> g(pools_[class_idx].mu);
        return pools_[class_idx].free.size();
    }

    std::size_t class_of(BlockRef ref) const {
        for (std::size_t c = 0; c < regions_.size(); ++c) {
            const auto& r = regions_[c];
            if (ref.offset >= r.region_offset && ref.offset < r.region_end()) {
                if ((ref.offset - r.region_offset) % r.class_size != 0)
                    throw Error("misaligned block reference");
                return c;
            }
        }
        throw Error("block reference outside any region");
    }

    std::uint64_t generation() const { return gen_; }

  private:
    Heap(std::unique_ptr<PersistenceBackend> be, Superblock sb, std::vector<ClassRegion> regions)
        : be_(std::move(be)), sb_(sb), regions_(std::move(regions)) {
        gen_ = next_generation();
        registry_point(gen_, this);
    }

    std::size_t fit_class(std::uint32_t payload_len) const {
        std::uint64_t need = std::uint64_t(payload_len) + kHeaderLine;
        for (std::size_t c = 0; c < regions_.size(); ++c)
            if (regions_[c].class_size >= need) return c;
        throw OversizeError(std::to_string(payload_len) + " bytes exceeds the largest class");
    }

    struct Pool {
        mutable std::mutex mu;
        std::vector<std::uint64_t> free;
    };

    static constexpr std::size_t kCacheRefill = 32;
    static constexpr std::size_t kCacheFlush = 64;

    // Per-thread sub-arena: a small cache of free blocks per class, keyed by
    // heap generation. Keeps the hot path off the pool mutexes; the pools act
    // as the global rebalancing tier.
    struct ThreadCache {
        std::uint64_t gen = 0;
        std::vector<std::uint64_t> per_class[kMaxSizeClasses];
    };

    static std::uint64_t next_generation() {
        static std::atomic<std::uint64_t> g{1};
        return g.fetch_add(1);
    }

    static void registry_point(std::uint64_t gen, Heap* h) {
        std::lock_guard<std::mutex> g(registry_mutex());
        auto& m = registry_map();
        if (h)
            m[gen] = h;
        else
            m.erase(gen);
    }

    static Heap* registry_find(std::uint64_t gen) {
        std::lock_guard<std::mutex> g(registry_mutex());
        auto& m = registry_map();
        auto it = m.find(gen);
        return it == m.end() ? nullptr : it->second;
    }

    static std::mutex& registry_mutex() {
        static std::mutex m;
        return m;
    }
    static std::unordered_map<std::uint64_t, Heap*>& registry_map() {
        static std::unordered_map<std::uint64_t, Heap*> m;
        return m;
    }

    static ThreadCache& cache_for(Heap* self) {
        thread_local ThreadCache tc;
        if (tc.gen != self->gen_) {
            // Hand cached blocks back to their own heap if it still exists.
            if (tc.gen != 0) {
                Heap* prev = registry_find(tc.gen);
                for (std::size_t c = 0; c < kMaxSizeClasses; ++c) {
                    if (prev && !tc.per_class[c].empty()) {
                        std::lock_guard<std::mutex> g(prev->pools_[c].mu);
                        for (std::uint64_t off : tc.per_class[c])
                            prev->pools_[c].free.push_back(off);
                    }
                    tc.per_class[c].clear();
                }
            }
            tc.gen = self->gen_;
        }
        return tc;
    }

    void rotate_generation() {
        registry_point(gen_, nullptr);
        gen_ = next_generation();
        registry_point(gen_, this);
    }

    void refill(std::size_t c, std::vector<std::uint64_t>& local) {
        std::lock_guard<std::mutex> g(pools_[c].mu);
        auto& pool = pools_[c].free;
        if (pool.empty())
            throw OutOfMemoryError("size class " + std::to_string(regions_[c].class_size));
        std::size_t n = std::min(kCacheRefill, pool.size());
        for (std::size_t i = 0; i < n; ++i) {
            local.push_back(pool.back());
            pool.pop_back();
        }
    }

    std::unique_ptr<PersistenceBackend> be_;
    Superblock sb_;
    std::vector<ClassRegion> regions_;
    Pool pools_[kMaxSizeClasses];
    std::uint64_t gen_ = 0;
};

}  // namespace epochstore
