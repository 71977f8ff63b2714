#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <vector>

#include "epochstore/errors.hpp"

namespace epochstore {

// ---------------------------------------------------------------------------
// On-media format constants. The format is fixed and little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kLineBytes = 64;
inline constexpr char kSuperMagic[4] = {'M', 'T', 'G', 'H'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kHeaderMagic = 0x4D544745u;
inline constexpr std::uint64_t kInitialEpoch = 4;
inline constexpr std::uint32_t kMaxSizeClasses = 6;

// Fixed metadata layout, all line-aligned:
//   line 0: superblock
//   line 1: epoch clock (u64)
//   line 2: uid counter (u64, next unreserved uid)
//   lines 3-4: slab directory (16 B per class, up to 6 classes)
//   line 5 onward: block regions, one contiguous region per size class
inline constexpr std::uint64_t kSuperOffset = 0;
inline constexpr std::uint64_t kClockOffset = 64;
inline constexpr std::uint64_t kUidOffset = 128;
inline constexpr std::uint64_t kDirOffset = 192;
inline constexpr std::uint64_t kBlocksOffset = 320;

static_assert(std::endian::native == std::endian::little,
              "on-media format is little-endian; big-endian hosts need byte swapping");

// 32 bytes of header at the start of every block, padded to one full line.
// magic is valid iff the block holds a live payload; freeing scrubs it.
struct PayloadHeader {
    std::uint32_t magic = 0;
    std::uint8_t blk_type = 0;
    std::uint8_t size_class = 0;
    std::uint16_t pad0 = 0;
    std::uint64_t epoch = 0;
    std::uint64_t uid = 0;
    std::uint32_t payload_len = 0;
    std::uint32_t pad1 = 0;
};
static_assert(sizeof(PayloadHeader) == 32);
inline constexpr std::uint32_t kHeaderLine = kLineBytes;  // payload starts one line in

enum class BlkType : std::uint8_t { Alloc = 1, Update = 2, Del = 3 };

struct BlockRef {
    std::uint64_t offset = 0;  // byte offset of the header line in the heap
    std::uint32_t len = 0;     // full block extent (the size class), bytes

    bool null() const { return offset == 0; }
    friend bool operator==(const BlockRef&, const BlockRef&) = default;
};

// ---------------------------------------------------------------------------
// Geometry: the creation-time shape of a heap.
// ---------------------------------------------------------------------------

struct HeapGeometry {
    std::uint64_t total_bytes = 1u << 20;
    std::uint32_t line_bytes = kLineBytes;
    std::vector<std::uint32_t> size_classes = {64, 256, 1088, 4160};
    std::uint32_t slabs_per_class = 8;
};

struct ClassRegion {
    std::uint32_t class_size = 0;
    std::uint32_t block_count = 0;
    std::uint64_t region_offset = 0;

    std::uint64_t region_end() const {
        return region_offset + std::uint64_t(class_size) * block_count;
    }
};

inline void validate_geometry(const HeapGeometry& g) {
    if (g.line_bytes != kLineBytes)
        throw GeometryError("line_bytes must be 64");
    if (g.size_classes.empty() || g.size_classes.size() > kMaxSizeClasses)
        throw GeometryError("need between 1 and 6 size classes");
    std::uint32_t prev = 0;
    for (std::uint32_t c : g.size_classes) {
        if (c % kLineBytes != 0)
            throw GeometryError("size class not a multiple of the line size");
        if (c <= prev)
            throw GeometryError("size classes must be strictly ascending");
        prev = c;
    }
    if (g.slabs_per_class == 0)
        throw GeometryError("slabs_per_class must be positive");
    if (g.total_bytes <= kBlocksOffset)
        throw GeometryError("total_bytes smaller than fixed metadata");
}

// Splits the usable space into one region per class with equal block counts,
// rounded down to a whole number of slabs.
inline std::vector<ClassRegion> compute_regions(const HeapGeometry& g) {
    validate_geometry(g);
    std::uint64_t usable = g.total_bytes - kBlocksOffset;
    std::uint64_t sum = 0;
    for (std::uint32_t c : g.size_classes) sum += c;
    std::uint64_t per_class = usable / sum;
    std::uint64_t per_slab = per_class / g.slabs_per_class;
    if (per_slab == 0)
        throw GeometryError("total_bytes too small for one block per slab in every class");
    std::uint64_t blocks = per_slab * g.slabs_per_class;

    std::vector<ClassRegion> out;
    std::uint64_t off = kBlocksOffset;
    for (std::uint32_t c : g.size_classes) {
        ClassRegion r;
        r.class_size = c;
        r.block_count = static_cast<std::uint32_t>(blocks);
        r.region_offset = off;
        off = r.region_end();
        out.push_back(r);
    }
    if (off > g.total_bytes)
        throw GeometryError("computed regions exceed total_bytes");
    return out;
}

// ---------------------------------------------------------------------------
// Superblock + directory codecs (line 0 and lines 3-4).
// ---------------------------------------------------------------------------

struct Superblock {
    std::uint64_t total_bytes = 0;
    std::uint32_t line_bytes = 0;
    std::uint32_t class_count = 0;
    std::uint32_t slabs_per_class = 0;
    std::uint64_t clock_offset = 0;
    std::uint32_t class_sizes[kMaxSizeClasses] = {};
};

inline void encode_superblock(const Superblock& sb, std::uint8_t out[64]) {
    std::memset(out, 0, 64);
    std::memcpy(out + 0, kSuperMagic, 4);
    std::uint32_t v = kFormatVersion;
    std::memcpy(out + 4, &v, 4);
    std::memcpy(out + 8, &sb.total_bytes, 8);
    std::memcpy(out + 16, &sb.line_bytes, 4);
    std::memcpy(out + 20, &sb.class_count, 4);
    std::memcpy(out + 24, &sb.slabs_per_class, 4);
    std::memcpy(out + 32, &sb.clock_offset, 8);
    std::memcpy(out + 40, sb.class_sizes, sizeof(sb.class_sizes));
}

inline Superblock decode_superblock(const std::uint8_t in[64]) {
    if (std::memcmp(in, kSuperMagic, 4) != 0)
        throw SuperblockError("magic mismatch");
    std::uint32_t v = 0;
    std::memcpy(&v, in + 4, 4);
    if (v != kFormatVersion)
        throw SuperblockError("unknown format version");
    Superblock sb;
    std::memcpy(&sb.total_bytes, in + 8, 8);
    std::memcpy(&sb.line_bytes, in + 16, 4);
    std::memcpy(&sb.class_count, in + 20, 4);
    std::memcpy(&sb.slabs_per_class, in + 24, 4);
    std::memcpy(&sb.clock_offset, in + 32, 8);
    std::memcpy(sb.class_sizes, in + 40, sizeof(sb.class_sizes));
    if (sb.line_bytes != kLineBytes || sb.class_count == 0 || sb.class_count > kMaxSizeClasses)
        throw SuperblockError("implausible geometry fields");
    if (sb.clock_offset != kClockOffset)
        throw SuperblockError("unexpected clock location");
    return sb;
}

inline void encode_directory(const std::vector<ClassRegion>& regions, std::uint8_t out[128]) {
    std::memset(out, 0, 128);
    for (std::size_t i = 0; i < regions.size(); ++i) {
        std::uint8_t* p = out + i * 16;
        std::memcpy(p + 0, &regions[i].class_size, 4);
        std::memcpy(p + 4, &regions[i].block_count, 4);
        std::memcpy(p + 8, &regions[i].region_offset, 8);
    }
}

inline std::vector<ClassRegion> decode_directory(const std::uint8_t in[128],
                                                 std::uint32_t class_count) {
    std::vector<ClassRegion> out;
    for (std::uint32_t i = 0; i < class_count; ++i) {
        const std::uint8_t* p = in + i * 16;
        ClassRegion r;
        std::memcpy(&r.class_size, p + 0, 4);
        std::memcpy(&r.block_count, p + 4, 4);
        std::memcpy(&r.region_offset, p + 8, 8);
        out.push_back(r);
    }
    return out;
}

inline void encode_header(const PayloadHeader& h, std::uint8_t out[32]) {
    std::memcpy(out, &h, 32);
}

inline PayloadHeader decode_header(const std::uint8_t* in) {
    PayloadHeader h;
    std::memcpy(&h, in, 32);
    return h;
}

}  // namespace epochstore
