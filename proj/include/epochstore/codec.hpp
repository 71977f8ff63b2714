#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "epochstore/errors.hpp"

namespace epochstore {

// The example structures, as selected by harness and benchmark configs.
enum class StructureKind { Queue, Map, Graph };

inline const char* structure_name(StructureKind k) {
    switch (k) {
        case StructureKind::Queue: return "queue";
        case StructureKind::Map: return "map";
        case StructureKind::Graph: return "graph";
    }
    return "unknown";
}

// Every structure payload starts with a 32-bit kind tag so recovery can
// dispatch blocks without out-of-band context.
enum class PayloadKind : std::uint32_t { Queue = 1, Map = 2, Vertex = 3, Edge = 4 };

inline PayloadKind payload_kind(const std::uint8_t* p, std::uint32_t len) {
    if (len < 4) throw CorruptImageError("payload too short for a kind tag");
    std::uint32_t k;
    std::memcpy(&k, p, 4);
    if (k < 1 || k > 4) throw CorruptImageError("unknown payload kind");
    return static_cast<PayloadKind>(k);
}

// ---- queue node: [kind u32][pad u32][index u64][value bytes] --------------

struct QueueNodePayload {
    std::uint64_t index;
    std::string value;
};

inline std::vector<std::uint8_t> encode_queue_node(std::uint64_t index,
                                                   std::string_view value) {
    std::vector<std::uint8_t> b(16 + value.size());
    std::uint32_t k = static_cast<std::uint32_t>(PayloadKind::Queue);
    std::memcpy(b.data(), &k, 4);
    std::memcpy(b.data() + 8, &index, 8);
    if (!value.empty()) std::memcpy(b.data() + 16, value.data(), value.size());
    return b;
}

inline QueueNodePayload decode_queue_node(const std::uint8_t* p, std::uint32_t len) {
    if (payload_kind(p, len) != PayloadKind::Queue || len < 16)
        throw CorruptImageError("malformed queue node payload");
    QueueNodePayload out;
    std::memcpy(&out.index, p + 8, 8);
    out.value.assign(reinterpret_cast<const char*>(p) + 16, len - 16);
    return out;
}

// ---- map entry: [kind u32][key_len u32][val_len u32][pad u32]
//                 [key, 32-byte region][value bytes] ------------------------

inline constexpr std::uint32_t kMapKeyCap = 32;
inline constexpr std::uint32_t kMapValueOffset = 48;

struct MapEntryPayload {
    std::string key;
    std::string value;
};

inline std::vector<std::uint8_t> encode_map_entry(std::string_view key,
                                                  std::string_view value) {
    if (key.size() > kMapKeyCap) throw StateError("map key exceeds 32 bytes");
    std::vector<std::uint8_t> b(kMapValueOffset + value.size());
    std::uint32_t k = static_cast<std::uint32_t>(PayloadKind::Map);
    std::uint32_t kl = static_cast<std::uint32_t>(key.size());
    std::uint32_t vl = static_cast<std::uint32_t>(value.size());
    std::memcpy(b.data(), &k, 4);
    std::memcpy(b.data() + 4, &kl, 4);
    std::memcpy(b.data() + 8, &vl, 4);
    if (!key.empty()) std::memcpy(b.data() + 16, key.data(), key.size());
    if (!value.empty()) std::memcpy(b.data() + kMapValueOffset, value.data(), value.size());
    return b;
}

inline MapEntryPayload decode_map_entry(const std::uint8_t* p, std::uint32_t len) {
    if (payload_kind(p, len) != PayloadKind::Map || len < kMapValueOffset)
        throw CorruptImageError("malformed map entry payload");
    std::uint32_t kl, vl;
    std::memcpy(&kl, p + 4, 4);
    std::memcpy(&vl, p + 8, 4);
    if (kl > kMapKeyCap || kMapValueOffset + vl > len)
        throw CorruptImageError("map entry lengths out of range");
    MapEntryPayload out;
    out.key.assign(reinterpret_cast<const char*>(p) + 16, kl);
    out.value.assign(reinterpret_cast<const char*>(p) + kMapValueOffset, vl);
    return out;
}

// Key-only view into an encoded map entry, validated like decode_map_entry
// but without copying the value; rebuilds placing entries by key use this to
// avoid one value-sized allocation per surviving block.
inline std::string_view map_entry_key(const std::uint8_t* p, std::uint32_t len) {
    if (payload_kind(p, len) != PayloadKind::Map || len < kMapValueOffset)
        throw CorruptImageError("malformed map entry payload");
    std::uint32_t kl, vl;
    std::memcpy(&kl, p + 4, 4);
    std::memcpy(&vl, p + 8, 4);
    if (kl > kMapKeyCap || kMapValueOffset + vl > len)
        throw CorruptImageError("map entry lengths out of range");
    return {reinterpret_cast<const char*>(p) + 16, kl};
}

// ---- graph vertex: [kind u32][attr_len u32][id u64][attr bytes] -----------

struct VertexPayload {
    std::uint64_t id;
    std::string attr;
};

inline std::vector<std::uint8_t> encode_vertex(std::uint64_t id, std::string_view attr) {
    std::vector<std::uint8_t> b(16 + attr.size());
    std::uint32_t k = static_cast<std::uint32_t>(PayloadKind::Vertex);
    std::uint32_t al = static_cast<std::uint32_t>(attr.size());
    std::memcpy(b.data(), &k, 4);
    std::memcpy(b.data() + 4, &al, 4);
    std::memcpy(b.data() + 8, &id, 8);
    if (!attr.empty()) std::memcpy(b.data() + 16, attr.data(), attr.size());
    return b;
}

inline VertexPayload decode_vertex(const std::uint8_t* p, std::uint32_t len) {
    if (payload_kind(p, len) != PayloadKind::Vertex || len < 16)
        throw CorruptImageError("malformed vertex payload");
    std::uint32_t al;
    std::memcpy(&al, p + 4, 4);
    if (16 + std::uint64_t(al) > len) throw CorruptImageError("vertex attr out of range");
    VertexPayload out;
    std::memcpy(&out.id, p + 8, 8);
    out.attr.assign(reinterpret_cast<const char*>(p) + 16, al);
    return out;
}

// ---- graph edge: [kind u32][attr_len u32][src u64][dst u64][attr bytes] ---

struct EdgePayload {
    std::uint64_t src;
    std::uint64_t dst;
    std::string attr;
};

inline std::vector<std::uint8_t> encode_edge(std::uint64_t src, std::uint64_t dst,
                                             std::string_view attr) {
    std::vector<std::uint8_t> b(24 + attr.size());
    std::uint32_t k = static_cast<std::uint32_t>(PayloadKind::Edge);
    std::uint32_t al = static_cast<std::uint32_t>(attr.size());
    std::memcpy(b.data(), &k, 4);
    std::memcpy(b.data() + 4, &al, 4);
    std::memcpy(b.data() + 8, &src, 8);
    std::memcpy(b.data() + 16, &dst, 8);
    if (!attr.empty()) std::memcpy(b.data() + 24, attr.data(), attr.size());
    return b;
}

inline EdgePayload decode_edge(const std::uint8_t* p, std::uint32_t len) {
    if (payload_kind(p, len) != PayloadKind::Edge || len < 24)
        throw CorruptImageError("malformed edge payload");
    std::uint32_t al;
    std::memcpy(&al, p + 4, 4);
    if (24 + std::uint64_t(al) > len) throw CorruptImageError("edge attr out of range");
    EdgePayload out;
    std::memcpy(&out.src, p + 8, 8);
    std::memcpy(&out.dst, p + 16, 8);
    out.attr.assign(reinterpret_cast<const char*>(p) + 24, al);
    return out;
}

// ---- abstract states shared by dumps, rebuilds, and the replay oracle -----

using QueueAbstract = std::vector<std::string>;
using MapAbstract = std::map<std::string, std::string>;

struct GraphAbstract {
    std::map<std::uint64_t, std::string> vertices;
    std::map<std::pair<std::uint64_t, std::uint64_t>, std::string> edges;
    bool operator==(const GraphAbstract&) const = default;
};

}  // namespace epochstore
