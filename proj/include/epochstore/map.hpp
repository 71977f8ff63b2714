#pragma once

#include <atomic>
#include <optional>
#include <thread>

#include "epochstore/codec.hpp"
#include "epochstore/oplog.hpp"
#include "epochstore/recovery.hpp"
#include "epochstore/runtime.hpp"

namespace epochstore {

// Durable hash map: fixed power-of-two bucket array, one lock per bucket,
// entries kept key-sorted inside a bucket. Keys are bounded (32 bytes) so an
// entry's key region never moves; updating a value resizes the entry payload
// in place when it fits, otherwise the runtime clones the block.
//
// put() allocates its candidate block before taking the bucket lock to keep
// the critical section short; if the key turns out to exist, the unused
// same-epoch block is deleted (which makes it vanish entirely).
class DurableMap {
  public:
    explicit DurableMap(EpochRuntime& rt, std::size_t buckets = 1024,
                        OpLogger* log = nullptr)
        : rt_(rt), log_(log), buckets_(round_pow2(buckets)) {}

    DurableMap(EpochRuntime& rt, std::size_t buckets, const RecoveredSet& rs,
               unsigned k = 1, OpLogger* log = nullptr)
        : rt_(rt), log_(log), buckets_(round_pow2(buckets)) {
        auto load = [&](unsigned i) {
            for (const RecoveredBlock& rb : rs.shard(i, k)) {
                const std::uint8_t* p = rt_.payload_ptr(rb.ref);
                if (payload_kind(p, rb.hdr.payload_len) != PayloadKind::Map) continue;
                std::string_view key = map_entry_key(p, rb.hdr.payload_len);
                Bucket& b = bucket_for(key);
                std::lock_guard<std::mutex> g(b.mu);
                auto it = std::lower_bound(
                    b.entries.begin(), b.entries.end(), key,
                    [](const Entry& en, std::string_view k2) { return en.key < k2; });
                b.entries.insert(it, {std::string(key), rb.ref});
                count_.fetch_add(1, std::memory_order_relaxed);
            }
        };
        run_sharded(load, k);
    }

    // Upsert; returns true always. The logged result carries the old value.
    bool put(std::string_view key, std::string_view value) {
        auto bytes = encode_map_entry(key, value);
        BlockRef pre = rt_.pnew_pre(static_cast<std::uint32_t>(bytes.size()), bytes.data());
        Bucket& b = bucket_for(key);
        std::lock_guard<std::mutex> g(b.mu);
        Op op = rt_.begin_op({pre});
        auto [it, existed] = find(b, key);
        std::string old;
        if (!existed) {
            b.entries.insert(it, {std::string(key), pre});
            count_.fetch_add(1, std::memory_order_relaxed);
        } else {
            old = read_value(it->ref);
            rt_.pdelete(op, pre);  // unused candidate, born this epoch: vanishes
            std::uint32_t vlen = static_cast<std::uint32_t>(value.size());
            BlockRef h2 = rt_.set_field_resize(op, it->ref, kMapValueOffset + vlen,
                                               kMapValueOffset, value.data(), vlen);
            h2 = rt_.set_field(op, h2, 8, &vlen, 4);  // payload val_len field
            it->ref = h2;
        }
        if (log_)
            log_->log(OpCode::MPut, op.epoch(), std::string(key), std::string(value), 0, 0,
                      true, std::move(old));
        return true;
    }

    // Put-if-absent; returns false (and changes nothing) when the key exists.
    bool insert(std::string_view key, std::string_view value) {
        auto bytes = encode_map_entry(key, value);
        BlockRef pre = rt_.pnew_pre(static_cast<std::uint32_t>(bytes.size()), bytes.data());
        Bucket& b = bucket_for(key);
        std::lock_guard<std::mutex> g(b.mu);
        Op op = rt_.begin_op({pre});
        auto [it, existed] = find(b, key);
        if (existed) {
            rt_.pdelete(op, pre);
        } else {
            b.entries.insert(it, {std::string(key), pre});
            count_.fetch_add(1, std::memory_order_relaxed);
        }
        if (log_)
            log_->log(OpCode::MInsert, op.epoch(), std::string(key), std::string(value), 0,
                      0, !existed, "");
        return !existed;
    }

    bool remove(std::string_view key) {
        Bucket& b = bucket_for(key);
        std::lock_guard<std::mutex> g(b.mu);
        Op op = rt_.begin_op();
        auto [it, existed] = find(b, key);
        std::string old;
        if (existed) {
            old = read_value(it->ref);
            rt_.pdelete(op, it->ref);
            b.entries.erase(it);
            count_.fetch_sub(1, std::memory_order_relaxed);
        }
        if (log_)
            log_->log(OpCode::MRemove, op.epoch(), std::string(key), "", 0, 0, existed,
                      std::move(old));
        return existed;
    }

    std::optional<std::string> get(std::string_view key) const {
        const Bucket& b = bucket_for(key);
        std::lock_guard<std::mutex> g(b.mu);
        auto it = std::lower_bound(
            b.entries.begin(), b.entries.end(), key,
            [](const Entry& en, std::string_view k) { return en.key < k; });
        if (it == b.entries.end() || it->key != key) return std::nullopt;
        return read_value(it->ref);
    }

    std::size_t size() const { return count_.load(std::memory_order_relaxed); }

    MapAbstract dump_abstract() const {
        MapAbstract out;
        for (const Bucket& b : buckets_) {
            std::lock_guard<std::mutex> g(b.mu);
            for (const Entry& e : b.entries) out[e.key] = read_value(e.ref);
        }
        return out;
    }

  private:
    struct Entry {
        std::string key;
        BlockRef ref;
    };
    struct Bucket {
        mutable std::mutex mu;
        std::vector<Entry> entries;  // sorted by key
    };

    static std::size_t round_pow2(std::size_t n) {
        std::size_t p = 1;
        while (p < n) p <<= 1;
        return p;
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 14695981039346656037ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    }

    Bucket& bucket_for(std::string_view key) {
        return buckets_[fnv1a(key) & (buckets_.size() - 1)];
    }
    const Bucket& bucket_for(std::string_view key) const {
        return buckets_[fnv1a(key) & (buckets_.size() - 1)];
    }

    std::pair<std::vector<Entry>::iterator, bool> find(Bucket& b, std::string_view key) {
        auto it = std::lower_bound(
            b.entries.begin(), b.entries.end(), key,
            [](const Entry& en, std::string_view k) { return en.key < k; });
        return {it, it != b.entries.end() && it->key == key};
    }

    std::string read_value(BlockRef ref) const {
        PayloadHeader h = rt_.header(ref);
        return decode_map_entry(rt_.payload_ptr(ref), h.payload_len).value;
    }

    EpochRuntime& rt_;
    OpLogger* log_;
    std::vector<Bucket> buckets_;
    std::atomic<std::size_t> count_{0};
};

}  // namespace epochstore
