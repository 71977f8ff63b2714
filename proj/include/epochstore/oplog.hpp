#pragma once

#include <algorithm>
#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include "epochstore/codec.hpp"

namespace epochstore {

enum class OpCode : std::uint8_t {
    QEnq = 1,
    QDeq,
    MPut,
    MInsert,
    MRemove,
    GAddV,
    GAddE,
    GRemE,
    GClearV,
};

inline const char* op_code_name(OpCode c) {
    switch (c) {
        case OpCode::QEnq: return "q_enq";
        case OpCode::QDeq: return "q_deq";
        case OpCode::MPut: return "m_put";
        case OpCode::MInsert: return "m_insert";
        case OpCode::MRemove: return "m_remove";
        case OpCode::GAddV: return "g_add_v";
        case OpCode::GAddE: return "g_add_e";
        case OpCode::GRemE: return "g_rem_e";
        case OpCode::GClearV: return "g_clear_v";
    }
    return "unknown";
}

// One completed structure operation as observed at its linearization point
// (logged while the structure lock ordering the operation is still held, so
// seq order within a contention domain equals linearization order).
struct OpRecord {
    std::uint64_t seq = 0;
    int tid = -1;
    OpCode code{};
    std::uint64_t epoch = 0;
    std::string a, b;          // string arguments (values, keys, attrs)
    std::uint64_t x = 0, y = 0;  // numeric arguments (vertex ids)
    bool ok = false;
    std::string ret;
};

class OpLogger {
  public:
    // Worker id for records logged from this thread; -1 when unset.
    static int& thread_id() {
        thread_local int tid = -1;
        return tid;
    }

    void log(OpCode code, std::uint64_t epoch, std::string a, std::string b,
             std::uint64_t x, std::uint64_t y, bool ok, std::string ret) {
        std::lock_guard<std::mutex> g(mu_);
        records_.push_back({seq_++, thread_id(), code, epoch, std::move(a), std::move(b),
                            x, y, ok, std::move(ret)});
    }

    std::vector<OpRecord> snapshot() const {
        std::lock_guard<std::mutex> g(mu_);
        return records_;
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> g(mu_);
        return records_.size();
    }

    void clear() {
        std::lock_guard<std::mutex> g(mu_);
        records_.clear();
        seq_ = 0;
    }

  private:
    mutable std::mutex mu_;
    std::vector<OpRecord> records_;
    std::uint64_t seq_ = 0;
};

struct ReplayResult {
    QueueAbstract queue;
    MapAbstract map;
    GraphAbstract graph;
    bool valid = true;
    std::uint64_t first_mismatch_seq = 0;
    std::string detail;
};

// Replays records with epoch <= cutoff in seq order against in-memory
// abstract states, validating each record's outcome against what a correct
// sequential execution must have returned. Per contention domain epochs are
// non-decreasing along the linearization order, so the epoch filter selects a
// prefix of every domain: the replayed state is exactly the state a crash
// losing everything after `cutoff` must recover.
inline ReplayResult oracle_replay(std::vector<OpRecord> records,
                                  std::uint64_t epoch_cutoff = ~0ull) {
    std::sort(records.begin(), records.end(),
              [](const OpRecord& l, const OpRecord& r) { return l.seq < r.seq; });
    ReplayResult rr;
    auto fail = [&](const OpRecord& rec, std::string why) {
        if (!rr.valid) return;
        rr.valid = false;
        rr.first_mismatch_seq = rec.seq;
        rr.detail = std::string(op_code_name(rec.code)) + " seq " +
                    std::to_string(rec.seq) + ": " + std::move(why);
    };
    auto expect = [&](const OpRecord& rec, bool ok, const std::string& ret) {
        if (rec.ok != ok)
            fail(rec, "ok " + std::to_string(rec.ok) + " want " + std::to_string(ok));
        else if (rec.ret != ret)
            fail(rec, "ret '" + rec.ret + "' want '" + ret + "'");
    };
    for (const OpRecord& rec : records) {
        if (rec.epoch > epoch_cutoff) continue;
        switch (rec.code) {
            case OpCode::QEnq:
                rr.queue.push_back(rec.a);
                expect(rec, true, "");
                break;
            case OpCode::QDeq:
                if (rr.queue.empty()) {
                    expect(rec, false, "");
                } else {
                    expect(rec, true, rr.queue.front());
                    rr.queue.erase(rr.queue.begin());
                }
                break;
            case OpCode::MPut: {
                auto it = rr.map.find(rec.a);
                expect(rec, true, it == rr.map.end() ? "" : it->second);
                rr.map[rec.a] = rec.b;
                break;
            }
            case OpCode::MInsert: {
                bool inserted = rr.map.emplace(rec.a, rec.b).second;
                expect(rec, inserted, "");
                break;
            }
            case OpCode::MRemove: {
                auto it = rr.map.find(rec.a);
                if (it == rr.map.end()) {
                    expect(rec, false, "");
                } else {
                    expect(rec, true, it->second);
                    rr.map.erase(it);
                }
                break;
            }
            case OpCode::GAddV: {
                bool inserted = rr.graph.vertices.emplace(rec.x, rec.a).second;
                expect(rec, inserted, "");
                break;
            }
            case OpCode::GAddE: {
                bool ok = rr.graph.vertices.count(rec.x) && rr.graph.vertices.count(rec.y) &&
                          !rr.graph.edges.count({rec.x, rec.y});
                if (ok) rr.graph.edges[{rec.x, rec.y}] = rec.a;
                expect(rec, ok, "");
                break;
            }
            case OpCode::GRemE: {
                bool ok = rr.graph.edges.erase({rec.x, rec.y}) > 0;
                expect(rec, ok, "");
                break;
            }
            case OpCode::GClearV: {
                if (!rr.graph.vertices.count(rec.x)) {
                    expect(rec, false, "");
                    break;
                }
                std::size_t removed = 0;
                for (auto it = rr.graph.edges.begin(); it != rr.graph.edges.end();) {
                    if (it->first.first == rec.x || it->first.second == rec.x) {
                        it = rr.graph.edges.erase(it);
                        ++removed;
                    } else {
                        ++it;
                    }
                }
                expect(rec, true, std::to_string(removed));
                break;
            }
        }
    }
    return rr;
}

}  // namespace epochstore
