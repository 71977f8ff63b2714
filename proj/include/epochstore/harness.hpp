#pragma once

#include <atomic>
#include <condition_variable>
#include <fstream>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "epochstore/graph.hpp"
#include "epochstore/map.hpp"
#include "epochstore/oplog.hpp"
#include "epochstore/queue.hpp"
#include "epochstore/recovery.hpp"
#include "epochstore/runtime.hpp"
#include "epochstore/sim_backend.hpp"

namespace epochstore {

enum class ScheduleMode { Lockstep, Free };

inline const char* schedule_name(ScheduleMode m) {
    return m == ScheduleMode::Lockstep ? "lockstep" : "free";
}

struct HarnessConfig {
    StructureKind structure = StructureKind::Queue;
    // Lockstep: a seeded controller grants one operation at a time across the
    // worker threads, so a config maps to one bit-reproducible history. Free:
    // workers run whole batches concurrently and only the batch boundaries
    // (where crash images are taken) are synchronized.
    ScheduleMode mode = ScheduleMode::Lockstep;
    unsigned threads = 4;
    unsigned runs = 10;
    unsigned ops_per_run = 1000;
    unsigned advance_every = 50;   // operations between manual epoch advances
    unsigned crash_points = 20;    // crash images sampled per run
    unsigned recovery_shards = 1;  // parallelism of the rebuild after a crash
    std::size_t buckets = 64;      // map bucket count
    std::size_t key_range = 48;    // distinct keys / vertex ids
    std::uint64_t seed = 1;
    std::uint64_t heap_bytes = 1u << 23;
    FaultInjection faults{};
    std::string report_path;  // JSONL, one line per crash check; empty: none
};

// One crash image checked against the replayed operation-log prefix.
struct CrashCheck {
    unsigned run = 0;
    unsigned point = 0;
    std::uint64_t image_clock = 0;
    std::uint64_t cutoff = 0;
    std::size_t ops_logged = 0;
    std::size_t survivors = 0;
    bool replay_valid = false;
    bool state_match = false;
    std::string detail;
    bool ok() const { return replay_valid && state_match; }
};

struct HarnessResult {
    unsigned runs = 0;
    std::uint64_t ops_executed = 0;
    std::uint64_t crash_checks = 0;
    std::uint64_t epoch_advances = 0;
    // Every sampled crash image recovered to a valid prefix of the history.
    bool prefixes_linearizable = true;
    // Every mutation left the touched block stamped with the op's epoch.
    bool touch_audit_ok = true;
    // Every advance ordered write-backs before the fence before the clock.
    bool order_audit_ok = true;
    // Every recycled block waited exactly two advances after being freed.
    bool reclamation_audit_ok = true;
    // begin() retried at most once per concurrent epoch advance.
    bool retry_bound_ok = true;
    // No operation ever observed a block from a later epoch.
    bool visibility_errors_zero = true;
    std::vector<CrashCheck> failed;  // capped at 32 entries
    std::string first_failure;

    bool all_ok() const {
        return prefixes_linearizable && touch_audit_ok && order_audit_ok &&
               reclamation_audit_ok && retry_bound_ok && visibility_errors_zero;
    }
};

namespace harness_detail {

struct Structures {
    std::unique_ptr<DurableQueue> q;
    std::unique_ptr<DurableMap> m;
    std::unique_ptr<DurableGraph> g;
};

inline Structures make_structures(const HarnessConfig& cfg, EpochRuntime& rt,
                                  OpLogger* log) {
    Structures s;
    switch (cfg.structure) {
        case StructureKind::Queue: s.q = std::make_unique<DurableQueue>(rt, log); break;
        case StructureKind::Map:
            s.m = std::make_unique<DurableMap>(rt, cfg.buckets, log);
            break;
        case StructureKind::Graph: s.g = std::make_unique<DurableGraph>(rt, log); break;
    }
    return s;
}

inline void one_op(const HarnessConfig& cfg, Structures& s, std::mt19937_64& rng,
                   std::atomic<std::uint64_t>& visibility_errors) {
    try {
        switch (cfg.structure) {
            case StructureKind::Queue: {
                if (rng() % 10 < 6)
                    s.q->enqueue("v" + std::to_string(rng() % 100000));
                else
                    s.q->dequeue();
                break;
            }
            case StructureKind::Map: {
                std::string key = "k" + std::to_string(rng() % cfg.key_range);
                switch (rng() % 10) {
                    case 0:
                    case 1:
                    case 2:
                    case 3:
                        s.m->put(key, std::string(1 + rng() % 40,
                                                  static_cast<char>('a' + rng() % 26)));
                        break;
                    case 4:
                    case 5: s.m->insert(key, "i" + std::to_string(rng() % 1000)); break;
                    case 6:
                    case 7: s.m->remove(key); break;
                    default: s.m->get(key); break;
                }
                break;
            }
            case StructureKind::Graph: {
                std::uint64_t a = rng() % cfg.key_range, b = rng() % cfg.key_range;
                switch (rng() % 20) {
                    case 0:
                    case 1:
                    case 2: s.g->add_vertex(a, "t" + std::to_string(rng() % 100)); break;
                    case 3:
                    case 4:
                    case 5: s.g->rem_edge(a, b); break;
                    case 6: s.g->clear_vertex(a); break;
                    case 7: s.g->has_edge(a, b); break;
                    default: s.g->add_edge(a, b, "e" + std::to_string(rng() % 100)); break;
                }
                break;
            }
        }
    } catch (const OldSeeNewError&) {
        visibility_errors.fetch_add(1, std::memory_order_relaxed);
    }
}

// Rebuilds a structure from a crash image and compares it with the replayed
// prefix of the operation log at the image's epoch cutoff.
inline CrashCheck check_image(const HarnessConfig& cfg, unsigned run, unsigned point,
                              const std::vector<std::uint8_t>& img,
                              const std::vector<OpRecord>& records) {
    CrashCheck cc;
    cc.run = run;
    cc.point = point;
    cc.ops_logged = records.size();
    // A failure to even rebuild from the image is itself a durability
    // violation the harness must report, not die on.
    try {
        Heap h = Heap::open(std::make_unique<SimBackend>(img));
        cc.image_clock = h.clock();
        cc.cutoff = cc.image_clock - 2;
        RecoveredSet rs = recover(h);
        cc.survivors = rs.size();
        RuntimeOptions ro;
        ro.advancer.mode = AdvanceMode::Manual;
        EpochRuntime rt(std::move(h), ro);

        ReplayResult rr = oracle_replay(records, cc.cutoff);
        cc.replay_valid = rr.valid;
        if (!rr.valid) {
            cc.detail = "log prefix not a valid history: " + rr.detail;
            return cc;
        }
        switch (cfg.structure) {
            case StructureKind::Queue: {
                DurableQueue q(rt, rs, cfg.recovery_shards);
                cc.state_match = q.dump_abstract() == rr.queue;
                break;
            }
            case StructureKind::Map: {
                DurableMap m(rt, cfg.buckets, rs, cfg.recovery_shards);
                cc.state_match = m.dump_abstract() == rr.map;
                break;
            }
            case StructureKind::Graph: {
                DurableGraph g(rt, rs, cfg.recovery_shards);
                cc.state_match = g.dump_abstract() == rr.graph;
                break;
            }
        }
        if (!cc.state_match)
            cc.detail = "recovered state diverges from the replayed prefix at cutoff " +
                        std::to_string(cc.cutoff);
        rt.close();
    } catch (const std::exception& e) {
        cc.replay_valid = false;
        cc.state_match = false;
        cc.detail = std::string("recovery failed: ") + e.what();
    }
    return cc;
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a * 0x9E3779B97F4A7C15ull + b;
    x ^= x >> 32;
    return x * 0xBF58476D1CE4E5B9ull + 1;
}

}  // namespace harness_detail

// Runs seeded workloads against a crash-simulating heap, samples crash images
// at quiescent points, and checks that every image recovers to exactly the
// state reached by replaying the logged history up to the image's epoch
// cutoff. Also validates the runtime's internal audits for each run.
inline HarnessResult run_with_crashes(const HarnessConfig& cfg) {
    using namespace harness_detail;
    HarnessResult res;
    res.runs = cfg.runs;
    std::vector<nlohmann::json> report;

    auto fail = [&](const std::string& what) {
        if (res.first_failure.empty()) res.first_failure = what;
    };
    auto note_check = [&](const CrashCheck& cc) {
        ++res.crash_checks;
        if (!cc.ok()) {
            res.prefixes_linearizable = false;
            fail("run " + std::to_string(cc.run) + " point " + std::to_string(cc.point) +
                 ": " + cc.detail);
            if (res.failed.size() < 32) res.failed.push_back(cc);
        }
        report.push_back({{"type", "crash_check"},
                          {"run", cc.run},
                          {"point", cc.point},
                          {"image_clock", cc.image_clock},
                          {"cutoff", cc.cutoff},
                          {"ops_logged", cc.ops_logged},
                          {"survivors", cc.survivors},
                          {"replay_valid", cc.replay_valid},
                          {"state_match", cc.state_match},
                          {"detail", cc.detail}});
    };

    for (unsigned run = 0; run < cfg.runs; ++run) {
        const std::uint64_t run_seed = mix(cfg.seed, run);
        SimBackendOptions bo;
        bo.record_events = true;
        auto backend = std::make_unique<SimBackend>(std::size_t(cfg.heap_bytes), bo);
        SimBackend* be = backend.get();
        HeapGeometry geo;
        geo.total_bytes = cfg.heap_bytes;
        RuntimeOptions ro;
        ro.advancer.mode = AdvanceMode::Manual;
        ro.audit = true;
        ro.faults = cfg.faults;
        EpochRuntime rt(Heap::create(geo, std::move(backend)), ro);
        OpLogger log;
        Structures s = make_structures(cfg, rt, &log);
        std::atomic<std::uint64_t> visibility_errors{0};

        unsigned point = 0;
        auto checkpoint = [&](unsigned ops_done) {
            auto records = log.snapshot();
            auto img = be->crash_image(mix(run_seed, 0xC0DE0000u + point));
            CrashCheck cc = check_image(cfg, run, point, img, records);
            (void)ops_done;
            note_check(cc);
            ++point;
        };

        if (cfg.mode == ScheduleMode::Lockstep) {
            // Controller grants exactly one operation at a time; workers each
            // draw from their own deterministic stream when granted.
            std::mutex mu;
            std::condition_variable cv;
            int grant = -1;
            bool done = false, stop = false;
            std::vector<std::thread> workers;
            for (unsigned w = 0; w < cfg.threads; ++w) {
                workers.emplace_back([&, w] {
                    OpLogger::thread_id() = static_cast<int>(w);
                    std::mt19937_64 rng(mix(run_seed, 0x1000 + w));
                    for (;;) {
                        std::unique_lock<std::mutex> lk(mu);
                        cv.wait(lk, [&] { return stop || grant == static_cast<int>(w); });
                        if (stop) return;
                        lk.unlock();
                        one_op(cfg, s, rng, visibility_errors);
                        lk.lock();
                        grant = -1;
                        done = true;
                        cv.notify_all();
                    }
                });
            }
            std::mt19937_64 grant_rng(mix(run_seed, 0x5EED));
            std::set<unsigned> points;
            while (points.size() < cfg.crash_points)
                points.insert(1 + grant_rng() % cfg.ops_per_run);
            for (unsigned op = 1; op <= cfg.ops_per_run; ++op) {
                unsigned w = grant_rng() % cfg.threads;
                {
                    std::unique_lock<std::mutex> lk(mu);
                    done = false;
                    grant = static_cast<int>(w);
                    cv.notify_all();
                    cv.wait(lk, [&] { return done; });
                }
                if (op % cfg.advance_every == 0) rt.advance_epoch();
                if (points.count(op)) checkpoint(op);
            }
            {
                std::lock_guard<std::mutex> lk(mu);
                stop = true;
                cv.notify_all();
            }
            for (auto& t : workers) t.join();
        } else {
            // Free schedule: per batch, workers race over a shared budget,
            // then the batch boundary quiesces for the advance and sampling.
            const unsigned batches =
                (cfg.ops_per_run + cfg.advance_every - 1) / cfg.advance_every;
            for (unsigned batch = 0; batch < batches; ++batch) {
                std::atomic<long long> budget{
                    static_cast<long long>(std::min<unsigned>(
                        cfg.advance_every, cfg.ops_per_run - batch * cfg.advance_every))};
                std::vector<std::thread> workers;
                for (unsigned w = 0; w < cfg.threads; ++w) {
                    workers.emplace_back([&, w] {
                        OpLogger::thread_id() = static_cast<int>(w);
                        std::mt19937_64 rng(mix(run_seed, mix(batch, 0x2000 + w)));
                        while (budget.fetch_sub(1, std::memory_order_relaxed) > 0)
                            one_op(cfg, s, rng, visibility_errors);
                    });
                }
                for (auto& t : workers) t.join();
                rt.advance_epoch();
                if (point < cfg.crash_points) checkpoint((batch + 1) * cfg.advance_every);
            }
        }

        res.ops_executed += cfg.ops_per_run;
        res.epoch_advances += rt.advances();

        // Audit 1: header stamps. Every mutation must leave the block carrying
        // the mutating operation's epoch.
        for (const OpTouch& t : rt.op_touches()) {
            if (t.header_epoch != t.op_epoch) {
                res.touch_audit_ok = false;
                fail("run " + std::to_string(run) + ": block at " +
                     std::to_string(t.offset) + " stamped " +
                     std::to_string(t.header_epoch) + " by an epoch-" +
                     std::to_string(t.op_epoch) + " op");
                break;
            }
        }
        // Audit 2: advance ordering. Within each advance the queued
        // write-backs land, then one fence commits them, then the clock line
        // is stored and written back — verified against the backend's event
        // log using the per-phase sequence windows.
        const auto events = be->events_snapshot();
        const std::uint64_t clock_line = kClockOffset / kLineBytes;
        for (const AdvanceRecord& ar : rt.advance_records()) {
            bool windows_ordered = ar.wb_begin <= ar.wb_end && ar.wb_end <= ar.fence_begin &&
                                   ar.fence_begin <= ar.fence_end &&
                                   ar.fence_end <= ar.clock_begin &&
                                   ar.clock_begin <= ar.clock_end;
            bool fence_seen = false, clock_store_seen = false, clock_wb_seen = false;
            std::uint64_t wbs_in_window = 0;
            for (const BackendEvent& e : events) {
                if (e.kind == BackendEvent::Fence && e.seq >= ar.fence_begin &&
                    e.seq < ar.fence_end)
                    fence_seen = true;
                if (e.kind == BackendEvent::WriteBack && e.seq >= ar.wb_begin &&
                    e.seq < ar.wb_end)
                    ++wbs_in_window;
                if (e.seq >= ar.clock_begin && e.seq < ar.clock_end &&
                    e.line_first <= clock_line && clock_line <= e.line_last) {
                    if (e.kind == BackendEvent::Store && e.value == ar.from_epoch + 1)
                        clock_store_seen = true;
                    if (e.kind == BackendEvent::WriteBack && clock_store_seen)
                        clock_wb_seen = true;
                }
            }
            bool wb_count_ok = wbs_in_window >= ar.entries_written;
            if (!(windows_ordered && fence_seen && clock_store_seen && clock_wb_seen &&
                  wb_count_ok)) {
                res.order_audit_ok = false;
                fail("run " + std::to_string(run) + ": advance from epoch " +
                     std::to_string(ar.from_epoch) +
                     " broke write-back/fence/clock ordering");
                break;
            }
        }
        // Audit 3: reclamation delay. A block freed in epoch x is recycled by
        // the advance from x+2, after the fence that committed its scrub.
        for (const RecycleEvent& re : rt.recycle_events()) {
            if (re.advance_from != re.enq_epoch + 2) {
                res.reclamation_audit_ok = false;
                fail("run " + std::to_string(run) + ": block at " +
                     std::to_string(re.offset) + " freed in epoch " +
                     std::to_string(re.enq_epoch) + " recycled by the advance from " +
                     std::to_string(re.advance_from));
                break;
            }
        }
        // Audit 4: bounded retries and no stale-epoch visibility.
        if (rt.retries_total() > rt.advances()) {
            res.retry_bound_ok = false;
            fail("run " + std::to_string(run) + ": " + std::to_string(rt.retries_total()) +
                 " begin retries against " + std::to_string(rt.advances()) + " advances");
        }
        if (visibility_errors.load() != 0) {
            res.visibility_errors_zero = false;
            fail("run " + std::to_string(run) + ": an operation observed a block from a "
                 "later epoch");
        }
        rt.close();
    }

    if (!cfg.report_path.empty()) {
        std::ofstream out(cfg.report_path, std::ios::trunc);
        for (const auto& line : report) out << line.dump() << "\n";
        nlohmann::json summary = {{"type", "summary"},
                                  {"structure", structure_name(cfg.structure)},
                                  {"mode", schedule_name(cfg.mode)},
                                  {"threads", cfg.threads},
                                  {"seed", cfg.seed},
                                  {"runs", res.runs},
                                  {"ops_executed", res.ops_executed},
                                  {"crash_checks", res.crash_checks},
                                  {"epoch_advances", res.epoch_advances},
                                  {"prefixes_linearizable", res.prefixes_linearizable},
                                  {"touch_audit_ok", res.touch_audit_ok},
                                  {"order_audit_ok", res.order_audit_ok},
                                  {"reclamation_audit_ok", res.reclamation_audit_ok},
                                  {"retry_bound_ok", res.retry_bound_ok},
                                  {"visibility_errors_zero", res.visibility_errors_zero},
                                  {"all_ok", res.all_ok()}};
        out << summary.dump() << "\n";
    }
    return res;
}

}  // namespace epochstore
