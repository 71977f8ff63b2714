#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "epochstore/file_backend.hpp"
#include "epochstore/graph.hpp"
#include "epochstore/map.hpp"
#include "epochstore/queue.hpp"
#include "epochstore/recovery.hpp"
#include "epochstore/runtime.hpp"
#include "epochstore/sim_backend.hpp"

namespace epochstore {

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::DirectWB: return "direct";
        case Strategy::BufferedWB: return "buffered";
        case Strategy::PerEpoch: return "perepoch";
    }
    return "unknown";
}

inline Strategy parse_strategy(const std::string& s) {
    if (s == "direct") return Strategy::DirectWB;
    if (s == "buffered") return Strategy::BufferedWB;
    if (s == "perepoch") return Strategy::PerEpoch;
    throw StateError("unknown strategy '" + s + "' (direct|buffered|perepoch)");
}

inline StructureKind parse_structure(const std::string& s) {
    if (s == "queue") return StructureKind::Queue;
    if (s == "map") return StructureKind::Map;
    if (s == "graph") return StructureKind::Graph;
    throw StateError("unknown structure '" + s + "' (queue|map|graph)");
}

struct BenchConfig {
    StructureKind structure = StructureKind::Map;
    // queue: "enqdeq". map: "mixed" (50/25/12.5/12.5 get/put/insert/remove),
    // "put", "get", or a "G:I:R" get:insert:remove ratio such as "18:1:1".
    // graph: "edges".
    std::string mix = "mixed";
    std::size_t value_bytes = 64;
    std::size_t key_range = 4096;
    std::size_t buckets = 1024;
    unsigned threads = 4;
    double seconds = 1.0;     // wall-clock budget, used when ops == 0
    std::uint64_t ops = 0;    // fixed operation budget (deterministic runs)
    // When nonzero the epoch advances every N completed operations instead of
    // on a timer; ideal for reproducible write-coalescing comparisons.
    std::uint64_t advance_every_ops = 0;
    Strategy strategy = Strategy::PerEpoch;
    double epoch_ms = 50.0;
    std::string backend = "sim";  // sim | file
    std::string heap_path = "bench_heap.dat";
    std::uint64_t heap_bytes = 1ull << 26;
    std::vector<std::uint32_t> size_classes;  // empty: geometry default
    std::uint64_t seed = 1;
    // recovery mode
    std::uint64_t n_payloads = 100000;
    unsigned shards = 1;
};

struct ThroughputRow {
    BenchConfig cfg;
    std::uint64_t ops_done = 0;
    double elapsed_seconds = 0;
    BackendCounters::Snapshot counters;  // delta over the timed region
    std::uint64_t epochs_elapsed = 0;
    std::uint64_t allocation_stalls = 0;

    double ops_per_sec() const {
        return elapsed_seconds > 0 ? double(ops_done) / elapsed_seconds : 0.0;
    }
};

inline std::string throughput_csv_header() {
    return "structure,mix,value_bytes,key_range,buckets,threads,seconds,strategy,"
           "epoch_ms,backend,seed,ops,ops_per_sec,writes_back,fences,lines_flushed,"
           "epochs_elapsed";
}

inline std::string csv_line(const ThroughputRow& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "%s,%s,%zu,%zu,%zu,%u,%.3f,%s,%.3f,%s,%llu,%llu,%.1f,%llu,%llu,%llu,%llu",
                  structure_name(r.cfg.structure), r.cfg.mix.c_str(), r.cfg.value_bytes,
                  r.cfg.key_range, r.cfg.buckets, r.cfg.threads, r.elapsed_seconds,
                  strategy_name(r.cfg.strategy), r.cfg.epoch_ms, r.cfg.backend.c_str(),
                  static_cast<unsigned long long>(r.cfg.seed),
                  static_cast<unsigned long long>(r.ops_done), r.ops_per_sec(),
                  static_cast<unsigned long long>(r.counters.writes_back),
                  static_cast<unsigned long long>(r.counters.fences),
                  static_cast<unsigned long long>(r.counters.lines_flushed),
                  static_cast<unsigned long long>(r.epochs_elapsed));
    return buf;
}

struct RecoveryRow {
    std::string structure;
    std::uint64_t n_payloads = 0;
    std::size_t value_bytes = 0;
    unsigned k = 0;
    double recover_seconds = 0;
    bool verified = false;  // rebuilt state carries the expected entry count
};

inline std::string recovery_csv_header() {
    return "structure,n_payloads,value_bytes,k,recover_seconds";
}

inline std::string csv_line(const RecoveryRow& r) {
    char buf[192];
    std::snprintf(buf, sizeof buf, "%s,%llu,%zu,%u,%.6f", r.structure.c_str(),
                  static_cast<unsigned long long>(r.n_payloads), r.value_bytes, r.k,
                  r.recover_seconds);
    return buf;
}

namespace bench_detail {

inline std::unique_ptr<PersistenceBackend> make_backend(const BenchConfig& cfg,
                                                        bool fresh) {
    if (cfg.backend == "sim") return std::make_unique<SimBackend>(std::size_t(cfg.heap_bytes));
    if (cfg.backend == "file")
        return fresh ? std::unique_ptr<PersistenceBackend>(
                           FileBackend::create(cfg.heap_path, cfg.heap_bytes))
                     : std::unique_ptr<PersistenceBackend>(FileBackend::open(cfg.heap_path));
    throw StateError("unknown backend '" + cfg.backend + "' (sim|file)");
}

inline HeapGeometry make_geometry(const BenchConfig& cfg) {
    HeapGeometry g;
    g.total_bytes = cfg.heap_bytes;
    if (!cfg.size_classes.empty()) g.size_classes = cfg.size_classes;
    return g;
}


inline std::string sized_value(std::size_t n, std::uint64_t salt) {
    std::string v(n ? n : 1, 'x');
    v[0] = static_cast<char>('a' + salt % 26);
    return v;
}

struct BenchStructures {
    std::unique_ptr<DurableQueue> q;
    std::unique_ptr<DurableMap> m;
    std::unique_ptr<DurableGraph> g;
};

// Fills the structure with its steady-state working set so timed runs do not
// start against an empty instance.
inline BenchStructures populate(const BenchConfig& cfg, EpochRuntime& rt) {
    BenchStructures s;
    switch (cfg.structure) {
        case StructureKind::Queue: {
            s.q = std::make_unique<DurableQueue>(rt);
            for (int i = 0; i < 256; ++i) s.q->enqueue(sized_value(cfg.value_bytes, i));
            break;
        }
        case StructureKind::Map: {
            s.m = std::make_unique<DurableMap>(rt, cfg.buckets);
            for (std::size_t i = 0; i < cfg.key_range / 2; ++i) {
                s.m->put("k" + std::to_string(i), sized_value(cfg.value_bytes, i));
                if (i % 4096 == 4095) rt.advance_epoch();
            }
            break;
        }
        case StructureKind::Graph: {
            s.g = std::make_unique<DurableGraph>(rt);
            for (std::uint64_t v = 0; v < cfg.key_range; ++v) {
                s.g->add_vertex(v, "");
                if (v % 4096 == 4095) rt.advance_epoch();
            }
            break;
        }
    }
    return s;
}

// Map workload as operation weights. Built from the named mixes or from a
// "G:I:R" ratio string (get:insert:remove, e.g. "18:1:1" read-dominant,
// "2:1:1" balanced writes).
struct MapMix {
    unsigned put = 0, insert = 0, remove = 0, get = 0;
    unsigned total() const { return put + insert + remove + get; }
};

inline MapMix parse_map_mix(const std::string& mix) {
    if (mix == "put") return {.put = 1};
    if (mix == "get") return {.get = 1};
    if (mix == "mixed") return {.put = 2, .insert = 1, .remove = 1, .get = 4};
    unsigned g = 0, i = 0, r = 0;
    char tail = 0;
    if (std::sscanf(mix.c_str(), "%u:%u:%u%c", &g, &i, &r, &tail) == 3 && g + i + r > 0)
        return {.insert = i, .remove = r, .get = g};
    throw StateError("unknown workload mix: " + mix);
}

inline void bench_op(const BenchConfig& cfg, const MapMix& mix, BenchStructures& s,
                     std::mt19937_64& rng) {
    switch (cfg.structure) {
        case StructureKind::Queue: {
            if (rng() & 1)
                s.q->enqueue(sized_value(cfg.value_bytes, rng()));
            else
                s.q->dequeue();
            break;
        }
        case StructureKind::Map: {
            std::string key = "k" + std::to_string(rng() % cfg.key_range);
            unsigned t = mix.total() > 1 ? static_cast<unsigned>(rng() % mix.total()) : 0;
            unsigned c = mix.put;
            if (t < c) {
                s.m->put(key, sized_value(cfg.value_bytes, rng()));
            } else if (t < (c += mix.insert)) {
                s.m->insert(key, sized_value(cfg.value_bytes, rng()));
            } else if (t < (c += mix.remove)) {
                s.m->remove(key);
            } else {
                s.m->get(key);
            }
            break;
        }
        case StructureKind::Graph: {
            std::uint64_t a = rng() % cfg.key_range, b = rng() % cfg.key_range;
            switch (rng() % 10) {
                case 0:
                case 1:
                case 2: s.g->rem_edge(a, b); break;
                case 3: s.g->has_edge(a, b); break;
                default: s.g->add_edge(a, b, sized_value(cfg.value_bytes, a)); break;
            }
            break;
        }
    }
}

}  // namespace bench_detail

// Sizes cfg's heap layout to the recovery benchmark's own populate workload:
// a single block class just large enough for the payloads it generates, with
// enough blocks for every payload plus slab-rounding slack. For callers that
// have not chosen a layout themselves; n_payloads of kilobyte values would
// otherwise overflow the general-purpose default geometry.
inline void size_recovery_heap(BenchConfig& cfg) {
    std::uint64_t payload = 0;
    switch (cfg.structure) {
        case StructureKind::Queue: payload = 16 + cfg.value_bytes; break;
        case StructureKind::Map: payload = kMapValueOffset + cfg.value_bytes; break;
        case StructureKind::Graph: payload = 24; break;  // edge, attrs stay empty
    }
    std::uint64_t cls = (kHeaderLine + payload + kLineBytes - 1) / kLineBytes * kLineBytes;
    std::uint64_t blocks = cfg.n_payloads + cfg.n_payloads / 8 + 64;
    cfg.size_classes = {static_cast<std::uint32_t>(cls)};
    cfg.heap_bytes = kBlocksOffset + blocks * cls;
}

// Timed multi-threaded run against one structure. Stops on the wall-clock
// budget, or after cfg.ops operations when that is nonzero. Allocation
// pressure (garbage not yet past its reclamation horizon) forces an early
// epoch advance and a retry rather than failing the run.
inline ThroughputRow run_throughput(const BenchConfig& cfg) {
    using namespace bench_detail;
    const MapMix mix =
        cfg.structure == StructureKind::Map ? parse_map_mix(cfg.mix) : MapMix{};
    RuntimeOptions ro;
    ro.strategy = cfg.strategy;
    if (cfg.advance_every_ops > 0) {
        ro.advancer.mode = AdvanceMode::Manual;
    } else {
        ro.advancer.mode = AdvanceMode::BackgroundThread;
        ro.advancer.interval =
            std::chrono::milliseconds(std::max<long long>(1, std::llround(cfg.epoch_ms)));
    }
    EpochRuntime rt(Heap::create(make_geometry(cfg), make_backend(cfg, true)), ro);
    BenchStructures s = populate(cfg, rt);

    const auto& counters = rt.heap().backend().counters();
    const BackendCounters::Snapshot base = counters.snapshot();
    const std::uint64_t epoch_base = rt.epoch();
    std::atomic<std::uint64_t> ops_done{0};
    std::atomic<std::uint64_t> stalls{0};
    std::atomic<long long> budget{cfg.ops ? static_cast<long long>(cfg.ops) : 0};
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(cfg.seconds));

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < cfg.threads; ++w) {
        workers.emplace_back([&, w] {
            std::mt19937_64 rng(cfg.seed * 7919 + w);
            std::uint64_t local = 0;
            for (;;) {
                if (cfg.ops) {
                    if (budget.fetch_sub(1, std::memory_order_relaxed) <= 0) break;
                } else if ((local & 63) == 0 &&
                           std::chrono::steady_clock::now() >= deadline) {
                    break;
                }
                for (;;) {
                    try {
                        bench_op(cfg, mix, s, rng);
                        break;
                    } catch (const OutOfMemoryError&) {
                        stalls.fetch_add(1, std::memory_order_relaxed);
                        rt.advance_epoch();
                    }
                }
                ++local;
                if (cfg.advance_every_ops) {
                    std::uint64_t n = ops_done.fetch_add(1, std::memory_order_relaxed) + 1;
                    if (n % cfg.advance_every_ops == 0) rt.advance_epoch();
                } else {
                    ops_done.fetch_add(1, std::memory_order_relaxed);
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    const auto t1 = std::chrono::steady_clock::now();

    ThroughputRow row;
    row.cfg = cfg;
    row.ops_done = ops_done.load();
    row.elapsed_seconds = std::chrono::duration<double>(t1 - t0).count();
    const BackendCounters::Snapshot now = counters.snapshot();
    row.counters = {now.writes_back - base.writes_back, now.fences - base.fences,
                    now.lines_flushed - base.lines_flushed};
    row.epochs_elapsed = rt.epoch() - epoch_base;
    row.allocation_stalls = stalls.load();
    rt.close();
    return row;
}

namespace bench_detail {

// Builds a structure with n_payloads durable blocks and shuts the store
// down. Sim backend: returns the crash image to recover from. File backend:
// leaves the populated heap at cfg.heap_path and returns empty.
inline std::vector<std::uint8_t> populate_recovery_image(const BenchConfig& cfg) {
    std::vector<std::uint8_t> image;
    {
        RuntimeOptions ro;
        ro.advancer.mode = AdvanceMode::Manual;
        auto backend = make_backend(cfg, true);
        SimBackend* sim = dynamic_cast<SimBackend*>(backend.get());
        EpochRuntime rt(Heap::create(make_geometry(cfg), std::move(backend)), ro);
        switch (cfg.structure) {
            case StructureKind::Queue: {
                DurableQueue q(rt);
                for (std::uint64_t i = 0; i < cfg.n_payloads; ++i) {
                    q.enqueue(sized_value(cfg.value_bytes, i));
                    if (i % 4096 == 4095) rt.advance_epoch();
                }
                break;
            }
            case StructureKind::Map: {
                DurableMap m(rt, cfg.buckets);
                for (std::uint64_t i = 0; i < cfg.n_payloads; ++i) {
                    m.put("k" + std::to_string(i), sized_value(cfg.value_bytes, i));
                    if (i % 4096 == 4095) rt.advance_epoch();
                }
                break;
            }
            case StructureKind::Graph: {
                DurableGraph g(rt);
                // one third vertices, two thirds edges between them
                std::uint64_t nv = std::max<std::uint64_t>(2, cfg.n_payloads / 3);
                std::uint64_t blocks = 0;
                for (std::uint64_t v = 0; v < nv; ++v, ++blocks) g.add_vertex(v, "");
                std::mt19937_64 rng(cfg.seed);
                while (blocks < cfg.n_payloads) {
                    if (g.add_edge(rng() % nv, rng() % nv, "")) ++blocks;
                    if (blocks % 4096 == 4095) rt.advance_epoch();
                }
                break;
            }
        }
        rt.close();
        if (sim) image = sim->crash_image(cfg.seed);
    }
    return image;
}

// One timed reopen + recover + k-sharded rebuild against a prepared crash
// image (sim) or the heap file at cfg.heap_path (file backend).
inline RecoveryRow time_recovery(const BenchConfig& cfg, unsigned k,
                                 std::vector<std::uint8_t> image) {
    RecoveryRow row;
    row.structure = structure_name(cfg.structure);
    row.n_payloads = cfg.n_payloads;
    row.value_bytes = cfg.value_bytes;
    row.k = k;

    const auto t0 = std::chrono::steady_clock::now();
    Heap h = cfg.backend == "sim" ? Heap::open(std::make_unique<SimBackend>(std::move(image)))
                                  : Heap::open(FileBackend::open(cfg.heap_path));
    RecoveredSet rs = recover(h);
    RuntimeOptions ro;
    ro.advancer.mode = AdvanceMode::Manual;
    EpochRuntime rt(std::move(h), ro);
    std::size_t rebuilt = 0;
    switch (cfg.structure) {
        case StructureKind::Queue: {
            DurableQueue q(rt, rs, k);
            rebuilt = q.size();
            break;
        }
        case StructureKind::Map: {
            DurableMap m(rt, cfg.buckets, rs, k);
            rebuilt = m.size();
            break;
        }
        case StructureKind::Graph: {
            DurableGraph g(rt, rs, k);
            GraphAbstract a = g.dump_abstract();
            rebuilt = a.vertices.size() + a.edges.size();
            break;
        }
    }
    const auto t1 = std::chrono::steady_clock::now();
    row.recover_seconds = std::chrono::duration<double>(t1 - t0).count();
    row.verified = rebuilt == cfg.n_payloads && rs.size() == cfg.n_payloads;
    rt.close();
    return row;
}

}  // namespace bench_detail

// Populates a structure with n_payloads blocks, shuts the store down, reopens
// the persistent bytes, and times recovery plus the k-sharded rebuild.
inline RecoveryRow run_recovery(const BenchConfig& cfg) {
    using namespace bench_detail;
    return time_recovery(cfg, cfg.shards, populate_recovery_image(cfg));
}

// Populates once, then times recovery at each rebuild parallelism in ks
// against the same crash image (or heap file), one row per k.
inline std::vector<RecoveryRow> run_recovery_sweep(const BenchConfig& cfg,
                                                   const std::vector<unsigned>& ks) {
    using namespace bench_detail;
    const std::vector<std::uint8_t> image = populate_recovery_image(cfg);
    std::vector<RecoveryRow> rows;
    rows.reserve(ks.size());
    for (unsigned k : ks) rows.push_back(time_recovery(cfg, k, image));
    return rows;
}

}  // namespace epochstore
