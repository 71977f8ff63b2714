// Command-line benchmark driver. Emits CSV: one header plus one row per
// measurement (rows append when --out names an existing non-empty file, so
// sweeps concatenate cleanly).
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "epochstore/bench.hpp"

using namespace epochstore;

namespace {

[[noreturn]] void usage(int code) {
    std::cerr <<
        "usage: bench_cli [options]\n"
        "  --mode throughput|recovery   what to measure (default throughput)\n"
        "  --structure queue|map|graph  structure under test (default map)\n"
        "  --mix MIX                    workload mix; map: mixed|put|get or a\n"
        "                               get:insert:remove ratio like 18:1:1 or 2:1:1,\n"
        "                               queue: enqdeq, graph: edges\n"
        "  --value-bytes N              payload value size (default 64)\n"
        "  --key-range N                distinct keys / vertex ids (default 4096)\n"
        "  --buckets N                  map bucket count (default 1024)\n"
        "  --threads N                  worker threads (default 4)\n"
        "  --seconds F                  wall-clock budget (default 1.0)\n"
        "  --ops N                      fixed op budget; overrides --seconds\n"
        "  --advance-every-ops N        deterministic epoch length in ops\n"
        "  --strategy direct|buffered|perepoch   write-back policy (default perepoch)\n"
        "  --epoch-ms F                 background epoch period (default 50)\n"
        "  --backend sim|file           persistence backend (default sim)\n"
        "  --heap-path PATH             file backend path (default bench_heap.dat)\n"
        "  --heap-bytes N               heap size in bytes (default 67108864;\n"
        "                               recovery mode sizes to fit --n-payloads when unset)\n"
        "  --seed N                     workload seed (default 1)\n"
        "  --n-payloads N               recovery mode: blocks to rebuild (default 100000)\n"
        "  --shards K[,K...]            recovery mode: rebuild parallelism sweep,\n"
        "                               one row per K (default 1,2,4,8)\n"
        "  --out PATH                   append CSV here instead of stdout\n"
        "  --help                       this text\n";
    std::exit(code);
}

struct Args {
    BenchConfig cfg;
    std::string mode = "throughput";
    std::string out;
    bool mix_set = false;
    bool heap_set = false;
    std::vector<unsigned> shards;  // recovery sweep; defaulted below
};

Args parse(int argc, char** argv) {
    Args a;
    auto need = [&](int& i) -> std::string {
        if (i + 1 >= argc) {
            std::cerr << argv[i] << " requires a value\n";
            usage(2);
        }
        return argv[++i];
    };
    for (int i = 1; i < argc; ++i) {
        std::string f = argv[i];
        try {
            if (f == "--help" || f == "-h") usage(0);
            else if (f == "--mode") a.mode = need(i);
            else if (f == "--structure") a.cfg.structure = parse_structure(need(i));
            else if (f == "--mix") { a.cfg.mix = need(i); a.mix_set = true; }
            else if (f == "--value-bytes") a.cfg.value_bytes = std::stoull(need(i));
            else if (f == "--key-range") a.cfg.key_range = std::stoull(need(i));
            else if (f == "--buckets") a.cfg.buckets = std::stoull(need(i));
            else if (f == "--threads") a.cfg.threads = unsigned(std::stoul(need(i)));
            else if (f == "--seconds") a.cfg.seconds = std::stod(need(i));
            else if (f == "--ops") a.cfg.ops = std::stoull(need(i));
            else if (f == "--advance-every-ops") a.cfg.advance_every_ops = std::stoull(need(i));
            else if (f == "--strategy") a.cfg.strategy = parse_strategy(need(i));
            else if (f == "--epoch-ms") a.cfg.epoch_ms = std::stod(need(i));
            else if (f == "--backend") a.cfg.backend = need(i);
            else if (f == "--heap-path") a.cfg.heap_path = need(i);
            else if (f == "--heap-bytes") { a.cfg.heap_bytes = std::stoull(need(i)); a.heap_set = true; }
            else if (f == "--seed") a.cfg.seed = std::stoull(need(i));
            else if (f == "--n-payloads") a.cfg.n_payloads = std::stoull(need(i));
            else if (f == "--shards") {
                a.shards.clear();
                std::stringstream ss(need(i));
                for (std::string part; std::getline(ss, part, ',');)
                    a.shards.push_back(unsigned(std::stoul(part)));
            }
            else if (f == "--out") a.out = need(i);
            else {
                std::cerr << "unknown option " << f << "\n";
                usage(2);
            }
        } catch (const std::invalid_argument&) {
            std::cerr << "bad value for " << f << "\n";
            usage(2);
        }
    }
    if (a.cfg.threads == 0) {
        std::cerr << "--threads must be at least 1\n";
        usage(2);
    }
    for (unsigned k : a.shards)
        if (k == 0) {
            std::cerr << "--shards values must be at least 1\n";
            usage(2);
        }
    if (a.shards.empty()) a.shards = {1, 2, 4, 8};
    if (a.mode == "recovery" && !a.heap_set) size_recovery_heap(a.cfg);
    if (!a.mix_set) {
        switch (a.cfg.structure) {
            case StructureKind::Queue: a.cfg.mix = "enqdeq"; break;
            case StructureKind::Map: a.cfg.mix = "mixed"; break;
            case StructureKind::Graph: a.cfg.mix = "edges"; break;
        }
    }
    return a;
}

void emit(const std::string& out, const std::string& header,
          const std::vector<std::string>& rows) {
    if (out.empty()) {
        std::cout << header << "\n";
        for (const std::string& r : rows) std::cout << r << "\n";
        return;
    }
    std::error_code ec;
    bool fresh = !std::filesystem::exists(out, ec) || std::filesystem::file_size(out, ec) == 0;
    std::ofstream f(out, std::ios::app);
    if (!f) {
        std::cerr << "cannot open " << out << "\n";
        std::exit(1);
    }
    if (fresh) f << header << "\n";
    for (const std::string& r : rows) f << r << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    Args a = parse(argc, argv);
    try {
        if (a.mode == "throughput") {
            ThroughputRow row = run_throughput(a.cfg);
            emit(a.out, throughput_csv_header(), {csv_line(row)});
        } else if (a.mode == "recovery") {
            std::vector<RecoveryRow> rows = run_recovery_sweep(a.cfg, a.shards);
            std::vector<std::string> lines;
            bool bad = false;
            for (const RecoveryRow& row : rows) {
                bad = bad || !row.verified;
                lines.push_back(csv_line(row));
            }
            emit(a.out, recovery_csv_header(), lines);
            if (bad) {
                std::cerr << "recovery rebuilt an unexpected number of entries\n";
                return 1;
            }
        } else {
            std::cerr << "unknown mode " << a.mode << "\n";
            usage(2);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
