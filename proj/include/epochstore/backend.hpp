#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "epochstore/errors.hpp"

namespace epochstore {

struct BackendCounters {
    std::atomic<std::uint64_t> writes_back{0};   // write_back calls
    std::atomic<std::uint64_t> fences{0};        // fence calls
    std::atomic<std::uint64_t> lines_flushed{0}; // lines covered by write_back ranges

    struct Snapshot {
        std::uint64_t writes_back = 0;
        std::uint64_t fences = 0;
        std::uint64_t lines_flushed = 0;
    };
    Snapshot snapshot() const {
        return {writes_back.load(), fences.load(), lines_flushed.load()};
    }
};

// Event log used by the persist-ordering audits; recorded only when enabled.
struct BackendEvent {
    enum Kind : std::uint8_t { Store = 1, WriteBack = 2, Fence = 3 };
    Kind kind;
    std::uint64_t line_first = 0;  // line indices covered (Store/WriteBack)
    std::uint64_t line_last = 0;
    std::uint64_t value = 0;       // payload of 8-byte stores (clock/uid lines)
    std::uint64_t seq = 0;
};

// A persistence device with explicit cache-line granularity. All content
// mutation goes through store(); write_back()/fence() move lines toward the
// persistent image. data() exposes current (cache-side) contents for reads.
class PersistenceBackend {
  public:
    virtual ~PersistenceBackend() = default;

    virtual std::size_t size() const = 0;
    virtual const std::uint8_t* data() const = 0;

    virtual void store(std::uint64_t off, const void* src, std::size_t n) = 0;
    virtual void write_back(std::uint64_t off, std::uint64_t len) = 0;
    virtual void fence() = 0;

    const BackendCounters& counters() const { return counters_; }

    // Simulator-only surface; real backends refuse.
    virtual bool supports_crash_images() const { return false; }
    virtual std::vector<std::uint8_t> crash_image(std::uint64_t /*seed*/) {
        throw UnsupportedError("crash images require the simulator backend");
    }

    // Monotone cursor into the recorded event log; 0 when not recording.
    virtual std::uint64_t event_seq() const { return 0; }

  protected:
    BackendCounters counters_;
};

}  // namespace epochstore
