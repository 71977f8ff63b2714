#pragma once

#include <cstring>
#include <mutex>
#include <random>
#include <vector>

#include "epochstore/backend.hpp"
#include "epochstore/geometry.hpp"

namespace epochstore {

// Crash-simulating backend. Keeps a cache image and a persistent image with
// per-line state:
//   clean   — cache line equals the persistent image
//   dirty   — stored to but not yet written back
//   pending — written back, not yet committed by a fence
// A crash commits an arbitrary subset of dirty|pending lines on top of the
// persistent image; lines are atomic (a sampled line appears whole).
struct SimBackendOptions {
    bool record_events = false;
    // clwb-style modeling knob: count write-backs as evictions. No
    // functional effect (the cache image must stay readable); default off.
    bool evict_on_write_back = false;
};

class SimBackend final : public PersistenceBackend {
  public:
    enum class LineState : std::uint8_t { Clean = 0, Dirty = 1, Pending = 2 };

    using Options = SimBackendOptions;

    explicit SimBackend(std::size_t bytes, Options opt = {})
        : opt_(opt),
          cache_(bytes, 0),
          persist_(bytes, 0),
          lines_((bytes + kLineBytes - 1) / kLineBytes, LineState::Clean) {}

    // Boot from existing content (e.g. a crash image), everything clean.
    explicit SimBackend(std::vector<std::uint8_t> bytes, Options opt = {})
        : opt_(opt),
          cache_(bytes),
          persist_(std::move(bytes)),
          lines_((cache_.size() + kLineBytes - 1) / kLineBytes, LineState::Clean) {}

    std::size_t size() const override { return cache_.size(); }
    const std::uint8_t* data() const override { return cache_.data(); }

    void store(std::uint64_t off, const void* src, std::size_t n) override {
        if (n == 0) return;
        check_range(off, n);
        std::lock_guard<std::mutex> g(mu_);
        std::memcpy(cache_.data() + off, src, n);
        std::uint64_t first = off / kLineBytes, last = (off + n - 1) / kLineBytes;
        for (std::uint64_t l = first; l <= last; ++l)
            if (lines_[l] == LineState::Clean || lines_[l] == LineState::Pending)
                lines_[l] = LineState::Dirty;
        if (opt_.record_events) {
            BackendEvent e{BackendEvent::Store, first, last, 0, seq_++};
            if (n == 8) std::memcpy(&e.value, src, 8);
            events_.push_back(e);
        }
    }

    void write_back(std::uint64_t off, std::uint64_t len) override {
        if (len == 0) return;
        check_range(off, len);
        std::lock_guard<std::mutex> g(mu_);
        std::uint64_t first = off / kLineBytes, last = (off + len - 1) / kLineBytes;
        for (std::uint64_t l = first; l <= last; ++l)
            if (lines_[l] == LineState::Dirty) lines_[l] = LineState::Pending;
        counters_.writes_back.fetch_add(1, std::memory_order_relaxed);
        counters_.lines_flushed.fetch_add(last - first + 1, std::memory_order_relaxed);
        if (opt_.evict_on_write_back)
            evictions_ += last - first + 1;
        if (opt_.record_events)
            events_.push_back({BackendEvent::WriteBack, first, last, 0, seq_++});
    }

    void fence() override {
        std::lock_guard<std::mutex> g(mu_);
        for (std::uint64_t l = 0; l < lines_.size(); ++l) {
            if (lines_[l] == LineState::Pending) {
                commit_line(l);
                lines_[l] = LineState::Clean;
            }
        }
        counters_.fences.fetch_add(1, std::memory_order_relaxed);
        if (opt_.record_events)
            events_.push_back({BackendEvent::Fence, 0, 0, 0, seq_++});
    }

    bool supports_crash_images() const override { return true; }

    // Persistent image plus a seeded per-line coin flip over dirty|pending.
    std::vector<std::uint8_t> crash_image(std::uint64_t seed) override {
        std::lock_guard<std::mutex> g(mu_);
        std::vector<std::uint8_t> img = persist_;
        std::mt19937_64 rng(seed);
        for (std::uint64_t l = 0; l < lines_.size(); ++l)
            if (lines_[l] != LineState::Clean && (rng() & 1))
                copy_line(img, l);
        return img;
    }

    // All 2^n crash images when few lines are unstable; refuses past a bound.
    std::vector<std::vector<std::uint8_t>> enumerate_crash_images(unsigned max_lines = 12) {
        std::lock_guard<std::mutex> g(mu_);
        std::vector<std::uint64_t> unstable;
        for (std::uint64_t l = 0; l < lines_.size(); ++l)
            if (lines_[l] != LineState::Clean) unstable.push_back(l);
        if (unstable.size() > max_lines)
            throw UnsupportedError("too many unstable lines for exhaustive crash enumeration");
        std::vector<std::vector<std::uint8_t>> out;
        for (std::uint64_t mask = 0; mask < (1ull << unstable.size()); ++mask) {
            std::vector<std::uint8_t> img = persist_;
            for (std::size_t i = 0; i < unstable.size(); ++i)
                if (mask & (1ull << i)) copy_line(img, unstable[i]);
            out.push_back(std::move(img));
        }
        return out;
    }

    LineState line_state(std::uint64_t line) const {
        std::lock_guard<std::mutex> g(mu_);
        return lines_.at(line);
    }

    bool range_clean(std::uint64_t off, std::uint64_t len) const {
        if (len == 0) return true;
        std::lock_guard<std::mutex> g(mu_);
        std::uint64_t first = off / kLineBytes, last = (off + len - 1) / kLineBytes;
        for (std::uint64_t l = first; l <= last; ++l)
            if (lines_[l] != LineState::Clean) return false;
        return true;
    }

    std::uint64_t unstable_line_count() const {
        std::lock_guard<std::mutex> g(mu_);
        std::uint64_t n = 0;
        for (auto s : lines_)
            if (s != LineState::Clean) ++n;
        return n;
    }

    const std::vector<std::uint8_t>& persistent_image() const { return persist_; }
    std::uint64_t evictions() const { return evictions_; }

    bool recording_events() const { return opt_.record_events; }
    std::vector<BackendEvent> events_snapshot() const {
        std::lock_guard<std::mutex> g(mu_);
        return events_;
    }
    std::uint64_t event_seq() const override {
        std::lock_guard<std::mutex> g(mu_);
        return seq_;
    }

  private:
    void check_range(std::uint64_t off, std::uint64_t len) const {
        if (off + len > cache_.size())
            throw IoError("access beyond backend size");
    }
    void commit_line(std::uint64_t l) { copy_line(persist_, l); }
    void copy_line(std::vector<std::uint8_t>& dst, std::uint64_t l) const {
        std::uint64_t off = l * kLineBytes;
        std::uint64_t n = std::min<std::uint64_t>(kLineBytes, cache_.size() - off);
        std::memcpy(dst.data() + off, cache_.data() + off, n);
    }

    Options opt_;
    mutable std::mutex mu_;
    std::vector<std::uint8_t> cache_;
    std::vector<std::uint8_t> persist_;
    std::vector<LineState> lines_;
    std::vector<BackendEvent> events_;
    std::uint64_t seq_ = 0;
    std::uint64_t evictions_ = 0;
};

}  // namespace epochstore
