#pragma once

#include <deque>
#include <optional>
#include <thread>

#include "epochstore/codec.hpp"
#include "epochstore/oplog.hpp"
#include "epochstore/recovery.hpp"
#include "epochstore/runtime.hpp"

namespace epochstore {

// Durable FIFO queue. One global lock orders operations; each node is one
// payload block carrying a strictly increasing index, so a rebuild can
// restore FIFO order by sorting. The transient deque only holds block
// references — values live in the payload blocks.
class DurableQueue {
  public:
    explicit DurableQueue(EpochRuntime& rt, OpLogger* log = nullptr)
        : rt_(rt), log_(log) {}

    // Rebuild from recovered blocks using k shard readers.
    DurableQueue(EpochRuntime& rt, const RecoveredSet& rs, unsigned k = 1,
                 OpLogger* log = nullptr)
        : rt_(rt), log_(log) {
        std::vector<std::vector<Node>> parts(k);
        auto load = [&](unsigned i) {
            for (const RecoveredBlock& rb : rs.shard(i, k)) {
                const std::uint8_t* p = rt_.payload_ptr(rb.ref);
                if (payload_kind(p, rb.hdr.payload_len) != PayloadKind::Queue) continue;
                parts[i].push_back({rb.ref, decode_queue_node(p, rb.hdr.payload_len).index});
            }
        };
        run_sharded(load, k);
        std::vector<Node> all;
        for (auto& p : parts) all.insert(all.end(), p.begin(), p.end());
        std::sort(all.begin(), all.end(),
                  [](const Node& l, const Node& r) { return l.index < r.index; });
        q_.assign(all.begin(), all.end());
        tail_index_ = all.empty() ? 0 : all.back().index;
    }

    void enqueue(std::string_view value) {
        std::lock_guard<std::mutex> g(mu_);
        Op op = rt_.begin_op();
        std::uint64_t idx = tail_index_ + 1;
        auto bytes = encode_queue_node(idx, value);
        BlockRef ref = rt_.pnew(op, static_cast<std::uint32_t>(bytes.size()), bytes.data());
        q_.push_back({ref, idx});
        tail_index_ = idx;
        if (log_) log_->log(OpCode::QEnq, op.epoch(), std::string(value), "", 0, 0, true, "");
    }

    std::optional<std::string> dequeue() {
        std::lock_guard<std::mutex> g(mu_);
        Op op = rt_.begin_op();
        if (q_.empty()) {
            if (log_) log_->log(OpCode::QDeq, op.epoch(), "", "", 0, 0, false, "");
            return std::nullopt;
        }
        Node n = q_.front();
        PayloadHeader h = rt_.header(n.ref);
        std::string value = decode_queue_node(rt_.payload_ptr(n.ref), h.payload_len).value;
        rt_.pdelete(op, n.ref);
        q_.pop_front();
        if (log_) log_->log(OpCode::QDeq, op.epoch(), "", "", 0, 0, true, value);
        return value;
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> g(mu_);
        return q_.size();
    }

    QueueAbstract dump_abstract() const {
        std::lock_guard<std::mutex> g(mu_);
        QueueAbstract out;
        out.reserve(q_.size());
        for (const Node& n : q_) {
            PayloadHeader h = rt_.header(n.ref);
            out.push_back(decode_queue_node(rt_.payload_ptr(n.ref), h.payload_len).value);
        }
        return out;
    }

  private:
    struct Node {
        BlockRef ref;
        std::uint64_t index;
    };

    EpochRuntime& rt_;
    OpLogger* log_;
    mutable std::mutex mu_;
    std::deque<Node> q_;
    std::uint64_t tail_index_ = 0;
};

}  // namespace epochstore
