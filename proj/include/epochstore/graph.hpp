#pragma once

#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <thread>

#include "epochstore/codec.hpp"
#include "epochstore/oplog.hpp"
#include "epochstore/recovery.hpp"
#include "epochstore/runtime.hpp"

namespace epochstore {

// Durable directed graph with attributed vertices and edges. Vertices are
// never deleted once added (clear_vertex removes incident edges only), so
// vertex states have stable addresses and a fixed lock per vertex suffices.
// Multi-vertex operations lock vertices in ascending id order under a shared
// table lock; membership changes take the table lock exclusively.
class DurableGraph {
  public:
    explicit DurableGraph(EpochRuntime& rt, OpLogger* log = nullptr)
        : rt_(rt), log_(log) {}

    // Two-pass rebuild: k shard readers install vertices first, buffering
    // edges per reader; the second pass attaches the buffered edges. Edges
    // whose endpoints did not survive are scrubbed from the heap.
    DurableGraph(EpochRuntime& rt, const RecoveredSet& rs, unsigned k = 1,
                 OpLogger* log = nullptr)
        : rt_(rt), log_(log) {
        struct PendingEdge {
            BlockRef ref;
            std::uint64_t src, dst;
        };
        std::vector<std::vector<PendingEdge>> buffers(k);
        std::mutex table_build_mu;
        auto pass1 = [&](unsigned i) {
            for (const RecoveredBlock& rb : rs.shard(i, k)) {
                const std::uint8_t* p = rt_.payload_ptr(rb.ref);
                PayloadKind kind = payload_kind(p, rb.hdr.payload_len);
                if (kind == PayloadKind::Vertex) {
                    VertexPayload v = decode_vertex(p, rb.hdr.payload_len);
                    std::lock_guard<std::mutex> g(table_build_mu);
                    verts_.try_emplace(v.id).first->second.ref = rb.ref;
                } else if (kind == PayloadKind::Edge) {
                    EdgePayload e = decode_edge(p, rb.hdr.payload_len);
                    buffers[i].push_back({rb.ref, e.src, e.dst});
                }
            }
        };
        auto pass2 = [&](unsigned i) {
            for (const PendingEdge& pe : buffers[i]) {
                auto si = verts_.find(pe.src);
                auto di = verts_.find(pe.dst);
                if (si == verts_.end() || di == verts_.end()) {
                    std::lock_guard<std::mutex> g(table_build_mu);
                    dangling_.push_back(pe.ref);
                    continue;
                }
                if (si == di) {
                    std::lock_guard<std::mutex> g(si->second.mu);
                    si->second.out[pe.dst] = pe.ref;
                    si->second.in.insert(pe.src);
                } else {
                    std::scoped_lock g(si->second.mu, di->second.mu);
                    si->second.out[pe.dst] = pe.ref;
                    di->second.in.insert(pe.src);
                }
            }
        };
        run_sharded(pass1, k);
        run_sharded(pass2, k);
        // Dangling edges cannot arise from this interface (an edge never
        // outlives its endpoints in any recoverable prefix) but arbitrary
        // images may contain them; drop them from the heap.
        for (BlockRef ref : dangling_) {
            rt_.heap().free_block(ref);
            rt_.heap().write_back(ref.offset, kHeaderLine);
            rt_.heap().recycle_block(ref);
        }
        if (!dangling_.empty()) rt_.heap().fence();
    }

    bool add_vertex(std::uint64_t id, std::string_view attr) {
        std::unique_lock<std::shared_mutex> tg(table_mu_);
        Op op = rt_.begin_op();
        bool inserted = false;
        auto [it, fresh] = verts_.try_emplace(id);
        if (fresh) {
            auto bytes = encode_vertex(id, attr);
            it->second.ref =
                rt_.pnew(op, static_cast<std::uint32_t>(bytes.size()), bytes.data());
            inserted = true;
        }
        if (log_)
            log_->log(OpCode::GAddV, op.epoch(), std::string(attr), "", id, 0, inserted, "");
        return inserted;
    }

    bool add_edge(std::uint64_t src, std::uint64_t dst, std::string_view attr) {
        std::shared_lock<std::shared_mutex> tg(table_mu_);
        auto si = verts_.find(src);
        auto di = verts_.find(dst);
        if (si == verts_.end() || di == verts_.end()) {
            Op op = rt_.begin_op();
            if (log_)
                log_->log(OpCode::GAddE, op.epoch(), std::string(attr), "", src, dst, false,
                          "");
            return false;
        }
        auto locks = lock_pair(si->second, di->second, src, dst);
        Op op = rt_.begin_op();
        bool added = false;
        if (!si->second.out.count(dst)) {
            auto bytes = encode_edge(src, dst, attr);
            si->second.out[dst] =
                rt_.pnew(op, static_cast<std::uint32_t>(bytes.size()), bytes.data());
            di->second.in.insert(src);
            added = true;
        }
        if (log_)
            log_->log(OpCode::GAddE, op.epoch(), std::string(attr), "", src, dst, added, "");
        return added;
    }

    bool rem_edge(std::uint64_t src, std::uint64_t dst) {
        std::shared_lock<std::shared_mutex> tg(table_mu_);
        auto si = verts_.find(src);
        auto di = verts_.find(dst);
        if (si == verts_.end() || di == verts_.end()) {
            Op op = rt_.begin_op();
            if (log_) log_->log(OpCode::GRemE, op.epoch(), "", "", src, dst, false, "");
            return false;
        }
        auto locks = lock_pair(si->second, di->second, src, dst);
        Op op = rt_.begin_op();
        bool existed = false;
        auto eit = si->second.out.find(dst);
        if (eit != si->second.out.end()) {
            rt_.pdelete(op, eit->second);
            si->second.out.erase(eit);
            di->second.in.erase(src);
            existed = true;
        }
        if (log_) log_->log(OpCode::GRemE, op.epoch(), "", "", src, dst, existed, "");
        return existed;
    }

    // Removes all edges incident to id (either direction) as one operation.
    // Lock acquisition: snapshot the neighbor set under the vertex lock,
    // acquire the whole set in ascending order, then revalidate the snapshot;
    // retry if a racing edge operation changed it.
    std::size_t clear_vertex(std::uint64_t id) {
        std::shared_lock<std::shared_mutex> tg(table_mu_);
        auto vi = verts_.find(id);
        if (vi == verts_.end()) {
            Op op = rt_.begin_op();
            if (log_) log_->log(OpCode::GClearV, op.epoch(), "", "", id, 0, false, "");
            return 0;
        }
        VertexState& v = vi->second;
        for (;;) {
            std::set<std::uint64_t> nbrs;
            {
                std::lock_guard<std::mutex> g(v.mu);
                for (const auto& [dst, ref] : v.out) nbrs.insert(dst);
                for (std::uint64_t src : v.in) nbrs.insert(src);
            }
            std::vector<std::uint64_t> order(nbrs.begin(), nbrs.end());
            order.push_back(id);
            std::sort(order.begin(), order.end());
            order.erase(std::unique(order.begin(), order.end()), order.end());
            std::vector<std::unique_lock<std::mutex>> held;
            held.reserve(order.size());
            for (std::uint64_t n : order) held.emplace_back(verts_.find(n)->second.mu);
            std::set<std::uint64_t> now;
            for (const auto& [dst, ref] : v.out) now.insert(dst);
            for (std::uint64_t src : v.in) now.insert(src);
            if (now != nbrs) continue;  // locks release; retry with new snapshot

            Op op = rt_.begin_op();
            std::size_t removed = 0;
            for (const auto& [dst, ref] : v.out) {
                rt_.pdelete(op, ref);
                verts_.find(dst)->second.in.erase(id);
                ++removed;
            }
            v.out.clear();
            for (std::uint64_t src : v.in) {
                VertexState& s = verts_.find(src)->second;
                auto eit = s.out.find(id);
                rt_.pdelete(op, eit->second);
                s.out.erase(eit);
                ++removed;
            }
            v.in.clear();
            if (log_)
                log_->log(OpCode::GClearV, op.epoch(), "", "", id, 0, true,
                          std::to_string(removed));
            return removed;
        }
    }

    std::optional<std::string> vertex_attr(std::uint64_t id) const {
        std::shared_lock<std::shared_mutex> tg(table_mu_);
        auto it = verts_.find(id);
        if (it == verts_.end()) return std::nullopt;
        PayloadHeader h = rt_.header(it->second.ref);
        return decode_vertex(rt_.payload_ptr(it->second.ref), h.payload_len).attr;
    }

    bool has_edge(std::uint64_t src, std::uint64_t dst) const {
        std::shared_lock<std::shared_mutex> tg(table_mu_);
        auto it = verts_.find(src);
        if (it == verts_.end()) return false;
        std::lock_guard<std::mutex> g(it->second.mu);
        return it->second.out.count(dst) > 0;
    }

    std::size_t vertex_count() const {
        std::shared_lock<std::shared_mutex> tg(table_mu_);
        return verts_.size();
    }

    GraphAbstract dump_abstract() const {
        std::unique_lock<std::shared_mutex> tg(table_mu_);
        GraphAbstract out;
        for (const auto& [id, v] : verts_) {
            PayloadHeader h = rt_.header(v.ref);
            out.vertices[id] = decode_vertex(rt_.payload_ptr(v.ref), h.payload_len).attr;
            for (const auto& [dst, ref] : v.out) {
                PayloadHeader eh = rt_.header(ref);
                out.edges[{id, dst}] = decode_edge(rt_.payload_ptr(ref), eh.payload_len).attr;
            }
        }
        return out;
    }

    // "src dst" per line; blank lines and lines starting with '#' ignored.
    // Vertices are the edge endpoints, all attributes empty.
    void bulk_load_text(std::string_view text) {
        std::istringstream in{std::string(text)};
        std::vector<std::pair<std::uint64_t, std::uint64_t>> edges;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ls(line);
            std::uint64_t s, d;
            if (ls >> s >> d) edges.emplace_back(s, d);
        }
        bulk_load_edges(edges);
    }

    void bulk_load_edges(const std::vector<std::pair<std::uint64_t, std::uint64_t>>& edges) {
        for (const auto& [s, d] : edges) {
            add_vertex(s, "");
            add_vertex(d, "");
        }
        for (const auto& [s, d] : edges) add_edge(s, d, "");
    }

    // Independent statement of what bulk_load_text builds, for comparisons.
    static GraphAbstract parse_edge_list(std::string_view text) {
        GraphAbstract out;
        std::istringstream in{std::string(text)};
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ls(line);
            std::uint64_t s, d;
            if (!(ls >> s >> d)) continue;
            out.vertices[s] = "";
            out.vertices[d] = "";
            out.edges[{s, d}] = "";
        }
        return out;
    }

  private:
    struct VertexState {
        BlockRef ref;
        std::map<std::uint64_t, BlockRef> out;  // dst -> edge block
        std::set<std::uint64_t> in;             // reverse index for clears
        mutable std::mutex mu;
    };

    // Locks one or two vertex mutexes in ascending id order.
    static std::vector<std::unique_lock<std::mutex>> lock_pair(VertexState& a,
                                                               VertexState& b,
                                                               std::uint64_t ida,
                                                               std::uint64_t idb) {
        std::vector<std::unique_lock<std::mutex>> held;
        if (ida == idb) {
            held.emplace_back(a.mu);
        } else if (ida < idb) {
            held.emplace_back(a.mu);
            held.emplace_back(b.mu);
        } else {
            held.emplace_back(b.mu);
            held.emplace_back(a.mu);
        }
        return held;
    }


    EpochRuntime& rt_;
    OpLogger* log_;
    mutable std::shared_mutex table_mu_;
    std::map<std::uint64_t, VertexState> verts_;
    std::vector<BlockRef> dangling_;
};

}  // namespace epochstore
