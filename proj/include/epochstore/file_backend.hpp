#pragma once

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <mutex>
#include <string>
#include <vector>

#include "epochstore/backend.hpp"
#include "epochstore/geometry.hpp"

namespace epochstore {

// Memory-mapped file backend. store() writes the mapping directly;
// write_back() records ranges; fence() msyncs the recorded ranges.
class FileBackend final : public PersistenceBackend {
  public:
    static std::unique_ptr<FileBackend> create(const std::string& path, std::uint64_t bytes) {
        int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_TRUNC, 0644);
        if (fd < 0) throw IoError(path + ": " + std::strerror(errno));
        if (::ftruncate(fd, static_cast<off_t>(bytes)) != 0) {
            int e = errno;
            ::close(fd);
            throw IoError(path + ": ftruncate: " + std::strerror(e));
        }
        return std::unique_ptr<FileBackend>(new FileBackend(fd, bytes, path));
    }

    static std::unique_ptr<FileBackend> open(const std::string& path) {
        int fd = ::open(path.c_str(), O_RDWR);
        if (fd < 0) throw IoError(path + ": " + std::strerror(errno));
        struct stat st {};
        if (::fstat(fd, &st) != 0) {
            int e = errno;
            ::close(fd);
            throw IoError(path + ": fstat: " + std::strerror(e));
        }
        return std::unique_ptr<FileBackend>(
            new FileBackend(fd, static_cast<std::uint64_t>(st.st_size), path));
    }

    ~FileBackend() override {
        if (map_ != MAP_FAILED) ::munmap(map_, bytes_);
        if (fd_ >= 0) ::close(fd_);
    }

    std::size_t size() const override { return bytes_; }
    const std::uint8_t* data() const override { return static_cast<const std::uint8_t*>(map_); }

    void store(std::uint64_t off, const void* src, std::size_t n) override {
        if (n == 0) return;
        if (off + n > bytes_) throw IoError("store beyond file size");
        std::memcpy(static_cast<std::uint8_t*>(map_) + off, src, n);
    }

    void write_back(std::uint64_t off, std::uint64_t len) override {
        if (len == 0) return;
        if (off + len > bytes_) throw IoError("write_back beyond file size");
        std::uint64_t first = off / kLineBytes, last = (off + len - 1) / kLineBytes;
        {
            std::lock_guard<std::mutex> g(mu_);
            ranges_.emplace_back(off, len);
        }
        counters_.writes_back.fetch_add(1, std::memory_order_relaxed);
        counters_.lines_flushed.fetch_add(last - first + 1, std::memory_order_relaxed);
    }

    void fence() override {
        std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
        {
            std::lock_guard<std::mutex> g(mu_);
            ranges.swap(ranges_);
        }
        std::sort(ranges.begin(), ranges.end());
        std::uint64_t page = static_cast<std::uint64_t>(::sysconf(_SC_PAGESIZE));
        std::uint64_t lo = 0, hi = 0;
        bool open_range = false;
        auto flush = [&] {
            if (!open_range) return;
            std::uint64_t a = lo / page * page;
            std::uint64_t b = std::min<std::uint64_t>((hi + page - 1) / page * page, bytes_);
            if (::msync(static_cast<std::uint8_t*>(map_) + a, b - a, MS_SYNC) != 0)
                throw IoError(std::string("msync: ") + std::strerror(errno));
            open_range = false;
        };
        for (auto& [off, len] : ranges) {
            if (open_range && off <= hi + page) {
                hi = std::max(hi, off + len);
            } else {
                flush();
                lo = off;
                hi = off + len;
                open_range = true;
            }
        }
        flush();
        counters_.fences.fetch_add(1, std::memory_order_relaxed);
    }

    const std::string& path() const { return path_; }

  private:
    FileBackend(int fd, std::uint64_t bytes, std::string path)
        : fd_(fd), bytes_(bytes), path_(std::move(path)) {
        map_ = ::mmap(nullptr, bytes_, PROT_READ | PROT_WRITE, MAP_SHARED, fd_, 0);
        if (map_ == MAP_FAILED) {
            int e = errno;
            ::close(fd_);
            fd_ = -1;
            throw IoError(path_ + ": mmap: " + std::strerror(e));
        }
    }

    int fd_ = -1;
    std::uint64_t bytes_ = 0;
    std::string path_;
    void* map_ = MAP_FAILED;
    std::mutex mu_;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges_;
};

}  // namespace epochstore
