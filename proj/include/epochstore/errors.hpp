#pragma once

#include <stdexcept>
#include <string>

namespace epochstore {

// Base for everything the heap/runtime can throw at runtime.
struct Error : std::runtime_error {
    explicit Error(const std::string& m) : std::runtime_error(m) {}
};

struct IoError : Error {
    explicit IoError(const std::string& m) : Error("io failure: " + m) {}
};

struct GeometryError : Error {
    explicit GeometryError(const std::string& m) : Error("invalid geometry: " + m) {}
};

struct SuperblockError : Error {
    explicit SuperblockError(const std::string& m) : Error("bad superblock: " + m) {}
};

struct OutOfMemoryError : Error {
    explicit OutOfMemoryError(const std::string& m) : Error("heap out of memory: " + m) {}
};

struct OversizeError : Error {
    explicit OversizeError(const std::string& m) : Error("oversized allocation: " + m) {}
};

struct DoubleFreeError : Error {
    explicit DoubleFreeError(const std::string& m) : Error("double free: " + m) {}
};

struct CorruptImageError : Error {
    explicit CorruptImageError(const std::string& m) : Error("corrupt image: " + m) {}
};

struct UnsupportedError : Error {
    explicit UnsupportedError(const std::string& m) : Error("unsupported: " + m) {}
};

// API misuse (nested begin_op, end without begin, ...). Programming error,
// not an environmental one.
struct StateError : std::logic_error {
    explicit StateError(const std::string& m) : std::logic_error(m) {}
};

// An operation touched a payload labeled with a newer epoch than its own.
// Deliberately cheap: thrown on hot paths of nonblocking callers.
struct OldSeeNewError : std::exception {
    const char* what() const noexcept override { return "old-see-new: payload epoch exceeds op_epoch"; }
};

// check_epoch / epoch_verified_cas observed that the clock moved past op_epoch.
struct EpochAdvancedError : std::exception {
    const char* what() const noexcept override { return "epoch advanced past op_epoch"; }
};

}  // namespace epochstore
