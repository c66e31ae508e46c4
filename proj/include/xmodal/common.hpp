#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace xmodal {

// Violated precondition or API contract. Maps to process exit code 1.
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input that is structurally valid but has no meaningful result
// (zero vector, empty scene, empty caption).
class DegenerateInputError : public ContractError {
public:
    explicit DegenerateInputError(const std::string& msg) : ContractError(msg) {}
};

// Model/index fingerprint mismatch under a strict policy.
class CompatibilityError : public ContractError {
public:
    explicit CompatibilityError(const std::string& msg) : ContractError(msg) {}
};

// Retrieved id that cannot be dereferenced against the knowledge source.
class DataIntegrityError : public ContractError {
public:
    explicit DataIntegrityError(const std::string& msg) : ContractError(msg) {}
};

// Malformed or corrupt file. Maps to process exit code 2.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& msg, uint64_t offset)
        : std::runtime_error(msg + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    explicit FormatError(const std::string& msg) : std::runtime_error(msg), offset_(0) {}
    uint64_t offset() const { return offset_; }

private:
    uint64_t offset_;
};

// Filesystem-level failure (open/read/write). Maps to process exit code 2.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// 64-bit FNV-1a. Used for vocabulary hashing and model fingerprints.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

// Incremental fingerprint accumulator. Feed config bytes first, then
// parameter payloads in declared order.
class Fingerprint {
public:
    void update(const void* data, size_t len) { h_ = fnv1a64(data, len, h_); }
    void update_u32(uint32_t v) { update(&v, sizeof v); }
    void update_u64(uint64_t v) { update(&v, sizeof v); }
    void update_f64(double v) { update(&v, sizeof v); }
    void update_str(const std::string& s) {
        update_u64(s.size());
        update(s.data(), s.size());
    }
    uint64_t digest() const { return h_; }

private:
    uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::string hex_u64(uint64_t v);

}  // namespace xmodal
