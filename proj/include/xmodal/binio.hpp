#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "xmodal/common.hpp"

namespace xmodal {

// Little-endian binary writer over a whole file. Values are written via
// memcpy of their native representation; all supported targets are LE.
class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot open for writing: " + path);
    }

    void magic(const char tag[5]) { raw(tag, 4); }
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }

    void f32_array(const float* p, size_t n) { raw(p, n * 4); }
    void f64_array(const double* p, size_t n) { raw(p, n * 8); }

    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }

    uint64_t offset() const { return offset_; }

    void close() {
        out_.close();
        if (!out_) throw IoError("write failed: " + path_);
    }

private:
    void raw(const void* p, size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!out_) throw IoError("write failed: " + path_);
        offset_ += n;
    }

    std::string path_;
    std::ofstream out_;
    uint64_t offset_ = 0;
};

// Reader with fail-closed semantics: any short read or magic mismatch
// throws FormatError carrying the offending byte offset.
class BinaryReader {
public:
    explicit BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open for reading: " + path);
    }

    void expect_magic(const char tag[5]) {
        char buf[4];
        const uint64_t at = offset_;
        raw(buf, 4, "magic");
        if (std::memcmp(buf, tag, 4) != 0) {
            throw FormatError("bad magic: expected '" + std::string(tag, 4) + "', found '" +
                                  std::string(buf, 4) + "' in " + path_,
                              at);
        }
    }

    uint8_t u8() { return scalar<uint8_t>("u8"); }
    uint32_t u32() { return scalar<uint32_t>("u32"); }
    uint64_t u64() { return scalar<uint64_t>("u64"); }
    float f32() { return scalar<float>("f32"); }
    double f64() { return scalar<double>("f64"); }

    void f32_array(float* p, size_t n) { raw(p, n * 4, "f32 array"); }
    void f64_array(double* p, size_t n) { raw(p, n * 8, "f64 array"); }

    std::string str() {
        const uint32_t n = u32();
        std::string s(n, '\0');
        raw(s.data(), n, "string payload");
        return s;
    }

    uint64_t offset() const { return offset_; }

    // True when every byte has been consumed.
    bool at_end() {
        in_.peek();
        return in_.eof();
    }

    void expect_end() {
        if (!at_end()) throw FormatError("trailing bytes in " + path_, offset_);
    }

private:
    template <typename T>
    T scalar(const char* what) {
        T v;
        raw(&v, sizeof v, what);
        return v;
    }

    void raw(void* p, size_t n, const char* what) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_.gcount()) != n) {
            throw FormatError("truncated file " + path_ + ": expected " + std::to_string(n) +
                                  " bytes of " + what,
                              offset_);
        }
        offset_ += n;
    }

    std::string path_;
    std::ifstream in_;
    uint64_t offset_ = 0;
};

}  // namespace xmodal
