#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dpar/common.hpp"

namespace dpar {

// Little-endian binary primitives shared by the token, cache and checkpoint
// formats.

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename U>
void write_le(std::ostream& os, U v) {
    unsigned char buf[sizeof(U)];
    for (size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    write_bytes(os, buf, sizeof(U));
}

inline void write_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_le<uint32_t>(os, bits);
}

inline void read_bytes(std::istream& is, void* p, size_t n, const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw ValidationError(std::string("truncated payload while reading ") + what);
}

template <typename U>
U read_le(std::istream& is, const char* what) {
    unsigned char buf[sizeof(U)];
    read_bytes(is, buf, sizeof(U), what);
    U v = 0;
    for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

inline float read_f32(std::istream& is, const char* what) {
    uint32_t bits = read_le<uint32_t>(is, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void expect_magic(std::istream& is, const char magic[4], const char* format) {
    char buf[4];
    read_bytes(is, buf, 4, format);
    if (std::memcmp(buf, magic, 4) != 0)
        throw ValidationError(std::string("bad magic for ") + format + " file");
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open for writing: " + path);
    return os;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open for reading: " + path);
    return is;
}

}  // namespace dpar
