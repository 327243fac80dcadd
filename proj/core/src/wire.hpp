#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

namespace segnn::wire {

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
    const unsigned char bytes[4] = {
        static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

inline std::uint32_t read_u32_le(std::istream& in) {
    unsigned char bytes[4] = {0, 0, 0, 0};
    in.read(reinterpret_cast<char*>(bytes), 4);
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) |
           (static_cast<std::uint32_t>(bytes[3]) << 24);
}

inline void write_u64_le(std::ostream& out, std::uint64_t v) {
    write_u32_le(out, static_cast<std::uint32_t>(v & 0xffffffffULL));
    write_u32_le(out, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t read_u64_le(std::istream& in) {
    const std::uint64_t lo = read_u32_le(in);
    const std::uint64_t hi = read_u32_le(in);
    return lo | (hi << 32);
}

inline void write_f32_le(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32_le(out, bits);
}

inline float read_f32_le(std::istream& in) {
    const std::uint32_t bits = read_u32_le(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void write_i32_le(std::ostream& out, std::int32_t v) {
    write_u32_le(out, static_cast<std::uint32_t>(v));
}

inline std::int32_t read_i32_le(std::istream& in) {
    return static_cast<std::int32_t>(read_u32_le(in));
}

}  // namespace segnn::wire
