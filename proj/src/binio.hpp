// SPDX-License-Identifier: Apache-2.0
// Little-endian scalar packing shared by the payload writers.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace biflow::binio {

static_assert(std::endian::native == std::endian::little, "payload IO assumes a little-endian host");

inline void put_f32(std::vector<std::uint8_t>& out, double v) {
    const float f = static_cast<float>(v);
    std::uint8_t b[4];
    std::memcpy(b, &f, 4);
    out.insert(out.end(), b, b + 4);
}

inline void put_i32(std::vector<std::uint8_t>& out, std::int32_t v) {
    std::uint8_t b[4];
    std::memcpy(b, &v, 4);
    out.insert(out.end(), b, b + 4);
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint8_t b[8];
    std::memcpy(b, &v, 8);
    out.insert(out.end(), b, b + 8);
}

inline float get_f32(const std::uint8_t* p) {
    float f;
    std::memcpy(&f, p, 4);
    return f;
}

inline std::int32_t get_i32(const std::uint8_t* p) {
    std::int32_t v;
    std::memcpy(&v, p, 4);
    return v;
}

inline double get_f64(const std::uint8_t* p) {
    double v;
    std::memcpy(&v, p, 8);
    return v;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

}  // namespace biflow::binio
