#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <type_traits>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "errors.hpp"

namespace orbitloc {

namespace fs = std::filesystem;

inline std::vector<std::uint8_t> read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw missing_artifact_error("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string read_text(const fs::path& path)
{
    const auto bytes = read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

/// Writes through a sibling temp file and renames it into place, so readers
/// never observe a partial file.
inline void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    static std::atomic<unsigned long> counter{0};
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw error(error_category::data, "cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw error(error_category::data, "short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline void write_text_atomic(const fs::path& path, const std::string& text)
{
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Little-endian encoding helpers for the binary stores.
namespace le {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v)
{
    std::uint64_t u = 0;
    if constexpr (std::is_same_v<T, float>) {
        std::uint32_t b;
        std::memcpy(&b, &v, 4);
        u = b;
    } else if constexpr (std::is_same_v<T, double>) {
        std::memcpy(&u, &v, 8);
    } else {
        u = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

template <typename T>
T get(std::span<const std::uint8_t> in, std::size_t& pos)
{
    if (pos + sizeof(T) > in.size())
        throw corruption_error("truncated binary record");
    std::uint64_t u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        u |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
    pos += sizeof(T);
    if constexpr (std::is_same_v<T, float>) {
        const auto b = static_cast<std::uint32_t>(u);
        float f;
        std::memcpy(&f, &b, 4);
        return f;
    } else if constexpr (std::is_same_v<T, double>) {
        double d;
        std::memcpy(&d, &u, 8);
        return d;
    } else {
        return static_cast<T>(u);
    }
}

} // namespace le

} // namespace orbitloc
