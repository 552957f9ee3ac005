#pragma once

// Little-endian byte-level helpers shared by the dataset, vocabulary and index
// containers. Values are composed byte by byte so files are identical on any host.

#include <abow/errors.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace abow::detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

class ByteWriter {
public:
    void magic(std::string_view tag) { buf_.insert(buf_.end(), tag.begin(), tag.end()); }

    void u16(std::uint16_t v) {
        buf_.push_back(static_cast<std::uint8_t>(v));
        buf_.push_back(static_cast<std::uint8_t>(v >> 8));
    }

    void u32(std::uint32_t v) {
        for (int s = 0; s < 32; s += 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
    }

    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint64_t offset() const noexcept { return pos_; }
    std::uint64_t remaining() const noexcept { return bytes_.size() - pos_; }
    bool at_end() const noexcept { return pos_ == bytes_.size(); }

    void expect_magic(std::string_view tag) {
        if (remaining() < tag.size() ||
            std::memcmp(bytes_.data() + pos_, tag.data(), tag.size()) != 0) {
            throw FormatError(pos_, "missing magic '" + std::string(tag) + "'");
        }
        pos_ += tag.size();
    }

    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    float f32(const char* what) {
        const auto at = pos_;
        const float v = std::bit_cast<float>(u32(what));
        if (!std::isfinite(v)) throw FormatError(at, std::string("non-finite ") + what);
        return v;
    }

    void need(std::uint64_t n, const char* what) const {
        if (remaining() < n) throw FormatError(pos_, std::string("truncated ") + what);
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::uint64_t pos_ = 0;
};

} // namespace abow::detail
