#ifndef MSEMBED_BINARY_IO_HPP
#define MSEMBED_BINARY_IO_HPP

// Little-endian byte encoding shared by the checkpoint, embedding and dataset
// containers, plus whole-file read/write.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace msembed {

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
public:
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    void text(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }

    void u16(std::uint16_t v) { put_le(v); }
    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }
    void i32(std::int32_t v) { put_le(static_cast<std::uint32_t>(v)); }
    void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }

    const Bytes& buffer() const noexcept { return out_; }
    Bytes take() { return std::move(out_); }

private:
    template <typename U>
    void put_le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    Bytes out_;
};

/// Bounds-checked cursor over a byte buffer. Every read past the end raises
/// FormatError carrying the offending offset.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    bool at_end() const noexcept { return pos_ == data_.size(); }

    std::span<const std::uint8_t> bytes(std::size_t n, std::string_view what) {
        need(n, what);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::string text(std::size_t n, std::string_view what) {
        auto s = bytes(n, what);
        return std::string(s.begin(), s.end());
    }

    std::uint16_t u16(std::string_view what) { return get_le<std::uint16_t>(what); }
    std::uint32_t u32(std::string_view what) { return get_le<std::uint32_t>(what); }
    std::uint64_t u64(std::string_view what) { return get_le<std::uint64_t>(what); }
    std::int32_t i32(std::string_view what) { return static_cast<std::int32_t>(get_le<std::uint32_t>(what)); }
    float f32(std::string_view what) { return std::bit_cast<float>(get_le<std::uint32_t>(what)); }
    double f64(std::string_view what) { return std::bit_cast<double>(get_le<std::uint64_t>(what)); }

    /// Big-endian u32, as used by IDX headers.
    std::uint32_t u32_be(std::string_view what) {
        need(4, what);
        std::uint32_t v = 0;
        for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | data_[pos_ + i];
        pos_ += 4;
        return v;
    }

    /// Checks the next bytes equal `magic`.
    void expect_magic(std::string_view magic) {
        const std::size_t at = pos_;
        if (text(magic.size(), "magic") != magic) throw FormatError("bad magic, expected \"" + std::string(magic) + "\"", static_cast<long long>(at));
    }

private:
    void need(std::size_t n, std::string_view what) const {
        if (n > remaining()) {
            throw FormatError("truncated input while reading " + std::string(what), static_cast<long long>(pos_));
        }
    }

    template <typename U>
    U get_le(std::string_view what) {
        need(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(data_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

inline Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    const Bytes b = read_file(path);
    return std::string(b.begin(), b.end());
}

/// Writes via a sibling temporary file and a rename, so readers never
/// observe a half-written file.
inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
        if (!out) throw IoError("write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace msembed

#endif  // MSEMBED_BINARY_IO_HPP
