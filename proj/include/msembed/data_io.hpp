#ifndef MSEMBED_DATA_IO_HPP
#define MSEMBED_DATA_IO_HPP

// Readers for the public dataset formats (IDX as used by MNIST and
// Fashion-MNIST, the CIFAR-10 binary batches, comma-separated triplet lists)
// and the internal dataset container.
//
// IDX headers are big-endian; every artifact-internal format is little-endian.

#include <zlib.h>

#include <cstdint>
#include <filesystem>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "binary_io.hpp"
#include "dataset.hpp"
#include "losses.hpp"

namespace msembed {

inline bool is_gzip(std::span<const std::uint8_t> bytes) {
    return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

inline Bytes gunzip(std::span<const std::uint8_t> bytes) {
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw FormatError("cannot initialise gzip decoder");
    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    Bytes out;
    std::uint8_t buf[1 << 16];
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = buf;
        zs.avail_out = sizeof(buf);
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            const long long at = static_cast<long long>(zs.total_in);
            inflateEnd(&zs);
            throw FormatError("corrupt or truncated gzip stream", at);
        }
        out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
        if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            throw FormatError("truncated gzip stream", static_cast<long long>(bytes.size()));
        }
    }
    inflateEnd(&zs);
    return out;
}

/// Decompresses `bytes` when they start with the gzip magic, else copies them.
inline Bytes maybe_gunzip(std::span<const std::uint8_t> bytes) {
    return is_gzip(bytes) ? gunzip(bytes) : Bytes(bytes.begin(), bytes.end());
}

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/**
 * Parses an IDX image file (u8, 3 dims) and its IDX label file. Pixels are
 * scaled by exactly 1/255; item ids are `id_prefix` + zero-padded position.
 * Gzip-compressed inputs are accepted.
 */
inline Dataset parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes,
                         const std::string& id_prefix = "") {
    const Bytes images_raw = maybe_gunzip(image_bytes);
    const Bytes labels_raw = maybe_gunzip(label_bytes);
    ByteReader ir(images_raw);
    ByteReader lr(labels_raw);
    if (const auto m = ir.u32_be("image magic"); m != kIdxImageMagic) {
        throw FormatError("image file magic is 0x" + [&] {
            std::ostringstream os;
            os << std::hex << m;
            return os.str();
        }() + ", expected 0x00000803", 0);
    }
    if (lr.u32_be("label magic") != kIdxLabelMagic) throw FormatError("label file magic mismatch, expected 0x00000801", 0);
    const std::uint32_t count = ir.u32_be("image count");
    const std::uint32_t rows = ir.u32_be("row count");
    const std::uint32_t cols = ir.u32_be("column count");
    const std::uint32_t label_count = lr.u32_be("label count");
    if (label_count != count) {
        throw FormatError("label count " + std::to_string(label_count) + " differs from image count " +
                              std::to_string(count),
                          4);
    }
    if (count == 0 || rows == 0 || cols == 0) throw FormatError("IDX file holds no images", 4);
    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    if (ir.remaining() != count * pixels) {
        throw FormatError("image payload is " + std::to_string(ir.remaining()) + " bytes, header implies " +
                              std::to_string(count * pixels),
                          static_cast<long long>(ir.offset() + std::min(ir.remaining(), count * pixels)));
    }
    if (lr.remaining() != count) {
        throw FormatError("label payload is " + std::to_string(lr.remaining()) + " bytes, header implies " +
                              std::to_string(count),
                          static_cast<long long>(lr.offset() + std::min<std::size_t>(lr.remaining(), count)));
    }
    Dataset ds(ImageShape{1, rows, cols});
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto px = ir.bytes(pixels, "pixels");
        std::vector<float> values(pixels);
        for (std::size_t p = 0; p < pixels; ++p) values[p] = static_cast<float>(px[p]) / 255.0f;
        const int label = lr.bytes(1, "label")[0];
        ds.add({make_item_id(id_prefix, i), Tensor<float>({1, rows, cols}, std::move(values)), label});
    }
    return ds;
}

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// Parses CIFAR-10 binary batch records: 1 label byte then 3072 pixel bytes,
/// channel-planar R, G, B, each 32x32.
inline Dataset parse_cifar10_bin(std::span<const std::uint8_t> batch_bytes, const std::string& id_prefix = "",
                                 std::size_t first_index = 0) {
    if (batch_bytes.empty()) throw FormatError("empty CIFAR-10 payload", 0);
    if (batch_bytes.size() % kCifarRecordBytes != 0) {
        throw FormatError("CIFAR-10 payload of " + std::to_string(batch_bytes.size()) +
                              " bytes is not a multiple of 3073",
                          static_cast<long long>(batch_bytes.size() - batch_bytes.size() % kCifarRecordBytes));
    }
    const std::size_t count = batch_bytes.size() / kCifarRecordBytes;
    Dataset ds(ImageShape{3, 32, 32});
    for (std::size_t i = 0; i < count; ++i) {
        const auto rec = batch_bytes.subspan(i * kCifarRecordBytes, kCifarRecordBytes);
        std::vector<float> values(3072);
        for (std::size_t p = 0; p < 3072; ++p) values[p] = static_cast<float>(rec[1 + p]) / 255.0f;
        ds.add({make_item_id(id_prefix, first_index + i), Tensor<float>({3, 32, 32}, std::move(values)), rec[0]});
    }
    return ds;
}

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

/// Splits one comma-separated line into trimmed fields.
inline std::vector<std::string> split_fields(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

/// Calls `fn(line_number, fields)` for every non-blank, non-comment line.
template <typename Fn>
void for_each_record(std::string_view text, Fn&& fn) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        ++line_no;
        const std::string t = trim(line);
        if (!t.empty() && t[0] != '#') fn(line_no, split_fields(t));
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
}

}  // namespace detail

/// Parses "anchor,positive,negative" lines; blank lines and lines starting
/// with '#' are skipped.
inline std::vector<TripletSample> parse_triplet_list(std::string_view text) {
    std::vector<TripletSample> out;
    detail::for_each_record(text, [&](std::size_t line_no, const std::vector<std::string>& f) {
        if (f.size() != 3 || f[0].empty() || f[1].empty() || f[2].empty()) {
            throw FormatError("line " + std::to_string(line_no) + ": expected anchor_id,positive_id,negative_id");
        }
        out.push_back({f[0], f[1], f[2]});
    });
    return out;
}

/// One retrieval query and the catalog ids that count as a hit.
struct GroundTruthQuery {
    std::string query_id;
    std::vector<std::string> match_ids;
};

/// Parses "query_id,match_id[,match_id...]" lines.
inline std::vector<GroundTruthQuery> parse_ground_truth_list(std::string_view text) {
    std::vector<GroundTruthQuery> out;
    detail::for_each_record(text, [&](std::size_t line_no, const std::vector<std::string>& f) {
        if (f.size() < 2 || std::any_of(f.begin(), f.end(), [](const std::string& s) { return s.empty(); })) {
            throw FormatError("line " + std::to_string(line_no) + ": expected query_id,match_id[,match_id...]");
        }
        out.push_back({f[0], std::vector<std::string>(f.begin() + 1, f.end())});
    });
    return out;
}

// ---------------------------------------------------------------------------
// internal dataset container

inline constexpr std::string_view kDatasetMagic = "DSETV001";
inline constexpr std::uint32_t kDatasetVersion = 1;

/**
 * Layout (little-endian): magic "DSETV001", u32 version, u64 count,
 * u32 C, H, W, then per item: u16 id length, id bytes, i32 label,
 * C*H*W float32 pixels.
 */
inline Bytes encode_dataset(const Dataset& ds) {
    if (ds.empty()) throw DataError("refusing to write an empty dataset");
    ByteWriter w;
    w.text(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.u64(ds.size());
    for (std::size_t d : ds.image_shape()) w.u32(static_cast<std::uint32_t>(d));
    for (const auto& item : ds.items()) {
        if (item.id.size() > 0xffff) throw DataError("item id longer than 65535 bytes");
        w.u16(static_cast<std::uint16_t>(item.id.size()));
        w.text(item.id);
        w.i32(item.label);
        for (float v : item.image.values()) w.f32(v);
    }
    return w.take();
}

inline Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic(kDatasetMagic);
    const std::size_t version_at = r.offset();
    if (const auto v = r.u32("version"); v != kDatasetVersion) {
        throw FormatError("unsupported dataset version " + std::to_string(v), static_cast<long long>(version_at));
    }
    const std::uint64_t count = r.u64("count");
    const std::size_t shape_at = r.offset();
    const ImageShape shape{r.u32("channels"), r.u32("height"), r.u32("width")};
    if (count == 0) throw FormatError("dataset container holds no items", static_cast<long long>(version_at + 4));
    if (shape[0] == 0 || shape[1] == 0 || shape[2] == 0) {
        throw FormatError("dataset shape header has a zero dimension", static_cast<long long>(shape_at));
    }
    const std::size_t pixels = shape[0] * shape[1] * shape[2];
    // Smallest possible record: empty id.
    if (r.remaining() / (2 + 4 + 4 * pixels) < count) {
        throw FormatError("payload of " + std::to_string(r.remaining()) + " bytes cannot hold " + std::to_string(count) +
                              " items of shape [" + std::to_string(shape[0]) + "," + std::to_string(shape[1]) + "," +
                              std::to_string(shape[2]) + "]",
                          static_cast<long long>(shape_at));
    }
    Dataset ds(shape);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::size_t at = r.offset();
        std::string id = r.text(r.u16("id length"), "id");
        const int label = r.i32("label");
        std::vector<float> values(pixels);
        for (float& v : values) v = r.f32("pixels");
        try {
            ds.add({std::move(id), Tensor<float>({shape[0], shape[1], shape[2]}, std::move(values)), label});
        } catch (const DataError& e) {
            throw FormatError(e.what(), static_cast<long long>(at));
        }
    }
    if (!r.at_end()) {
        throw FormatError("payload length disagrees with the shape header: " + std::to_string(r.remaining()) +
                              " trailing bytes",
                          static_cast<long long>(r.offset()));
    }
    return ds;
}

inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) { write_file(path, encode_dataset(ds)); }

inline Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

}  // namespace msembed

#endif  // MSEMBED_DATA_IO_HPP
