#ifndef MSEMBED_INDEX_HPP
#define MSEMBED_INDEX_HPP

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "binary_io.hpp"
#include "distance.hpp"
#include "tensor.hpp"

namespace msembed {

struct EmbeddingRecord {
    std::string id;
    int class_label = 0;
    Tensor<float> vector;  // [D]

    friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

/// Immutable exact-search index. The metric is part of the index so that
/// queries always use the metric the index was built with.
class EmbeddingIndex {
public:
    EmbeddingIndex(std::vector<EmbeddingRecord> records, DistanceMetric metric)
        : metric_(metric), records_(std::move(records)) {
        metric_.validate();
        if (records_.empty()) throw DataError("index needs at least one record");
        dim_ = records_.front().vector.size();
        std::unordered_set<std::string> ids;
        for (const auto& r : records_) {
            if (r.vector.rank() != 1 || r.vector.size() != dim_) {
                throw DimensionError("record '" + r.id + "' has shape " + shape_string(r.vector.shape()) +
                                     ", index dimension is " + std::to_string(dim_));
            }
            if (!ids.insert(r.id).second) throw DataError("duplicate record id '" + r.id + "'");
        }
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return records_.size(); }
    const DistanceMetric& metric() const noexcept { return metric_; }
    const std::vector<EmbeddingRecord>& records() const noexcept { return records_; }

    const EmbeddingRecord* find(const std::string& id) const {
        for (const auto& r : records_)
            if (r.id == id) return &r;
        return nullptr;
    }

    friend bool operator==(const EmbeddingIndex&, const EmbeddingIndex&) = default;

private:
    DistanceMetric metric_;
    std::size_t dim_ = 0;
    std::vector<EmbeddingRecord> records_;
};

inline EmbeddingIndex build_index(std::vector<EmbeddingRecord> records, const DistanceMetric& metric) {
    return EmbeddingIndex(std::move(records), metric);
}

/// Records from the rows of an N,D embedding matrix with parallel ids and labels.
inline std::vector<EmbeddingRecord> records_from_rows(const Tensor<float>& embeddings, std::span<const std::string> ids,
                                                      std::span<const int> labels) {
    require_rank(embeddings, 2, "embeddings");
    if (ids.size() != embeddings.dim(0) || labels.size() != embeddings.dim(0)) {
        throw DimensionError("ids/labels do not match the number of embedding rows");
    }
    std::vector<EmbeddingRecord> out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto row = embeddings.row(i);
        out.push_back({ids[i], labels[i], Tensor<float>({row.size()}, std::vector<float>(row.begin(), row.end()))});
    }
    return out;
}

/// Exact top-k, ordered by (distance, id).
template <typename Q>
std::vector<Neighbor> query_topk(const EmbeddingIndex& index, std::span<const Q> query, std::size_t k) {
    if (query.size() != index.dim()) {
        throw DimensionError("query has " + std::to_string(query.size()) + " dims, index has " + std::to_string(index.dim()));
    }
    return knn(query, index.records(), k, index.metric());
}

// ---------------------------------------------------------------------------
// embedding file

inline constexpr std::string_view kEmbeddingMagic = "EMBIDX01";
inline constexpr std::uint32_t kEmbeddingVersion = 1;

/**
 * Layout (little-endian): magic "EMBIDX01", u32 version, f64 metric exponent,
 * u32 dim, u64 count, then per record: u16 id length, UTF-8 id bytes,
 * i32 class label, dim float32 values.
 */
inline Bytes encode_embeddings(const EmbeddingIndex& index) {
    if (index.size() == 0) throw DataError("refusing to write an empty index");
    ByteWriter w;
    w.text(kEmbeddingMagic);
    w.u32(kEmbeddingVersion);
    w.f64(index.metric().k);
    w.u32(static_cast<std::uint32_t>(index.dim()));
    w.u64(index.size());
    for (const auto& r : index.records()) {
        if (r.id.size() > 0xffff) throw DataError("record id longer than 65535 bytes");
        w.u16(static_cast<std::uint16_t>(r.id.size()));
        w.text(r.id);
        w.i32(r.class_label);
        for (float v : r.vector.values()) w.f32(v);
    }
    return w.take();
}

inline EmbeddingIndex decode_embeddings(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic(kEmbeddingMagic);
    const std::size_t version_at = r.offset();
    if (const auto v = r.u32("version"); v != kEmbeddingVersion) {
        throw FormatError("unsupported embedding file version " + std::to_string(v), static_cast<long long>(version_at));
    }
    const std::size_t metric_at = r.offset();
    const DistanceMetric metric{r.f64("metric exponent")};
    if (!(metric.k > 0.0) || !std::isfinite(metric.k)) {
        throw FormatError("invalid metric exponent in embedding file", static_cast<long long>(metric_at));
    }
    const std::uint32_t dim = r.u32("dim");
    const std::uint64_t count = r.u64("count");
    if (dim == 0 || count == 0) throw FormatError("embedding file declares zero dim or count", static_cast<long long>(metric_at + 8));
    std::vector<EmbeddingRecord> records;
    for (std::uint64_t i = 0; i < count; ++i) {
        EmbeddingRecord rec;
        rec.id = r.text(r.u16("id length"), "id");
        rec.class_label = r.i32("class label");
        std::vector<float> v(dim);
        for (float& x : v) x = r.f32("vector");
        rec.vector = Tensor<float>({dim}, std::move(v));
        records.push_back(std::move(rec));
    }
    if (!r.at_end()) throw FormatError("trailing bytes after the last record", static_cast<long long>(r.offset()));
    try {
        return EmbeddingIndex(std::move(records), metric);
    } catch (const Error& e) {
        throw FormatError(std::string("invalid embedding file: ") + e.what());
    }
}

inline void write_embeddings(const std::filesystem::path& path, const EmbeddingIndex& index) {
    write_file(path, encode_embeddings(index));
}

inline EmbeddingIndex read_embeddings(const std::filesystem::path& path) { return decode_embeddings(read_file(path)); }

}  // namespace msembed

#endif  // MSEMBED_INDEX_HPP
