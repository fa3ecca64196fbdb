#ifndef MSEMBED_DATASET_HPP
#define MSEMBED_DATASET_HPP

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "net.hpp"
#include "tensor.hpp"

namespace msembed {

struct DatasetItem {
    std::string id;
    Tensor<float> image;  // [C,H,W]
    int label = 0;

    friend bool operator==(const DatasetItem&, const DatasetItem&) = default;
};

/// Labelled images of one shape with unique ids and a per-class index.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(ImageShape shape) : shape_(shape) {}

    void add(DatasetItem item) {
        if (item.image.shape() != Shape{shape_[0], shape_[1], shape_[2]}) {
            throw DimensionError("item '" + item.id + "' has shape " + shape_string(item.image.shape()) +
                                 ", dataset expects [" + std::to_string(shape_[0]) + "," + std::to_string(shape_[1]) +
                                 "," + std::to_string(shape_[2]) + "]");
        }
        if (by_id_.count(item.id)) throw DataError("duplicate item id '" + item.id + "'");
        by_id_.emplace(item.id, items_.size());
        classes_[item.label].push_back(items_.size());
        items_.push_back(std::move(item));
    }

    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }
    const ImageShape& image_shape() const noexcept { return shape_; }
    const std::vector<DatasetItem>& items() const noexcept { return items_; }
    const DatasetItem& item(std::size_t i) const { return items_.at(i); }

    std::optional<std::size_t> find(const std::string& id) const {
        const auto it = by_id_.find(id);
        if (it == by_id_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t index_of(const std::string& id) const {
        const auto i = find(id);
        if (!i) throw LookupError("unknown item id '" + id + "'");
        return *i;
    }

    const DatasetItem& at(const std::string& id) const { return items_[index_of(id)]; }

    /// Class label to item positions, each list in insertion order.
    const std::map<int, std::vector<std::size_t>>& class_index() const noexcept { return classes_; }

    const std::vector<std::size_t>& class_members(int label) const {
        static const std::vector<std::size_t> none;
        const auto it = classes_.find(label);
        return it == classes_.end() ? none : it->second;
    }

    /// Stacks the selected images into an N,C,H,W batch.
    Tensor<float> stack(std::span<const std::size_t> positions) const {
        if (positions.empty()) throw DataError("cannot stack an empty selection");
        const std::size_t per = shape_[0] * shape_[1] * shape_[2];
        std::vector<float> data;
        data.reserve(positions.size() * per);
        for (std::size_t p : positions) {
            const auto v = items_.at(p).image.values();
            data.insert(data.end(), v.begin(), v.end());
        }
        return Tensor<float>({positions.size(), shape_[0], shape_[1], shape_[2]}, std::move(data));
    }

    Tensor<float> stack_all() const {
        std::vector<std::size_t> all(items_.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return stack(all);
    }

    /// Sub-dataset holding the given positions, in the given order.
    Dataset subset(std::span<const std::size_t> positions) const {
        Dataset out(shape_);
        for (std::size_t p : positions) out.add(items_.at(p));
        return out;
    }

    friend bool operator==(const Dataset& a, const Dataset& b) { return a.shape_ == b.shape_ && a.items_ == b.items_; }

private:
    ImageShape shape_{1, 1, 1};
    std::vector<DatasetItem> items_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::map<int, std::vector<std::size_t>> classes_;
};

/// `prefix` followed by `index` zero-padded to at least `width` digits, so
/// lexicographic id order matches numeric order.
inline std::string make_item_id(const std::string& prefix, std::size_t index, std::size_t width = 6) {
    std::string digits = std::to_string(index);
    if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
    return prefix + digits;
}

}  // namespace msembed

#endif  // MSEMBED_DATASET_HPP
