#ifndef MSEMBED_TENSOR_HPP
#define MSEMBED_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace msembed {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/**
 * Dense row-major n-dimensional array.
 *
 * Image batches use the N,C,H,W layout everywhere; matrices are N,D.
 * `T` is `float` on training paths and `double` on gradient-check paths.
 */
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
        check_shape();
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (data_.size() != shape_size(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
        }
    }

    /// Rank-1 tensor from a literal list of values.
    static Tensor vector(std::initializer_list<T> values) {
        return Tensor({values.size()}, std::vector<T>(values));
    }

    /// Rank-2 tensor from nested literal rows.
    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
        const std::size_t n = rows.size();
        const std::size_t d = n ? rows.begin()->size() : 0;
        std::vector<T> data;
        data.reserve(n * d);
        for (const auto& r : rows) {
            if (r.size() != d) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), r.begin(), r.end());
        }
        return Tensor({n, d}, std::move(data));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> values() & noexcept { return data_; }
    std::span<const T> values() const& noexcept { return data_; }
    // A view into a temporary would dangle.
    std::span<const T> values() && = delete;
    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
    const T& operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * shape_[1] + j]; }

    T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    /// Row `i` of the tensor viewed as [dim(0), size()/dim(0)].
    std::span<T> row(std::size_t i) & {
        const std::size_t stride = data_.size() / shape_[0];
        return std::span<T>(data_).subspan(i * stride, stride);
    }
    std::span<const T> row(std::size_t i) const& {
        const std::size_t stride = data_.size() / shape_[0];
        return std::span<const T>(data_).subspan(i * stride, stride);
    }
    std::span<const T> row(std::size_t i) && = delete;

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size()) {
            throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_shape() const {
        for (std::size_t d : shape_) {
            if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

/// Throws NumericError naming `what` when `t` holds NaN or Inf.
template <typename T>
void require_finite(const Tensor<T>& t, const std::string& what) {
    if (!t.all_finite()) throw NumericError(what + " contains non-finite values");
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const std::string& what) {
    if (t.rank() != rank) {
        throw DimensionError(what + " must have rank " + std::to_string(rank) + ", got shape " +
                             shape_string(t.shape()));
    }
}

}  // namespace msembed

#endif  // MSEMBED_TENSOR_HPP
