#ifndef MSEMBED_DISTANCE_HPP
#define MSEMBED_DISTANCE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ops.hpp"
#include "tensor.hpp"

namespace msembed {

/**
 * Minkowski-family metric (sum_i |a_i - b_i|^k)^(1/k).
 *
 * k = 2 is Euclidean, k = 1 Manhattan; 0 < k < 1 gives a fractional
 * "distance" that is not a metric (the triangle inequality fails) but still
 * ranks neighbours, and keeps more contrast in high dimensions.
 */
struct DistanceMetric {
    double k = 0.25;

    static DistanceMetric euclidean() { return {2.0}; }
    static DistanceMetric manhattan() { return {1.0}; }
    static DistanceMetric fractional(double k = 0.25) { return {k}; }

    void validate() const {
        if (!(k > 0.0) || !std::isfinite(k)) throw ConfigError("metric exponent k must be positive, got " + std::to_string(k));
    }

    friend bool operator==(const DistanceMetric&, const DistanceMetric&) = default;
};

/// Coordinate differences below this magnitude get a zero partial derivative.
inline constexpr double kCoincidenceGuard = 1e-12;

/// sum_i |a_i - b_i|^k, the monotone pre-image of lk_distance. Accumulates in 64-bit.
template <typename A, typename B>
double lk_power_sum(std::span<const A> a, std::span<const B> b, const DistanceMetric& metric) {
    if (a.size() != b.size()) {
        throw DimensionError("distance operands differ in length: " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
    double s = 0.0;
    if (metric.k == 2.0) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
            s += d * d;
        }
    } else if (metric.k == 1.0) {
        for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    } else {
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
            if (d > 0.0) s += std::pow(d, metric.k);
        }
    }
    return s;
}

template <typename A, typename B>
double lk_distance(std::span<const A> a, std::span<const B> b, const DistanceMetric& metric) {
    metric.validate();
    const double s = lk_power_sum(a, b, metric);
    if (metric.k == 2.0) return std::sqrt(s);
    if (metric.k == 1.0) return s;
    return s > 0.0 ? std::pow(s, 1.0 / metric.k) : 0.0;
}

template <typename T>
double lk_distance(const Tensor<T>& a, const Tensor<T>& b, const DistanceMetric& metric) {
    return lk_distance(a.values(), b.values(), metric);
}

/**
 * Gradient of lk_distance with respect to `a` (the gradient with respect to
 * `b` is its negation): D^(1-k) |d_i|^(k-1) sign(d_i).
 *
 * Coordinates with |d_i| < kCoincidenceGuard contribute 0, and the whole
 * gradient is 0 when D == 0.
 */
template <typename A, typename B>
std::vector<double> lk_distance_gradient(std::span<const A> a, std::span<const B> b, const DistanceMetric& metric) {
    const double dist = lk_distance(a, b, metric);
    std::vector<double> grad(a.size(), 0.0);
    if (dist == 0.0) return grad;
    const double outer = std::pow(dist, 1.0 - metric.k);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        const double ad = std::abs(d);
        if (ad < kCoincidenceGuard) continue;
        const double sign = d > 0.0 ? 1.0 : -1.0;
        if (metric.k == 2.0) {
            grad[i] = d / dist;
        } else if (metric.k == 1.0) {
            grad[i] = sign;
        } else {
            grad[i] = outer * std::pow(ad, metric.k - 1.0) * sign;
        }
    }
    return grad;
}

/// Symmetric N x N matrix of lk distances between the rows of `points`.
template <typename T>
Tensor<double> pairwise_distances(const Tensor<T>& points, const DistanceMetric& metric) {
    require_rank(points, 2, "pairwise_distances points");
    metric.validate();
    const std::size_t n = points.dim(0);
    Tensor<double> out({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = lk_distance(points.row(i), points.row(j), metric);
            out(i, j) = d;
            out(j, i) = d;
        }
    }
    return out;
}

/**
 * (Dmax - Dmin) / Dmin over the distances from `reference` to each row of
 * `points`. Exact-zero distances are excluded from Dmin.
 */
template <typename T>
double relative_contrast(const Tensor<T>& points, std::span<const T> reference, const DistanceMetric& metric) {
    require_rank(points, 2, "relative_contrast points");
    if (points.dim(0) < 2) throw DataError("relative contrast needs at least two points");
    double dmin = std::numeric_limits<double>::infinity();
    double dmax = 0.0;
    for (std::size_t i = 0; i < points.dim(0); ++i) {
        const double d = lk_distance(points.row(i), reference, metric);
        dmax = std::max(dmax, d);
        if (d > 0.0) dmin = std::min(dmin, d);
    }
    if (dmax == 0.0) throw DataError("relative contrast is undefined: all distances are zero");
    return (dmax - dmin) / dmin;
}

// ---------------------------------------------------------------------------
// exact nearest neighbours

struct Neighbor {
    std::string id;
    double distance = 0.0;

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Strict ordering used for every ranked result: distance, then id.
inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
}

/**
 * Brute-force top-k search. `records` is any range of objects exposing
 * `id` (string) and `vector` (Tensor). Returns min(k, size) neighbours
 * ordered by ascending distance, ties by ascending id.
 */
template <typename Q, typename Records>
std::vector<Neighbor> knn(std::span<const Q> query, const Records& records, std::size_t k, const DistanceMetric& metric) {
    metric.validate();
    if (k < 1) throw ConfigError("k must be at least 1");
    if (std::empty(records)) throw DataError("cannot search an empty index");
    std::vector<Neighbor> all;
    all.reserve(std::size(records));
    for (const auto& r : records) all.push_back({r.id, lk_distance(query, r.vector.values(), metric)});
    const std::size_t keep = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), neighbor_less);
    all.resize(keep);
    return all;
}

// ---------------------------------------------------------------------------
// distance concentration diagnostic

struct ContrastRow {
    std::size_t dimension = 0;
    double k = 0.0;
    double contrast_mean = 0.0;
    double contrast_std = 0.0;
    std::vector<double> trials;
};

/// Relative contrast of `n_points` uniform points in [0,1]^dim seen from a
/// uniform reference point, for each exponent in `ks` on the same sample.
inline std::vector<double> contrast_trial(std::size_t dim, std::span<const double> ks, std::size_t n_points, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Tensor<double> points({n_points, dim});
    for (double& v : points.values()) v = unit(rng);
    std::vector<double> reference(dim);
    for (double& v : reference) v = unit(rng);
    std::vector<double> out;
    for (double k : ks) out.push_back(relative_contrast(points, std::span<const double>(reference), DistanceMetric{k}));
    return out;
}

/**
 * Runs `trials` seeded trials per dimension and reports mean and sample
 * standard deviation of the relative contrast for every (dimension, k).
 * Within a trial all exponents see the same points, and the generator for
 * (dimension, trial) is seeded from {seed, dimension, trial}.
 */
inline std::vector<ContrastRow> contrast_table(std::span<const std::size_t> dims, std::span<const double> ks,
                                               std::size_t n_points, std::size_t trials, std::uint64_t seed) {
    if (n_points < 2 || trials < 1) throw ConfigError("contrast table needs >= 2 points and >= 1 trial");
    for (double k : ks) DistanceMetric{k}.validate();
    std::vector<ContrastRow> rows;
    for (std::size_t dim : dims) {
        if (dim < 1) throw ConfigError("dimension must be positive");
        std::vector<ContrastRow> block(ks.size());
        for (std::size_t t = 0; t < trials; ++t) {
            std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                              static_cast<std::uint32_t>(dim), static_cast<std::uint32_t>(t)};
            Rng rng(seq);
            const auto values = contrast_trial(dim, ks, n_points, rng);
            for (std::size_t j = 0; j < ks.size(); ++j) block[j].trials.push_back(values[j]);
        }
        for (std::size_t j = 0; j < ks.size(); ++j) {
            ContrastRow& row = block[j];
            row.dimension = dim;
            row.k = ks[j];
            double sum = 0.0;
            for (double v : row.trials) sum += v;
            row.contrast_mean = sum / static_cast<double>(trials);
            double ss = 0.0;
            for (double v : row.trials) ss += (v - row.contrast_mean) * (v - row.contrast_mean);
            row.contrast_std = trials > 1 ? std::sqrt(ss / static_cast<double>(trials - 1)) : 0.0;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace msembed

#endif  // MSEMBED_DISTANCE_HPP
