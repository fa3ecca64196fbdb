#ifndef MSEMBED_LOSSES_HPP
#define MSEMBED_LOSSES_HPP

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "distance.hpp"
#include "tensor.hpp"

namespace msembed {

/// Y = 0 marks a similar (positive) pair, Y = 1 a dissimilar (negative) one.
enum class PairLabel : int { similar = 0, dissimilar = 1 };

struct PairSample {
    std::string query_id;
    std::string candidate_id;
    PairLabel label = PairLabel::similar;
    /// Positive pair made of two augmented views of the same item.
    bool augmented_self = false;

    friend bool operator==(const PairSample&, const PairSample&) = default;
};

struct TripletSample {
    std::string anchor_id;
    std::string positive_id;
    std::string negative_id;

    void validate() const {
        if (anchor_id == positive_id || anchor_id == negative_id || positive_id == negative_id) {
            throw DataError("triplet ids must be pairwise distinct: " + anchor_id + "," + positive_id + "," +
                            negative_id);
        }
    }

    friend bool operator==(const TripletSample&, const TripletSample&) = default;
};

struct ContrastiveConfig {
    enum class Hinge { as_written, squared_hinge };

    double margin = 1.0;
    /// as_written: 1/2 max(0, m - D^2); squared_hinge: 1/2 max(0, m - D)^2.
    Hinge hinge = Hinge::as_written;

    void validate() const {
        if (!(margin > 0.0)) throw ConfigError("contrastive margin must be positive");
    }
};

struct AngularConfig {
    enum class Formula { negative_to_center, as_written };

    double alpha_degrees = 45.0;
    /// negative_to_center compares D(a,p)^2 with 4 tan^2(alpha) D(n,c)^2;
    /// as_written uses D(a,c)^2 in place of D(n,c)^2 and ignores the negative.
    Formula formula = Formula::negative_to_center;

    void validate() const {
        if (!(alpha_degrees > 0.0 && alpha_degrees < 90.0)) throw ConfigError("angular alpha must lie in (0, 90) degrees");
    }

    double tan_squared() const {
        const double t = std::tan(alpha_degrees * std::numbers::pi / 180.0);
        return t * t;
    }
};

struct PairLoss {
    double loss = 0.0;
    std::vector<double> grad_query;
    std::vector<double> grad_candidate;
};

struct TripletLoss {
    double loss = 0.0;
    std::vector<double> grad_anchor;
    std::vector<double> grad_positive;
    std::vector<double> grad_negative;
};

/// Contrastive loss of one pair and its gradient with respect to both embeddings.
/// Outside the active hinge region the gradient is exactly zero.
template <typename T>
PairLoss contrastive_loss(std::span<const T> xq, std::span<const T> xc, PairLabel label, const ContrastiveConfig& cfg,
                          const DistanceMetric& metric) {
    cfg.validate();
    const double dist = lk_distance(xq, xc, metric);
    PairLoss out{0.0, std::vector<double>(xq.size(), 0.0), std::vector<double>(xc.size(), 0.0)};
    // dL/dD for the active branch.
    double dloss_ddist = 0.0;
    if (label == PairLabel::similar) {
        out.loss = 0.5 * dist * dist;
        dloss_ddist = dist;
    } else if (cfg.hinge == ContrastiveConfig::Hinge::as_written) {
        const double h = cfg.margin - dist * dist;
        if (h > 0.0) {
            out.loss = 0.5 * h;
            dloss_ddist = -dist;
        }
    } else {
        const double h = cfg.margin - dist;
        if (h > 0.0) {
            out.loss = 0.5 * h * h;
            dloss_ddist = -h;
        }
    }
    if (dloss_ddist != 0.0) {
        const auto g = lk_distance_gradient(xq, xc, metric);
        for (std::size_t i = 0; i < g.size(); ++i) {
            out.grad_query[i] = dloss_ddist * g[i];
            out.grad_candidate[i] = -dloss_ddist * g[i];
        }
    }
    return out;
}

/// Angular loss of one triplet. The centre x_c = (x_a + x_p)/2 passes its
/// gradient half to the anchor and half to the positive.
template <typename T>
TripletLoss angular_loss(std::span<const T> xa, std::span<const T> xp, std::span<const T> xn, const AngularConfig& cfg,
                         const DistanceMetric& metric) {
    cfg.validate();
    if (xa.size() != xp.size() || xa.size() != xn.size()) throw DimensionError("triplet embeddings differ in length");
    const std::size_t d = xa.size();
    const double t2x4 = 4.0 * cfg.tan_squared();
    std::vector<double> center(d);
    for (std::size_t i = 0; i < d; ++i) center[i] = 0.5 * (static_cast<double>(xa[i]) + static_cast<double>(xp[i]));
    const std::span<const double> c(center);

    TripletLoss out{0.0, std::vector<double>(d, 0.0), std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    const double d_ap = lk_distance(xa, xp, metric);
    const bool to_center = cfg.formula == AngularConfig::Formula::negative_to_center;
    const double d_other = to_center ? lk_distance(xn, c, metric) : lk_distance(xa, c, metric);
    const double value = d_ap * d_ap - t2x4 * d_other * d_other;
    if (!(value > 0.0)) return out;
    out.loss = value;

    const auto g_ap = lk_distance_gradient(xa, xp, metric);
    for (std::size_t i = 0; i < d; ++i) {
        out.grad_anchor[i] += 2.0 * d_ap * g_ap[i];
        out.grad_positive[i] -= 2.0 * d_ap * g_ap[i];
    }
    if (to_center) {
        // d/dxn of -t D(n,c)^2, and the opposite sign split over a and p via c.
        const auto g_nc = lk_distance_gradient(xn, c, metric);
        for (std::size_t i = 0; i < d; ++i) {
            const double v = t2x4 * 2.0 * d_other * g_nc[i];
            out.grad_negative[i] -= v;
            out.grad_anchor[i] += 0.5 * v;
            out.grad_positive[i] += 0.5 * v;
        }
    } else {
        // D(a,c) with c depending on a: total derivative is g/2 on a, -g/2 on p.
        const auto g_ac = lk_distance_gradient(xa, c, metric);
        for (std::size_t i = 0; i < d; ++i) {
            const double v = t2x4 * 2.0 * d_other * g_ac[i];
            out.grad_anchor[i] -= 0.5 * v;
            out.grad_positive[i] += 0.5 * v;
        }
    }
    return out;
}

struct BatchLoss {
    double mean_loss = 0.0;
    /// Gradient of the mean loss with respect to every embedding row.
    Tensor<double> grad;
};

using RowLookup = std::unordered_map<std::string, std::size_t>;

namespace detail {

inline std::size_t resolve_row(const RowLookup& rows, const std::string& id) {
    const auto it = rows.find(id);
    if (it == rows.end()) throw LookupError("sample id '" + id + "' has no embedding row");
    return it->second;
}

template <typename T>
void accumulate(Tensor<double>& grad, std::size_t row, const std::vector<double>& g) {
    auto r = grad.row(row);
    for (std::size_t i = 0; i < g.size(); ++i) r[i] += g[i];
}

inline void scale_mean(BatchLoss& out, double total, std::size_t count) {
    const double inv = 1.0 / static_cast<double>(count);
    out.mean_loss = total * inv;
    for (double& v : out.grad.values()) v *= inv;
}

}  // namespace detail

/// Mean contrastive loss over `samples`; gradients accumulate in sample order.
template <typename T>
BatchLoss batch_loss(const Tensor<T>& embeddings, const RowLookup& rows, std::span<const PairSample> samples,
                     const ContrastiveConfig& cfg, const DistanceMetric& metric) {
    require_rank(embeddings, 2, "batch embeddings");
    if (samples.empty()) throw DataError("empty batch");
    BatchLoss out{0.0, Tensor<double>(embeddings.shape())};
    double total = 0.0;
    for (const auto& s : samples) {
        const std::size_t q = detail::resolve_row(rows, s.query_id);
        const std::size_t c = detail::resolve_row(rows, s.candidate_id);
        const auto r = contrastive_loss(embeddings.row(q), embeddings.row(c), s.label, cfg, metric);
        total += r.loss;
        detail::accumulate<T>(out.grad, q, r.grad_query);
        detail::accumulate<T>(out.grad, c, r.grad_candidate);
    }
    detail::scale_mean(out, total, samples.size());
    return out;
}

/// Mean angular loss over `samples`; gradients accumulate in sample order.
template <typename T>
BatchLoss batch_loss(const Tensor<T>& embeddings, const RowLookup& rows, std::span<const TripletSample> samples,
                     const AngularConfig& cfg, const DistanceMetric& metric) {
    require_rank(embeddings, 2, "batch embeddings");
    if (samples.empty()) throw DataError("empty batch");
    BatchLoss out{0.0, Tensor<double>(embeddings.shape())};
    double total = 0.0;
    for (const auto& s : samples) {
        const std::size_t a = detail::resolve_row(rows, s.anchor_id);
        const std::size_t p = detail::resolve_row(rows, s.positive_id);
        const std::size_t n = detail::resolve_row(rows, s.negative_id);
        const auto r = angular_loss(embeddings.row(a), embeddings.row(p), embeddings.row(n), cfg, metric);
        total += r.loss;
        detail::accumulate<T>(out.grad, a, r.grad_anchor);
        detail::accumulate<T>(out.grad, p, r.grad_positive);
        detail::accumulate<T>(out.grad, n, r.grad_negative);
    }
    detail::scale_mean(out, total, samples.size());
    return out;
}

}  // namespace msembed

#endif  // MSEMBED_LOSSES_HPP
