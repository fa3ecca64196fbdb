#ifndef MSEMBED_TRAIN_HPP
#define MSEMBED_TRAIN_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "data_io.hpp"
#include "dataset.hpp"
#include "index.hpp"
#include "losses.hpp"
#include "net.hpp"
#include "sampling.hpp"

namespace msembed {

// ---------------------------------------------------------------------------
// RMSProp

struct RmsPropConfig {
    double learning_rate = 1e-4;
    double rho = 0.9;
    double epsilon = 1e-8;
    double weight_decay = 0.0;

    void validate() const {
        if (!(learning_rate >= 0.0 && std::isfinite(learning_rate))) throw ConfigError("learning_rate must be finite and non-negative");
        if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("rho must lie in (0, 1)");
        if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be non-negative");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    }
};

/// Running mean of squared gradients, one tensor per parameter.
template <typename T>
using RmsPropState = ParameterSet<T>;

/**
 * state <- rho*state + (1-rho)*g^2;  param <- param - lr*g/sqrt(state + eps),
 * with g = grad + weight_decay*param. Elements with g == 0 are left unchanged.
 * Non-finite gradients abort the step before anything is modified.
 */
template <typename T>
void rmsprop_step(ParameterSet<T>& params, const ParameterSet<T>& grads, RmsPropState<T>& state, const RmsPropConfig& cfg) {
    for (const auto& [name, g] : grads) {
        const auto p = params.find(name);
        if (p == params.end() || p->second.shape() != g.shape()) {
            throw DimensionError("gradient '" + name + "' does not match any parameter");
        }
        require_finite(g, "gradient '" + name + "'");
    }
    for (auto& [name, p] : params) {
        const auto git = grads.find(name);
        if (git == grads.end()) throw LookupError("no gradient for parameter '" + name + "'");
        const Tensor<T>& g = git->second;
        auto [sit, inserted] = state.try_emplace(name, p.shape());
        Tensor<T>& s = sit->second;
        if (s.shape() != p.shape()) throw DimensionError("optimizer state '" + name + "' has the wrong shape");
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g[i]) + cfg.weight_decay * static_cast<double>(p[i]);
            const double si = cfg.rho * static_cast<double>(s[i]) + (1.0 - cfg.rho) * gi * gi;
            s[i] = static_cast<T>(si);
            if (gi != 0.0) p[i] = static_cast<T>(static_cast<double>(p[i]) - cfg.learning_rate * gi / std::sqrt(si + cfg.epsilon));
        }
    }
}

// ---------------------------------------------------------------------------
// augmentation

enum class Augmentation { hflip, shift, rotate };

inline Tensor<float> hflip(const Tensor<float>& image) {
    require_rank(image, 3, "image");
    Tensor<float> out(image.shape());
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = image[(ch * h + y) * w + (w - 1 - x)];
    return out;
}

/// Translates by (dx, dy) pixels; vacated cells are zero.
inline Tensor<float> shift(const Tensor<float>& image, int dx, int dy) {
    require_rank(image, 3, "image");
    Tensor<float> out(image.shape());
    const long long c = static_cast<long long>(image.dim(0)), h = static_cast<long long>(image.dim(1)),
                    w = static_cast<long long>(image.dim(2));
    for (long long ch = 0; ch < c; ++ch)
        for (long long y = 0; y < h; ++y)
            for (long long x = 0; x < w; ++x) {
                const long long sy = y - dy, sx = x - dx;
                if (sy >= 0 && sy < h && sx >= 0 && sx < w) out[(ch * h + y) * w + x] = image[(ch * h + sy) * w + sx];
            }
    return out;
}

/// Rotates about the image centre with nearest-neighbour resampling;
/// samples falling outside the source are zero.
inline Tensor<float> rotate(const Tensor<float>& image, double degrees) {
    require_rank(image, 3, "image");
    Tensor<float> out(image.shape());
    const long long c = static_cast<long long>(image.dim(0)), h = static_cast<long long>(image.dim(1)),
                    w = static_cast<long long>(image.dim(2));
    const double rad = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
    for (long long y = 0; y < h; ++y)
        for (long long x = 0; x < w; ++x) {
            // Inverse mapping from output to source coordinates.
            const double ry = static_cast<double>(y) - cy, rx = static_cast<double>(x) - cx;
            const long long sx = std::llround(cs * rx + sn * ry + cx);
            const long long sy = std::llround(-sn * rx + cs * ry + cy);
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
            for (long long ch = 0; ch < c; ++ch) out[(ch * h + y) * w + x] = image[(ch * h + sy) * w + sx];
        }
    return out;
}

/// Applies each enabled transform with probability 0.5, in the order hflip,
/// shift (+-2 px), rotate (+-10 degrees).
inline Tensor<float> augment(const Tensor<float>& image, const std::set<Augmentation>& enabled, Rng& rng) {
    Tensor<float> out = image;
    std::bernoulli_distribution coin(0.5);
    if (enabled.count(Augmentation::hflip) && coin(rng)) out = hflip(out);
    if (enabled.count(Augmentation::shift) && coin(rng)) {
        std::uniform_int_distribution<int> offset(-2, 2);
        const int dx = offset(rng);
        const int dy = offset(rng);
        out = shift(out, dx, dy);
    }
    if (enabled.count(Augmentation::rotate) && coin(rng)) {
        out = rotate(out, std::uniform_real_distribution<double>(-10.0, 10.0)(rng));
    }
    return out;
}

// ---------------------------------------------------------------------------
// evaluation

/// Id-addressable embedding rows.
struct EmbeddingTable {
    std::unordered_map<std::string, std::size_t> rows;
    Tensor<float> vectors;

    std::span<const float> at(const std::string& id) const {
        const auto it = rows.find(id);
        if (it == rows.end()) throw LookupError("no embedding for id '" + id + "'");
        return vectors.row(it->second);
    }

    static EmbeddingTable from_index(const EmbeddingIndex& index) {
        EmbeddingTable t;
        std::vector<float> data;
        for (std::size_t i = 0; i < index.size(); ++i) {
            const auto& r = index.records()[i];
            t.rows.emplace(r.id, i);
            data.insert(data.end(), r.vector.values().begin(), r.vector.values().end());
        }
        t.vectors = Tensor<float>({index.size(), index.dim()}, std::move(data));
        return t;
    }

    /// Embeds the listed dataset items (inference mode).
    static EmbeddingTable from_dataset(const Checkpoint& ckpt, const Dataset& ds, const std::vector<std::string>& ids,
                                       std::size_t threads = 1) {
        EmbeddingTable t;
        std::vector<std::size_t> positions;
        for (const auto& id : ids) {
            if (t.rows.emplace(id, positions.size()).second) positions.push_back(ds.index_of(id));
        }
        if (positions.empty()) throw DataError("nothing to embed");
        t.vectors = embed_batched(ckpt, ds.stack(positions), 64, threads);
        return t;
    }
};

/// Fraction of triplets with D(a,p) < D(a,n); ties count as incorrect.
inline double triplet_accuracy(const EmbeddingTable& table, std::span<const TripletSample> triplets,
                               const DistanceMetric& metric) {
    if (triplets.empty()) throw DataError("triplet accuracy needs at least one triplet");
    std::size_t correct = 0;
    for (const auto& t : triplets) {
        const auto a = table.at(t.anchor_id);
        if (lk_distance(a, table.at(t.positive_id), metric) < lk_distance(a, table.at(t.negative_id), metric)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(triplets.size());
}

inline double triplet_accuracy(const Checkpoint& ckpt, std::span<const TripletSample> triplets, const Dataset& images,
                               const DistanceMetric& metric, std::size_t threads = 1) {
    if (triplets.empty()) throw DataError("triplet accuracy needs at least one triplet");
    std::vector<std::string> ids;
    for (const auto& t : triplets) ids.insert(ids.end(), {t.anchor_id, t.positive_id, t.negative_id});
    return triplet_accuracy(EmbeddingTable::from_dataset(ckpt, images, ids, threads), triplets, metric);
}

/**
 * Fraction of queries for which any ground-truth id appears in the catalog's
 * top-k. Query vectors come from `queries`; every ground-truth id must exist
 * in the catalog.
 */
inline double topk_recall(const EmbeddingTable& queries, std::span<const GroundTruthQuery> ground_truth,
                          const EmbeddingIndex& catalog, std::size_t k) {
    if (ground_truth.empty()) throw DataError("recall needs at least one query");
    std::set<std::string> catalog_ids;
    for (const auto& r : catalog.records()) catalog_ids.insert(r.id);
    for (const auto& q : ground_truth) {
        if (q.match_ids.empty()) throw DataError("query '" + q.query_id + "' has no ground-truth ids");
        for (const auto& m : q.match_ids) {
            if (!catalog_ids.count(m)) throw DataError("ground-truth id '" + m + "' is not in the catalog");
        }
    }
    std::size_t hits = 0;
    for (const auto& q : ground_truth) {
        const auto top = query_topk(catalog, queries.at(q.query_id), k);
        const bool hit = std::any_of(top.begin(), top.end(), [&](const Neighbor& n) {
            return std::find(q.match_ids.begin(), q.match_ids.end(), n.id) != q.match_ids.end();
        });
        hits += hit ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(ground_truth.size());
}

/// Evaluation triplets: anchor uniform over items with a classmate, positive a
/// different item of the same class, negative an item of another class.
inline std::vector<TripletSample> make_class_triplets(const Dataset& ds, std::size_t count, Rng& rng) {
    std::vector<std::size_t> anchors;
    for (const auto& [label, members] : ds.class_index())
        if (members.size() >= 2) anchors.insert(anchors.end(), members.begin(), members.end());
    std::sort(anchors.begin(), anchors.end());
    if (anchors.empty() || ds.class_index().size() < 2) throw DataError("class triplets need two classes and a class with two items");
    auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
    std::vector<TripletSample> out;
    while (out.size() < count) {
        const std::size_t a = anchors[pick(anchors.size())];
        const auto& same = ds.class_members(ds.item(a).label);
        std::size_t p = same[pick(same.size())];
        if (p == a) continue;
        const std::size_t n = pick(ds.size());
        if (ds.item(n).label == ds.item(a).label) continue;
        out.push_back({ds.item(a).id, ds.item(p).id, ds.item(n).id});
    }
    return out;
}

/// Label-agnostic triplets of three distinct uniform items; any model scores
/// about 0.5 on these by symmetry.
inline std::vector<TripletSample> make_random_triplets(const Dataset& ds, std::size_t count, Rng& rng) {
    if (ds.size() < 3) throw DataError("random triplets need at least three items");
    std::uniform_int_distribution<std::size_t> pick(0, ds.size() - 1);
    std::vector<TripletSample> out;
    while (out.size() < count) {
        const std::size_t a = pick(rng), p = pick(rng), n = pick(rng);
        if (a == p || a == n || p == n) continue;
        out.push_back({ds.item(a).id, ds.item(p).id, ds.item(n).id});
    }
    return out;
}

// ---------------------------------------------------------------------------
// training loop

using LossConfig = std::variant<ContrastiveConfig, AngularConfig>;

struct TrainConfig {
    RmsPropConfig optimizer;
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    /// 0 means ceil(train size / batch size).
    std::size_t batches_per_epoch = 0;
    /// Learning rate multiplier applied after every epoch (1 = constant).
    double lr_decay = 1.0;
    LossConfig loss = ContrastiveConfig{};
    /// Metric inside the loss.
    DistanceMetric loss_metric = DistanceMetric::euclidean();
    /// Metric used to score validation triplets.
    DistanceMetric eval_metric = DistanceMetric::fractional();
    std::set<Augmentation> augmentation{Augmentation::hflip, Augmentation::shift};
    double pos_fraction = 0.5;
    std::size_t val_pairs = 256;
    std::size_t val_triplets = 500;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void validate() const {
        optimizer.validate();
        if (epochs < 1) throw ConfigError("epochs must be at least 1");
        if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
        if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
        if (!(pos_fraction >= 0.0 && pos_fraction <= 1.0)) throw ConfigError("pos_fraction must lie in [0, 1]");
        loss_metric.validate();
        eval_metric.validate();
        std::visit([](const auto& c) { c.validate(); }, loss);
    }
};

struct TrainLogRow {
    std::size_t epoch = 0;
    double mean_train_loss = 0.0;
    double validation_loss = 0.0;
    double triplet_accuracy = 0.0;
    double elapsed_seconds = 0.0;
};

struct TrainResult {
    /// Lowest validation loss seen (earliest on ties).
    Checkpoint best;
    /// Parameters after the last completed step.
    Checkpoint last;
    std::vector<TrainLogRow> log;
    /// Set when a non-finite loss or gradient stopped training early.
    bool diverged = false;
    std::string divergence_reason;
    /// In-class negative slots filled out-of-class for lack of a pool.
    std::size_t in_class_substitutions = 0;
};

namespace detail {

// One training or validation batch laid out as consecutive image rows.
struct BatchRows {
    std::vector<std::size_t> positions;
    RowLookup lookup;
    std::vector<PairSample> pairs;
    std::vector<TripletSample> triplets;
};

// Renames sample ids to row keys so that the same item can occupy several
// rows (each with its own augmentation).
inline BatchRows layout_pairs(const Dataset& ds, const std::vector<PairSample>& pairs) {
    BatchRows b;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const std::string q = "q" + std::to_string(i), c = "c" + std::to_string(i);
        b.lookup.emplace(q, b.positions.size());
        b.positions.push_back(ds.index_of(pairs[i].query_id));
        b.lookup.emplace(c, b.positions.size());
        b.positions.push_back(ds.index_of(pairs[i].candidate_id));
        b.pairs.push_back({q, c, pairs[i].label, pairs[i].augmented_self});
    }
    return b;
}

inline BatchRows layout_triplets(const Dataset& ds, const std::vector<TripletSample>& triplets) {
    BatchRows b;
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        const std::string a = "a" + std::to_string(i), p = "p" + std::to_string(i), n = "n" + std::to_string(i);
        for (const auto& [key, id] : {std::pair{a, triplets[i].anchor_id}, std::pair{p, triplets[i].positive_id},
                                      std::pair{n, triplets[i].negative_id}}) {
            b.lookup.emplace(key, b.positions.size());
            b.positions.push_back(ds.index_of(id));
        }
        b.triplets.push_back({a, p, n});
    }
    return b;
}

inline Tensor<float> batch_images(const Dataset& ds, const BatchRows& rows, const std::set<Augmentation>* aug, Rng* rng) {
    if (!aug || aug->empty()) return ds.stack(rows.positions);
    const ImageShape s = ds.image_shape();
    std::vector<float> data;
    data.reserve(rows.positions.size() * s[0] * s[1] * s[2]);
    for (std::size_t p : rows.positions) {
        const Tensor<float> img = augment(ds.item(p).image, *aug, *rng);
        data.insert(data.end(), img.values().begin(), img.values().end());
    }
    return Tensor<float>({rows.positions.size(), s[0], s[1], s[2]}, std::move(data));
}

inline BatchLoss rows_loss(const Tensor<float>& emb, const BatchRows& rows, const LossConfig& loss,
                           const DistanceMetric& metric) {
    if (const auto* c = std::get_if<ContrastiveConfig>(&loss)) {
        return batch_loss<float>(emb, rows.lookup, std::span<const PairSample>(rows.pairs), *c, metric);
    }
    return batch_loss<float>(emb, rows.lookup, std::span<const TripletSample>(rows.triplets), std::get<AngularConfig>(loss),
                             metric);
}

inline BatchRows sample_rows(PairSampler& sampler, const LossConfig& loss, std::size_t batch_size, double pos_fraction,
                             Rng& rng) {
    if (std::holds_alternative<ContrastiveConfig>(loss)) {
        return layout_pairs(sampler.dataset(), sampler.make_pair_batch(batch_size, pos_fraction, rng));
    }
    return layout_triplets(sampler.dataset(), sampler.make_triplet_batch(batch_size, rng));
}

}  // namespace detail

/**
 * Siamese training. Each step samples a batch, embeds every arm with the one
 * shared parameter set in a single forward pass (so per-parameter gradients
 * are the sums over both arms), and applies one RMSProp update. After each
 * epoch the model is scored on fixed validation pairs/triplets. The run is a
 * deterministic function of its inputs and seeds.
 */
inline TrainResult train(const Dataset& train_set, const Dataset& val_set, const MultiScaleNetConfig& net_cfg,
                         const SamplerConfig& sampler_cfg, const TrainConfig& cfg,
                         std::vector<BissScorer> scorers = {BissScorer::intensity()},
                         std::optional<Checkpoint> initial = std::nullopt) {
    cfg.validate();
    validate(net_cfg);
    if (train_set.class_index().size() < 2) throw DataError("training data needs at least two classes");
    if (val_set.class_index().size() < 2) throw DataError("validation data needs at least two classes");
    if (train_set.image_shape() != net_cfg.input_shape || val_set.image_shape() != net_cfg.input_shape) {
        throw DimensionError("dataset image shape does not match the network input shape");
    }
    const auto start = std::chrono::steady_clock::now();

    Checkpoint ckpt = initial ? *initial : build_network(net_cfg, cfg.seed);
    if (!(ckpt.config == net_cfg)) throw ConfigError("initial checkpoint was built from a different network config");
    ckpt.rng_seed = cfg.seed;
    RmsPropState<float> state;
    RmsPropConfig opt = cfg.optimizer;

    PairSampler sampler(train_set, scorers, sampler_cfg);
    Rng rng(cfg.seed ^ 0x5eed5eedULL);

    // Fixed validation material, identical for every epoch.
    PairSampler val_sampler(val_set, scorers, sampler_cfg);
    Rng val_rng(cfg.seed + 1);
    const detail::BatchRows val_rows = detail::sample_rows(val_sampler, cfg.loss, std::max<std::size_t>(cfg.val_pairs, 2),
                                                           cfg.pos_fraction, val_rng);
    const Tensor<float> val_images = detail::batch_images(val_set, val_rows, nullptr, nullptr);
    const auto val_triplets = make_class_triplets(val_set, std::max<std::size_t>(cfg.val_triplets, 1), val_rng);

    const std::size_t batches = cfg.batches_per_epoch
                                    ? cfg.batches_per_epoch
                                    : (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
    TrainResult result{ckpt, ckpt, {}, false, {}};
    std::optional<double> best_val;

    for (std::size_t epoch = 1; epoch <= cfg.epochs && !result.diverged; ++epoch) {
        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t b = 0; b < batches; ++b) {
            const auto rows = detail::sample_rows(sampler, cfg.loss, cfg.batch_size, cfg.pos_fraction, rng);
            const Tensor<float> images = detail::batch_images(train_set, rows, &cfg.augmentation, &rng);
            try {
                const auto fwd = forward(ckpt.parameters, ckpt.config, images, true, &rng);
                const BatchLoss bl = detail::rows_loss(fwd.embedding, rows, cfg.loss, cfg.loss_metric);
                if (!std::isfinite(bl.mean_loss)) throw NumericError("training loss is not finite");
                const auto grads = backward(ckpt.parameters, ckpt.config, fwd.cache, bl.grad.cast<float>());
                rmsprop_step(ckpt.parameters, grads, state, opt);
                loss_sum += bl.mean_loss;
                ++steps;
            } catch (const NumericError& e) {
                result.diverged = true;
                result.divergence_reason = e.what();
                break;
            }
            result.last = ckpt;
        }
        if (result.diverged) break;
        ckpt.epoch = epoch;
        result.last = ckpt;

        const Tensor<float> val_emb = embed_batched(ckpt, val_images, 64, cfg.threads);
        const BatchLoss vl = detail::rows_loss(val_emb, val_rows, cfg.loss, cfg.loss_metric);
        TrainLogRow row;
        row.epoch = epoch;
        row.mean_train_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
        row.validation_loss = vl.mean_loss;
        row.triplet_accuracy = triplet_accuracy(ckpt, val_triplets, val_set, cfg.eval_metric, cfg.threads);
        row.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.log.push_back(row);
        if (!std::isfinite(vl.mean_loss)) {
            result.diverged = true;
            result.divergence_reason = "validation loss is not finite";
            break;
        }
        if (!best_val || vl.mean_loss < *best_val) {
            best_val = vl.mean_loss;
            result.best = ckpt;
        }
        opt.learning_rate *= cfg.lr_decay;
    }
    if (!best_val) result.best = result.last;
    result.in_class_substitutions = sampler.in_class_substitutions();
    return result;
}

/// Deterministic k-fold split: positions shuffled with `seed`, fold f takes
/// every k-th shuffled position as its held-out part.
inline std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> kfold_splits(std::size_t n,
                                                                                                std::size_t folds,
                                                                                                std::uint64_t seed) {
    if (folds < 2 || folds > n) throw ConfigError("fold count must lie in [2, item count]");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> out(folds);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < folds; ++f) (i % folds == f ? out[f].second : out[f].first).push_back(order[i]);
    }
    return out;
}

}  // namespace msembed

#endif  // MSEMBED_TRAIN_HPP
