#ifndef MSEMBED_SAMPLING_HPP
#define MSEMBED_SAMPLING_HPP

// Training pair and triplet generation. Positives come from the nearest
// same-class neighbours under a cheap image similarity scorer; negatives mix
// in-class items (same class, outside the positive candidate set) and
// out-of-class items at a configured ratio.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "losses.hpp"
#include "net.hpp"

namespace msembed {

struct BissScorer {
    enum class Kind { intensity_histogram, color_histogram, embedding_model };

    Kind kind = Kind::intensity_histogram;
    std::size_t bins = 16;
    /// Required for embedding_model.
    std::shared_ptr<const Checkpoint> model;

    static BissScorer intensity(std::size_t bins = 16) { return {Kind::intensity_histogram, bins, nullptr}; }
    static BissScorer color(std::size_t bins = 16) { return {Kind::color_histogram, bins, nullptr}; }
    static BissScorer embedding(std::shared_ptr<const Checkpoint> model) {
        return {Kind::embedding_model, 0, std::move(model)};
    }

    void validate() const {
        if (kind != Kind::embedding_model && bins < 2) throw ConfigError("histogram scorers need at least 2 bins");
        if (kind == Kind::embedding_model && !model) throw ConfigError("embedding scorer needs a checkpoint");
    }
};

struct SamplerConfig {
    enum class Strategy { biss, random_baseline };

    std::size_t n_candidates = 100;
    double in_class_fraction = 0.3;
    /// Share of positive pairs that pair an item with an augmented view of itself.
    double self_pair_fraction = 0.1;
    std::uint64_t rng_seed = 0;
    Strategy strategy = Strategy::biss;

    void validate() const {
        if (n_candidates < 1) throw ConfigError("n_candidates must be at least 1");
        if (!(in_class_fraction >= 0.0 && in_class_fraction <= 1.0)) throw ConfigError("in_class_fraction must lie in [0, 1]");
        if (!(self_pair_fraction >= 0.0 && self_pair_fraction <= 1.0)) {
            throw ConfigError("self_pair_fraction must lie in [0, 1]");
        }
    }
};

/// Independent generator for sampling worker `worker` of a run seeded with `seed`.
inline Rng worker_rng(std::uint64_t seed, std::size_t worker) { return Rng(seed + worker); }

// ---------------------------------------------------------------------------
// scorers

/// Histogram bin counts of one [C,H,W] image. Intensity bins the channel
/// mean of each pixel; colour concatenates per-channel histograms. Counts are
/// kept as integers so that equal scores compare exactly equal. Values are
/// clamped to [0,1].
inline std::vector<double> histogram_features(const BissScorer& scorer, const Tensor<float>& image) {
    require_rank(image, 3, "scorer image");
    const std::size_t c = image.dim(0);
    const std::size_t plane = image.dim(1) * image.dim(2);
    const std::size_t bins = scorer.bins;
    auto bin_of = [bins](double v) {
        v = std::clamp(v, 0.0, 1.0);
        return std::min(static_cast<std::size_t>(v * static_cast<double>(bins)), bins - 1);
    };
    if (scorer.kind == BissScorer::Kind::intensity_histogram) {
        std::vector<double> h(bins, 0.0);
        for (std::size_t p = 0; p < plane; ++p) {
            double v = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) v += image[ch * plane + p];
            h[bin_of(v / static_cast<double>(c))] += 1.0;
        }
        return h;
    }
    std::vector<double> h(bins * c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) h[ch * bins + bin_of(image[ch * plane + p])] += 1.0;
    return h;
}

/// Features of every dataset item under `scorer`, in dataset order.
inline std::vector<std::vector<double>> scorer_features(const BissScorer& scorer, const Dataset& ds) {
    scorer.validate();
    std::vector<std::vector<double>> out;
    out.reserve(ds.size());
    if (scorer.kind == BissScorer::Kind::embedding_model) {
        const Tensor<float> e = embed_batched(*scorer.model, ds.stack_all());
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const auto r = e.row(i);
            out.emplace_back(r.begin(), r.end());
        }
        return out;
    }
    for (const auto& item : ds.items()) out.push_back(histogram_features(scorer, item.image));
    return out;
}

/// L1 between normalised histograms, Euclidean between embeddings. Lower is
/// more similar. Histogram counts are differenced exactly and normalised once.
inline double feature_distance(const BissScorer& scorer, std::span<const double> a, std::span<const double> b) {
    if (scorer.kind == BissScorer::Kind::embedding_model) return lk_distance(a, b, DistanceMetric::euclidean());
    if (a.size() != b.size()) throw DimensionError("histograms differ in length");
    double diff = 0.0, mass = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += std::abs(a[i] - b[i]);
        mass += a[i];
    }
    return mass > 0.0 ? diff / mass : 0.0;
}

inline double biss_score(const BissScorer& scorer, const Tensor<float>& a, const Tensor<float>& b) {
    scorer.validate();
    if (a.shape() != b.shape()) throw DimensionError("scored images differ in shape");
    if (scorer.kind == BissScorer::Kind::embedding_model) {
        const Shape s{1, a.dim(0), a.dim(1), a.dim(2)};
        const Tensor<float> ea = embed(*scorer.model, a.reshaped(s));
        const Tensor<float> eb = embed(*scorer.model, b.reshaped(s));
        return lk_distance(ea, eb, DistanceMetric::euclidean());
    }
    const auto ha = histogram_features(scorer, a);
    const auto hb = histogram_features(scorer, b);
    return feature_distance(scorer, ha, hb);
}

// ---------------------------------------------------------------------------
// sampler

struct NegativeDraw {
    std::string id;
    bool in_class = false;

    friend bool operator==(const NegativeDraw&, const NegativeDraw&) = default;
};

/**
 * Pair/triplet generator over one dataset. Positive candidate lists are
 * computed once per query and cached; they depend only on the dataset, the
 * scorers and the config, never on the generator.
 */
class PairSampler {
public:
    PairSampler(const Dataset& dataset, std::vector<BissScorer> scorers, SamplerConfig cfg)
        : ds_(dataset), scorers_(std::move(scorers)), cfg_(cfg) {
        cfg_.validate();
        if (ds_.empty()) throw DataError("cannot sample from an empty dataset");
        if (cfg_.strategy == SamplerConfig::Strategy::biss) {
            if (scorers_.empty()) throw ConfigError("biss strategy needs at least one scorer");
            for (const auto& s : scorers_) features_.push_back(scorer_features(s, ds_));
        }
        for (const auto& [label, members] : ds_.class_index()) {
            if (members.size() >= 2) positive_queries_.insert(positive_queries_.end(), members.begin(), members.end());
        }
        std::sort(positive_queries_.begin(), positive_queries_.end());
    }

    const SamplerConfig& config() const noexcept { return cfg_; }
    const Dataset& dataset() const noexcept { return ds_; }

    /**
     * Positions of up to n_candidates same-class items closest to the query
     * (ascending score, ties by ascending id), query excluded. With several
     * scorers the per-scorer lists are merged in scorer order without
     * duplicates. Under random_baseline every other same-class item is a
     * candidate.
     */
    const std::vector<std::size_t>& candidate_positions(std::size_t query) {
        if (auto it = cache_.find(query); it != cache_.end()) return it->second;
        const auto& members = ds_.class_members(ds_.item(query).label);
        if (members.size() < 2) {
            throw PoolError("query '" + ds_.item(query).id + "' is alone in its class; no positive candidates", 1);
        }
        std::vector<std::size_t> out;
        if (cfg_.strategy == SamplerConfig::Strategy::random_baseline) {
            for (std::size_t m : members)
                if (m != query) out.push_back(m);
        } else {
            std::set<std::size_t> seen;
            for (std::size_t s = 0; s < scorers_.size(); ++s) {
                std::vector<std::pair<double, std::size_t>> scored;
                for (std::size_t m : members) {
                    if (m == query) continue;
                    scored.emplace_back(feature_distance(scorers_[s], features_[s][query], features_[s][m]), m);
                }
                std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
                    if (a.first != b.first) return a.first < b.first;
                    return ds_.item(a.second).id < ds_.item(b.second).id;
                });
                const std::size_t keep = std::min(cfg_.n_candidates, scored.size());
                for (std::size_t i = 0; i < keep; ++i)
                    if (seen.insert(scored[i].second).second) out.push_back(scored[i].second);
            }
        }
        return cache_.emplace(query, std::move(out)).first->second;
    }

    std::vector<std::string> positive_candidates(const std::string& query_id) {
        std::vector<std::string> ids;
        for (std::size_t p : candidate_positions(ds_.index_of(query_id))) ids.push_back(ds_.item(p).id);
        return ids;
    }

    /// Same-class items that are neither the query nor positive candidates.
    std::vector<std::size_t> in_class_pool(std::size_t query) {
        const auto& members = ds_.class_members(ds_.item(query).label);
        std::vector<std::size_t> excluded;
        if (members.size() >= 2) excluded = candidate_positions(query);
        excluded.push_back(query);
        std::sort(excluded.begin(), excluded.end());
        std::vector<std::size_t> pool;
        for (std::size_t m : members)
            if (!std::binary_search(excluded.begin(), excluded.end(), m)) pool.push_back(m);
        return pool;
    }

    std::vector<std::size_t> out_of_class_pool(std::size_t query) const {
        const int label = ds_.item(query).label;
        std::vector<std::size_t> pool;
        for (const auto& [l, members] : ds_.class_index())
            if (l != label) pool.insert(pool.end(), members.begin(), members.end());
        std::sort(pool.begin(), pool.end());
        return pool;
    }

    /**
     * round(count * in_class_fraction) in-class negatives followed by the
     * remaining out-of-class negatives, each drawn uniformly without
     * replacement from its pool.
     */
    std::vector<NegativeDraw> sample_negatives(const std::string& query_id, std::size_t count, Rng& rng) {
        const std::size_t query = ds_.index_of(query_id);
        if (ds_.class_index().size() < 2) throw DataError("negative sampling needs at least two classes");
        const std::size_t n_in = in_class_count(count);
        const std::size_t n_out = count - n_in;
        const auto in_pool = n_in ? in_class_pool(query) : std::vector<std::size_t>{};
        const auto out_pool = out_of_class_pool(query);
        if (in_pool.size() < n_in) {
            throw PoolError("in-class pool of '" + query_id + "' has " + std::to_string(in_pool.size()) + " items, " +
                                std::to_string(n_in) + " requested",
                            n_in - in_pool.size());
        }
        if (out_pool.size() < n_out) {
            throw PoolError("out-of-class pool of '" + query_id + "' has " + std::to_string(out_pool.size()) +
                                " items, " + std::to_string(n_out) + " requested",
                            n_out - out_pool.size());
        }
        std::vector<NegativeDraw> out;
        for (std::size_t p : draw_without_replacement(in_pool, n_in, rng)) out.push_back({ds_.item(p).id, true});
        for (std::size_t p : draw_without_replacement(out_pool, n_out, rng)) out.push_back({ds_.item(p).id, false});
        return out;
    }

    /**
     * round(batch_size * pos_fraction) positive pairs, then negative pairs.
     * Each pair draws its own uniform query. Negatives split into in-class
     * and out-of-class slots by in_class_fraction over the whole batch
     * (random_baseline: all out-of-class). When no item has a same-class
     * item outside its candidate set, in-class slots are filled out-of-class
     * and counted in in_class_substitutions().
     */
    std::vector<PairSample> make_pair_batch(std::size_t batch_size, double pos_fraction, Rng& rng) {
        if (batch_size < 2) throw ConfigError("pair batch size must be at least 2");
        if (!(pos_fraction >= 0.0 && pos_fraction <= 1.0)) throw ConfigError("pos_fraction must lie in [0, 1]");
        const std::size_t n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(batch_size) * pos_fraction));
        const std::size_t n_neg = batch_size - n_pos;
        std::vector<PairSample> out;
        out.reserve(batch_size);
        if (n_pos && positive_queries_.empty()) throw PoolError("no class has two items; positives impossible", n_pos);
        std::bernoulli_distribution self_pair(cfg_.self_pair_fraction);
        for (std::size_t i = 0; i < n_pos; ++i) {
            const std::size_t q = positive_queries_[uniform_index(positive_queries_.size(), rng)];
            const std::string& qid = ds_.item(q).id;
            if (self_pair(rng)) {
                out.push_back({qid, qid, PairLabel::similar, true});
                continue;
            }
            const auto& cands = candidate_positions(q);
            out.push_back({qid, ds_.item(cands[uniform_index(cands.size(), rng)]).id, PairLabel::similar, false});
        }
        if (n_neg && ds_.class_index().size() < 2) throw DataError("negative pairs need at least two classes");
        const std::size_t n_in = batch_in_class_slots(n_neg);
        for (std::size_t i = 0; i < n_neg; ++i) {
            const std::size_t q = draw_negative_partner_query(i < n_in, rng);
            const auto pool = i < n_in ? in_class_pool(q) : out_of_class_pool(q);
            out.push_back({ds_.item(q).id, ds_.item(pool[uniform_index(pool.size(), rng)]).id, PairLabel::dissimilar, false});
        }
        return out;
    }

    /// Anchor uniform, positive uniform from its candidates, negative from the
    /// in-class pool for round(batch_size * in_class_fraction) triplets and
    /// out-of-class otherwise. In-class slots fall back as in make_pair_batch.
    std::vector<TripletSample> make_triplet_batch(std::size_t batch_size, Rng& rng) {
        if (batch_size < 1) throw ConfigError("triplet batch size must be positive");
        if (positive_queries_.empty()) throw PoolError("no class has two items; triplets impossible", batch_size);
        if (ds_.class_index().size() < 2) throw DataError("triplets need at least two classes");
        const std::size_t n_in = batch_in_class_slots(batch_size);
        std::vector<TripletSample> out;
        for (std::size_t i = 0; i < batch_size; ++i) {
            const std::size_t a = i < n_in ? draw_negative_partner_query(true, rng)
                                           : positive_queries_[uniform_index(positive_queries_.size(), rng)];
            const auto& cands = candidate_positions(a);
            const std::size_t p = cands[uniform_index(cands.size(), rng)];
            const auto pool = i < n_in ? in_class_pool(a) : out_of_class_pool(a);
            const std::size_t n = pool[uniform_index(pool.size(), rng)];
            out.push_back({ds_.item(a).id, ds_.item(p).id, ds_.item(n).id});
        }
        return out;
    }

    /// In-class negative slots that had to be filled out-of-class so far.
    std::size_t in_class_substitutions() const noexcept { return substitutions_; }

private:
    std::size_t batch_in_class_slots(std::size_t count) {
        const std::size_t n = in_class_count(count);
        if (n == 0 || !in_class_queries().empty()) return n;
        substitutions_ += n;
        return 0;
    }

    const std::vector<std::size_t>& in_class_queries() {
        if (!in_class_queries_) {
            in_class_queries_.emplace();
            for (std::size_t q : positive_queries_)
                if (!in_class_pool(q).empty()) in_class_queries_->push_back(q);
        }
        return *in_class_queries_;
    }

    std::size_t in_class_count(std::size_t count) const {
        if (cfg_.strategy == SamplerConfig::Strategy::random_baseline) return 0;
        return static_cast<std::size_t>(std::llround(static_cast<double>(count) * cfg_.in_class_fraction));
    }

    static std::size_t uniform_index(std::size_t n, Rng& rng) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }

    static std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t> pool, std::size_t n, Rng& rng) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = i + uniform_index(pool.size() - i, rng);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(n);
        return pool;
    }

    // Uniform query; for in-class slots it must have a non-empty in-class pool.
    std::size_t draw_negative_partner_query(bool in_class, Rng& rng) {
        if (!in_class) return uniform_index(ds_.size(), rng);
        const auto& queries = in_class_queries();
        if (queries.empty()) throw PoolError("no query has same-class items outside its positive candidates", 1);
        return queries[uniform_index(queries.size(), rng)];
    }

    const Dataset& ds_;
    std::vector<BissScorer> scorers_;
    SamplerConfig cfg_;
    std::vector<std::vector<std::vector<double>>> features_;
    std::vector<std::size_t> positive_queries_;
    std::optional<std::vector<std::size_t>> in_class_queries_;
    std::map<std::size_t, std::vector<std::size_t>> cache_;
    std::size_t substitutions_ = 0;
};

// Free-function forms for one-off use; each builds a throwaway sampler.

inline std::vector<std::string> positive_candidates(const BissScorer& scorer, const std::string& query_id,
                                                    const Dataset& dataset, const SamplerConfig& cfg) {
    return PairSampler(dataset, {scorer}, cfg).positive_candidates(query_id);
}

inline std::vector<NegativeDraw> sample_negatives(const std::string& query_id, const Dataset& dataset,
                                                  const BissScorer& scorer, const SamplerConfig& cfg, std::size_t count,
                                                  Rng& rng) {
    return PairSampler(dataset, {scorer}, cfg).sample_negatives(query_id, count, rng);
}

inline std::vector<PairSample> make_pair_batch(const Dataset& dataset, const BissScorer& scorer, const SamplerConfig& cfg,
                                               std::size_t batch_size, double pos_fraction, Rng& rng) {
    return PairSampler(dataset, {scorer}, cfg).make_pair_batch(batch_size, pos_fraction, rng);
}

inline std::vector<TripletSample> make_triplet_batch(const Dataset& dataset, const BissScorer& scorer,
                                                     const SamplerConfig& cfg, std::size_t batch_size, Rng& rng) {
    return PairSampler(dataset, {scorer}, cfg).make_triplet_batch(batch_size, rng);
}

}  // namespace msembed

#endif  // MSEMBED_SAMPLING_HPP
